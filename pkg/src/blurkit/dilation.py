"""Dilated-convolution kernel geometry and a brute-force convolution oracle.

A dilated kernel is a regular kernel whose taps are spaced ``rate`` pixels
apart, so a 3x3 kernel at rate 2 covers a 5x5 window with 9 parameters.
Everything here is plain numpy in double precision; it is the correctness
reference the network code is tested against, not a training path.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class Kernel2D:
    """A 2-D convolution kernel: odd-sized weight matrix plus a dilation rate."""

    weights: np.ndarray
    dilation_rate: int = 1

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise ConfigError(f"kernel weights must be 2-D, got ndim={w.ndim}")
        if w.shape[0] % 2 == 0 or w.shape[1] % 2 == 0 or w.size == 0:
            raise ConfigError(f"kernel sides must be odd and positive, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ConfigError("kernel weights must be finite")
        if int(self.dilation_rate) < 1:
            raise ConfigError(f"dilation_rate must be >= 1, got {self.dilation_rate}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "dilation_rate", int(self.dilation_rate))

    @property
    def height(self) -> int:
        return self.weights.shape[0]

    @property
    def width(self) -> int:
        return self.weights.shape[1]

    def span(self) -> tuple[int, int]:
        """Effective (height, width) footprint once taps are spread apart."""
        return (
            dilated_size(self.height, self.dilation_rate),
            dilated_size(self.width, self.dilation_rate),
        )


def dilation_factor(rate: int) -> int:
    """Number of zeros inserted between neighbouring taps at the given rate."""
    if rate < 1:
        raise ConfigError(f"dilation rate must be >= 1, got {rate}")
    return rate - 1


def dilated_size(origin_size: int, rate: int) -> int:
    """Side length of the expanded kernel: origin plus inserted zeros.

    ``origin_size + (origin_size - 1) * (rate - 1)``; odd in, odd out.
    """
    if origin_size < 1 or origin_size % 2 == 0:
        raise ConfigError(f"kernel size must be odd and positive, got {origin_size}")
    return origin_size + (origin_size - 1) * dilation_factor(rate)


def expand_kernel(origin: Kernel2D) -> Kernel2D:
    """Materialize a dilated kernel as a rate-1 kernel with zeros inserted.

    Origin weight (i, j), counted from the kernel center, lands at position
    (i*rate, j*rate) of the expanded kernel; every other entry is zero.
    Convolving with the result at rate 1 is identical to convolving with the
    origin kernel at its stated rate.
    """
    r = origin.dilation_rate
    if r == 1:
        return Kernel2D(origin.weights.copy(), 1)
    out_h = dilated_size(origin.height, r)
    out_w = dilated_size(origin.width, r)
    expanded = np.zeros((out_h, out_w), dtype=np.float64)
    expanded[::r, ::r] = origin.weights
    return Kernel2D(expanded, 1)


def conv2d_reference(image: np.ndarray, kernel: Kernel2D, stride: int = 1,
                     padding: str = "same") -> np.ndarray:
    """Direct-summation cross-correlation honoring the kernel's dilation rate.

    Accepts an HxW or HxWxC image; a C-channel image is convolved per channel
    with the same kernel. Taps are read at spacing ``dilation_rate``, products
    are accumulated one scalar at a time in float64. Deliberately slow.
    """
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    if padding not in ("same", "valid"):
        raise ConfigError(f"padding must be 'same' or 'valid', got {padding!r}")
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    if img.ndim != 3:
        raise ShapeError(f"image must be HxW or HxWxC, got shape {img.shape}")

    r = kernel.dilation_rate
    span_h, span_w = kernel.span()
    h, w, channels = img.shape
    if padding == "same":
        pad_h, pad_w = (span_h - 1) // 2, (span_w - 1) // 2
        img = np.pad(img, ((pad_h, pad_h), (pad_w, pad_w), (0, 0)))
        h, w = img.shape[0], img.shape[1]
    elif h < span_h or w < span_w:
        raise ShapeError(
            f"image {h}x{w} smaller than effective kernel {span_h}x{span_w} "
            "under valid padding"
        )

    out_h = (h - span_h) // stride + 1
    out_w = (w - span_w) // stride + 1
    out = np.zeros((out_h, out_w, channels), dtype=np.float64)
    weights = kernel.weights
    kh, kw = weights.shape
    for c in range(channels):
        plane = img[:, :, c]
        for oy in range(out_h):
            for ox in range(out_w):
                acc = 0.0
                top, left = oy * stride, ox * stride
                for ki in range(kh):
                    for kj in range(kw):
                        acc += weights[ki, kj] * plane[top + ki * r, left + kj * r]
                out[oy, ox, c] = acc
    return out[:, :, 0] if squeeze else out
