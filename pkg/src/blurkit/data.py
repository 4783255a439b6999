"""Dataset loading, splitting, flip augmentation and fixed-size preprocessing.

Directory layouts:

* ``cuhk`` -- ``root/image/*`` + ``root/gt/*``, pairs matched by filename stem.
  Motion-blurred samples are recognized by a filename prefix (default
  ``motion``) or an optional sidecar list of ids.
* ``dut``  -- ``root/{train,test}/{images,gt}/``, all defocus.

Masks are single-channel 8-bit files binarized at >= 128; set ``invert_mask``
if a dataset paints the *sharp* region white, so that label 1 always means
"blurred pixel". Getting polarity wrong silently inverts every metric.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, ShapeError

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff"}


@dataclass
class BlurSample:
    """One image with its binary blur mask (1 = blurred pixel)."""

    id: str
    image: np.ndarray           # HxWx3 uint8
    mask: np.ndarray            # HxW uint8 in {0, 1}
    blur_kind: str = "unknown"  # defocus | motion | unknown

    def __post_init__(self):
        if self.image.shape[:2] != self.mask.shape:
            raise ShapeError(
                f"sample {self.id!r}: image {self.image.shape[:2]} and mask "
                f"{self.mask.shape} dimensions differ"
            )
        bad = set(np.unique(self.mask)) - {0, 1}
        if bad:
            raise ShapeError(f"sample {self.id!r}: mask values outside {{0,1}}: {bad}")


@dataclass
class DatasetSplit:
    train: list
    test: list
    seed: int
    ratio_preserved: bool

    def __post_init__(self):
        train_ids = {s.id for s in self.train}
        test_ids = {s.id for s in self.test}
        if train_ids & test_ids:
            raise ConfigError(f"split leaks ids across partitions: {train_ids & test_ids}")


def _list_images(directory: Path) -> dict:
    return {
        p.stem: p
        for p in sorted(directory.iterdir())
        if p.suffix.lower() in IMAGE_EXTENSIONS
    }


def _read_mask(path: Path, invert: bool) -> np.ndarray:
    raw = np.asarray(Image.open(path).convert("L"), dtype=np.uint8)
    if invert:
        raw = 255 - raw
    return (raw >= 128).astype(np.uint8)


def _load_pairs(image_dir: Path, gt_dir: Path, kind_of, invert_mask: bool) -> list:
    if not image_dir.is_dir() or not gt_dir.is_dir():
        raise IOError(f"expected directories {image_dir} and {gt_dir}")
    images = _list_images(image_dir)
    masks = _list_images(gt_dir)
    matched = sorted(set(images) & set(masks))
    unmatched = sorted(set(images) ^ set(masks))
    if unmatched:
        log.warning("%d unmatched files under %s: %s",
                    len(unmatched), image_dir.parent, ", ".join(unmatched))
    log.info("%s: %d matched pairs, %d unmatched", image_dir.parent, len(matched),
             len(unmatched))
    samples = []
    for stem in matched:
        image = np.asarray(Image.open(images[stem]).convert("RGB"), dtype=np.uint8)
        mask = _read_mask(masks[stem], invert_mask)
        samples.append(BlurSample(stem, image, mask, kind_of(stem)))
    return samples


def load_dataset(root, layout: str = "cuhk", invert_mask: bool = False,
                 motion_prefix: str = "motion", motion_list=None,
                 subset=None) -> list:
    """Load every matched (image, mask) pair under ``root``, sorted by id.

    ``subset`` restricts a ``dut`` tree to its ``train`` or ``test`` half;
    ``motion_list`` is an optional text file of motion-blurred ids that
    overrides prefix matching for ``cuhk``.
    """
    root = Path(root)
    if layout == "cuhk":
        if motion_list is not None:
            motion_ids = {line.strip() for line in Path(motion_list).read_text().split()
                          if line.strip()}
            kind_of = lambda stem: "motion" if stem in motion_ids else "defocus"
        else:
            kind_of = lambda stem: "motion" if stem.startswith(motion_prefix) else "defocus"
        return _load_pairs(root / "image", root / "gt", kind_of, invert_mask)
    if layout == "dut":
        subsets = [subset] if subset else ["train", "test"]
        samples = []
        for part in subsets:
            samples += _load_pairs(root / part / "images", root / part / "gt",
                                   lambda stem: "defocus", invert_mask)
        return sorted(samples, key=lambda s: s.id)
    raise ConfigError(f"layout must be 'cuhk' or 'dut', got {layout!r}")


def split_cuhk(samples: list, train_n: int, seed: int) -> DatasetSplit:
    """Stratified random split preserving the motion:defocus ratio.

    Each blur kind contributes round(train_n * kind_count / total) samples to
    the training partition (drift from rounding is absorbed by the largest
    stratum), so both partitions keep the source composition within one
    sample per stratum. Deterministic for a fixed seed.
    """
    if train_n >= len(samples) or train_n < 1:
        raise ConfigError(
            f"train_n must be in [1, {len(samples) - 1}], got {train_n}"
        )
    rng = np.random.default_rng(seed)
    strata = {}
    for s in sorted(samples, key=lambda s: s.id):
        strata.setdefault(s.blur_kind, []).append(s)

    total = len(samples)
    kinds = sorted(strata, key=lambda k: (-len(strata[k]), k))
    quota = {k: round(train_n * len(strata[k]) / total) for k in kinds}
    quota[kinds[0]] += train_n - sum(quota.values())

    train, test = [], []
    for kind in kinds:
        members = strata[kind]
        order = rng.permutation(len(members))
        take = quota[kind]
        if not 0 <= take <= len(members):
            raise ConfigError(f"stratum {kind!r} too small for quota {take}")
        train += [members[i] for i in order[:take]]
        test += [members[i] for i in order[take:]]
    train.sort(key=lambda s: s.id)
    test.sort(key=lambda s: s.id)
    return DatasetSplit(train=train, test=test, seed=seed, ratio_preserved=True)


def _flip(sample: BlurSample, horizontal: bool, vertical: bool, suffix: str) -> BlurSample:
    img, mask = sample.image, sample.mask
    if horizontal:
        img, mask = img[:, ::-1], mask[:, ::-1]
    if vertical:
        img, mask = img[::-1], mask[::-1]
    return BlurSample(sample.id + suffix, np.ascontiguousarray(img),
                      np.ascontiguousarray(mask), sample.blur_kind)


def augment(samples: list, policy: str = "hflip_vflip") -> list:
    """Enlarge a sample list with mirrored copies (x2 or x4), masks included."""
    if policy == "hflip":
        variants = [("_hf", True, False)]
    elif policy == "hflip_vflip":
        variants = [("_hf", True, False), ("_vf", False, True), ("_hvf", True, True)]
    elif policy == "none":
        variants = []
    else:
        raise ConfigError(f"augment policy must be hflip|hflip_vflip|none, got {policy!r}")
    out = list(samples)
    for suffix, h, v in variants:
        out += [_flip(s, h, v, suffix) for s in samples]
    return out


def _nearest_indices(n_in: int, n_out: int) -> np.ndarray:
    """Source index per output pixel: nearest to (i + 0.5) * n_in/n_out - 0.5.

    Exact integer arithmetic; half-way ties round toward the nearer image
    edge, which keeps resizing mirror-symmetric (a tie exactly at the image
    center has no symmetric resolution and rounds down).
    """
    j = np.arange(n_out, dtype=np.int64)
    num = (2 * j + 1) * n_in - n_out  # ideal position = num / (2 * n_out)
    den = 2 * n_out
    half_up = (2 * num + den) // (2 * den)
    half_down = -((-(2 * num - den)) // (2 * den))
    src = np.where(2 * num <= den * (n_in - 1), half_down, half_up)
    return np.clip(src, 0, n_in - 1)


def resize_mask_nearest(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Center-aligned nearest-neighbour resize; binary in, binary out."""
    rows = _nearest_indices(mask.shape[0], out_h)
    cols = _nearest_indices(mask.shape[1], out_w)
    return mask[rows[:, None], cols[None, :]]


def preprocess(sample: BlurSample, size: int):
    """Resize to size x size and normalize: bilinear image in [0,1] (channel
    first), nearest-neighbour mask (stays binary)."""
    if size < 16:
        raise ConfigError(f"preprocess size must be >= 16, got {size}")
    h, w = sample.image.shape[:2]
    if h < 2 or w < 2:
        raise ShapeError(f"sample {sample.id!r}: degenerate source dims {h}x{w}")
    resized = Image.fromarray(sample.image).resize((size, size), Image.BILINEAR)
    image = np.asarray(resized, dtype=np.float32).transpose(2, 0, 1) / 255.0
    mask = resize_mask_nearest(sample.mask, size, size)
    return image, mask


def preprocess_many(samples: list, size: int, workers: int = 0,
                    deterministic_order: bool = True):
    """Preprocess a batch of samples into stacked arrays (N x 3 x S x S float32,
    N x S x S int64) plus the id order used."""
    if deterministic_order:
        samples = sorted(samples, key=lambda s: s.id)
    if workers and workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda s: preprocess(s, size), samples))
    else:
        results = [preprocess(s, size) for s in samples]
    images = np.stack([img for img, _ in results]) if results else \
        np.zeros((0, 3, size, size), dtype=np.float32)
    masks = np.stack([m for _, m in results]).astype(np.int64) if results else \
        np.zeros((0, size, size), dtype=np.int64)
    return images, masks, [s.id for s in samples]


def write_manifest(split: DatasetSplit, out_dir):
    """Write plain-text id lists (train.txt / test.txt) so splits are auditable."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", split.train), ("test", split.test)):
        path = out_dir / f"{name}.txt"
        path.write_text("".join(s.id + "\n" for s in part))
    return out_dir
