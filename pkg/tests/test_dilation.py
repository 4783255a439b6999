import numpy as np
import pytest
import torch
import torch.nn.functional as F

from blurkit.dilation import (Kernel2D, conv2d_reference, dilated_size,
                              dilation_factor, expand_kernel)
from blurkit.errors import ConfigError, ShapeError


@pytest.mark.parametrize("rate,expected", [(2, 1), (1, 0), (4, 3)])
def test_dilation_factor(rate, expected):
    assert dilation_factor(rate) == expected


def test_dilation_factor_rejects_bad_rate():
    with pytest.raises(ConfigError):
        dilation_factor(0)


@pytest.mark.parametrize("size,rate,expected", [(3, 2, 5), (5, 3, 13)])
def test_dilated_size(size, rate, expected):
    assert dilated_size(size, rate) == expected


@pytest.mark.parametrize("size", [1, 3, 5, 7, 9])
def test_dilated_size_rate_one_is_identity(size):
    assert dilated_size(size, 1) == size


def test_dilated_size_is_always_odd():
    for size in (1, 3, 5, 7):
        for rate in range(1, 6):
            assert dilated_size(size, rate) % 2 == 1


@pytest.mark.parametrize("size", [0, 2, 4, -3])
def test_dilated_size_rejects_bad_kernel(size):
    with pytest.raises(ConfigError):
        dilated_size(size, 2)


def test_kernel_invariants():
    with pytest.raises(ConfigError):
        Kernel2D(np.ones((2, 3)))
    with pytest.raises(ConfigError):
        Kernel2D(np.array([[1.0, np.inf, 0.0]] * 3).reshape(3, 3))
    with pytest.raises(ConfigError):
        Kernel2D(np.ones((3, 3)), dilation_rate=0)


def test_expand_kernel_ones_rate2():
    expanded = expand_kernel(Kernel2D(np.ones((3, 3)), 2))
    assert expanded.weights.shape == (5, 5)
    assert expanded.dilation_rate == 1
    taps = np.zeros((5, 5))
    taps[np.ix_([0, 2, 4], [0, 2, 4])] = 1.0
    assert np.array_equal(expanded.weights, taps)


def test_expand_kernel_rate1_identity():
    rng = np.random.default_rng(0)
    weights = rng.normal(size=(5, 5))
    expanded = expand_kernel(Kernel2D(weights, 1))
    assert np.array_equal(expanded.weights, weights)


def test_expand_kernel_preserves_parameters():
    rng = np.random.default_rng(1)
    for size in (1, 3, 5):
        for rate in (1, 2, 3, 4):
            weights = rng.normal(size=(size, size))
            expanded = expand_kernel(Kernel2D(weights, rate))
            assert expanded.weights.shape == (dilated_size(size, rate),) * 2
            assert np.count_nonzero(expanded.weights) == np.count_nonzero(weights)
            assert expanded.weights.sum() == pytest.approx(weights.sum(), abs=1e-15)


def test_conv_reference_zero_image():
    kernel = Kernel2D(np.random.default_rng(2).normal(size=(3, 3)), 2)
    out = conv2d_reference(np.zeros((10, 10)), kernel, stride=2, padding="valid")
    assert out.shape == ((10 - 5) // 2 + 1,) * 2
    assert np.all(out == 0)


def test_conv_reference_identity_kernel():
    rng = np.random.default_rng(3)
    image = rng.normal(size=(9, 7))
    out = conv2d_reference(image, Kernel2D(np.ones((1, 1))), stride=1, padding="same")
    assert np.array_equal(out, image)


def test_conv_reference_valid_too_small():
    with pytest.raises(ShapeError):
        conv2d_reference(np.ones((4, 4)), Kernel2D(np.ones((3, 3)), 2), padding="valid")


def test_conv_reference_multichannel_matches_per_channel():
    rng = np.random.default_rng(4)
    image = rng.normal(size=(8, 8, 3))
    kernel = Kernel2D(rng.normal(size=(3, 3)), 2)
    out = conv2d_reference(image, kernel)
    for c in range(3):
        assert np.array_equal(out[:, :, c], conv2d_reference(image[:, :, c], kernel))


def test_expanded_rate3_equivalence():
    # expanding a random 3x3 at rate 3 gives a 7x7 whose rate-1 convolution
    # reproduces the dilated convolution exactly
    rng = np.random.default_rng(5)
    kernel = Kernel2D(rng.normal(size=(3, 3)), 3)
    expanded = expand_kernel(kernel)
    assert expanded.weights.shape == (7, 7)
    image = rng.normal(size=(12, 12))
    direct = conv2d_reference(image, kernel, padding="same")
    via_expansion = conv2d_reference(image, expanded, padding="same")
    assert np.max(np.abs(direct - via_expansion)) <= 1e-12


@pytest.mark.parametrize("size", [1, 3, 5])
@pytest.mark.parametrize("rate", [1, 2, 3, 4])
def test_equivalence_grid(size, rate):
    rng = np.random.default_rng(100 * size + rate)
    for _ in range(3):
        kernel = Kernel2D(rng.normal(size=(size, size)), rate)
        image = rng.normal(size=(16, 16))
        direct = conv2d_reference(image, kernel, padding="same")
        via_expansion = conv2d_reference(image, expand_kernel(kernel), padding="same")
        assert direct.shape == image.shape
        assert np.max(np.abs(direct - via_expansion)) <= 1e-12


def test_footprint_law():
    # a 3x3 at rate 2 and a dense 5x5 cover the same window, so output
    # shapes agree for any stride/padding
    rng = np.random.default_rng(6)
    image = rng.normal(size=(17, 13))
    dilated = Kernel2D(rng.normal(size=(3, 3)), 2)
    dense = Kernel2D(rng.normal(size=(5, 5)), 1)
    for stride in (1, 2, 3):
        for padding in ("same", "valid"):
            a = conv2d_reference(image, dilated, stride=stride, padding=padding)
            b = conv2d_reference(image, dense, stride=stride, padding=padding)
            assert a.shape == b.shape


def test_reference_matches_torch_dilated_conv():
    # ties the oracle to the layer implementation the network trains with
    rng = np.random.default_rng(7)
    for rate in (1, 2, 3):
        image = rng.normal(size=(14, 14))
        kernel = Kernel2D(rng.normal(size=(3, 3)), rate)
        ours = conv2d_reference(image, kernel, padding="same")
        theirs = F.conv2d(
            torch.as_tensor(image[None, None]),
            torch.as_tensor(kernel.weights[None, None]),
            padding=rate, dilation=rate,
        )[0, 0].numpy()
        assert np.max(np.abs(ours - theirs)) <= 1e-12
