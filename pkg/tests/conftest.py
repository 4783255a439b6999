import numpy as np
import pytest
from PIL import Image, ImageFilter

from blurkit.data import BlurSample


def make_texture_sample(rng, sample_id="s0", size=32, region="left",
                        blur_kind="defocus"):
    """Noise image with one half heavily blurred; mask 1 on the blurred half."""
    noise = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
    blurred = np.asarray(
        Image.fromarray(noise).filter(ImageFilter.GaussianBlur(radius=4)),
        dtype=np.uint8,
    )
    mask = np.zeros((size, size), dtype=np.uint8)
    half = size // 2
    if region == "left":
        mask[:, :half] = 1
    elif region == "right":
        mask[:, half:] = 1
    elif region == "top":
        mask[:half, :] = 1
    else:
        mask[half:, :] = 1
    image = np.where(mask[:, :, None] == 1, blurred, noise).astype(np.uint8)
    return BlurSample(sample_id, image, mask, blur_kind)


def make_fixture_set(seed=0, size=32, n=4):
    rng = np.random.default_rng(seed)
    regions = ["left", "right", "top", "bottom"]
    return [
        make_texture_sample(rng, f"fix{i}", size=size, region=regions[i % 4])
        for i in range(n)
    ]


def write_pairs(image_dir, gt_dir, samples):
    image_dir.mkdir(parents=True, exist_ok=True)
    gt_dir.mkdir(parents=True, exist_ok=True)
    for s in samples:
        Image.fromarray(s.image).save(image_dir / f"{s.id}.png")
        Image.fromarray((s.mask * 255).astype(np.uint8), mode="L").save(
            gt_dir / f"{s.id}.png")


def write_cuhk_tree(root, samples):
    write_pairs(root / "image", root / "gt", samples)
    return root


def write_dut_tree(root, train_samples, test_samples):
    write_pairs(root / "train" / "images", root / "train" / "gt", train_samples)
    write_pairs(root / "test" / "images", root / "test" / "gt", test_samples)
    return root


@pytest.fixture
def fixture_samples():
    return make_fixture_set(seed=7)
