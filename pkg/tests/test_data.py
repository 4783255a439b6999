import logging

import numpy as np
import pytest
from PIL import Image

from blurkit.data import (BlurSample, augment, load_dataset, preprocess,
                          preprocess_many, resize_mask_nearest, split_cuhk,
                          write_manifest)
from blurkit.errors import ConfigError, ShapeError
from conftest import make_fixture_set, make_texture_sample, write_cuhk_tree, write_dut_tree


def synthetic_population(n_motion=296, n_defocus=704):
    image = np.zeros((4, 4, 3), dtype=np.uint8)
    mask = np.zeros((4, 4), dtype=np.uint8)
    samples = [BlurSample(f"motion{i:04d}", image, mask, "motion")
               for i in range(n_motion)]
    samples += [BlurSample(f"out{i:04d}", image, mask, "defocus")
                for i in range(n_defocus)]
    return samples


def test_load_cuhk_fixture(tmp_path):
    samples = [
        make_texture_sample(np.random.default_rng(0), "motion_a", blur_kind="motion"),
        make_texture_sample(np.random.default_rng(1), "scene_b"),
        make_texture_sample(np.random.default_rng(2), "scene_c"),
    ]
    write_cuhk_tree(tmp_path, samples)
    loaded = load_dataset(tmp_path, "cuhk")
    assert [s.id for s in loaded] == ["motion_a", "scene_b", "scene_c"]
    assert [s.blur_kind for s in loaded] == ["motion", "defocus", "defocus"]
    for orig, got in zip(samples, loaded):
        assert np.array_equal(orig.image, got.image)
        assert np.array_equal(orig.mask, got.mask)


def test_load_reports_unmatched(tmp_path, caplog):
    samples = make_fixture_set(seed=1, n=2)
    write_cuhk_tree(tmp_path, samples)
    Image.fromarray(samples[0].image).save(tmp_path / "image" / "orphan.png")
    with caplog.at_level(logging.WARNING):
        loaded = load_dataset(tmp_path, "cuhk")
    assert len(loaded) == 2
    assert any("orphan" in rec.message for rec in caplog.records)


def test_load_empty_directories(tmp_path):
    (tmp_path / "image").mkdir(parents=True)
    (tmp_path / "gt").mkdir(parents=True)
    assert load_dataset(tmp_path, "cuhk") == []


def test_load_missing_directory(tmp_path):
    with pytest.raises(IOError):
        load_dataset(tmp_path / "nowhere", "cuhk")


def test_load_dimension_mismatch(tmp_path):
    sample = make_texture_sample(np.random.default_rng(3), "bad")
    write_cuhk_tree(tmp_path, [sample])
    Image.fromarray(np.zeros((8, 8), dtype=np.uint8)).save(tmp_path / "gt" / "bad.png")
    with pytest.raises(ShapeError, match="bad"):
        load_dataset(tmp_path, "cuhk")


def test_mask_binarization_and_polarity(tmp_path):
    (tmp_path / "image").mkdir(parents=True)
    (tmp_path / "gt").mkdir(parents=True)
    Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(tmp_path / "image" / "g.png")
    gray = np.array([[0, 100, 127, 128], [200, 255, 5, 130]] * 2, dtype=np.uint8)
    Image.fromarray(gray, mode="L").save(tmp_path / "gt" / "g.png")
    normal = load_dataset(tmp_path, "cuhk")[0].mask
    assert np.array_equal(normal, (gray >= 128).astype(np.uint8))
    inverted = load_dataset(tmp_path, "cuhk", invert_mask=True)[0].mask
    assert np.array_equal(inverted, ((255 - gray) >= 128).astype(np.uint8))


def test_load_dut_layout(tmp_path):
    train = make_fixture_set(seed=2, n=3)
    test = make_fixture_set(seed=3, n=2)
    for s in test:
        s.id = "t_" + s.id
    write_dut_tree(tmp_path, train, test)
    assert len(load_dataset(tmp_path, "dut")) == 5
    assert len(load_dataset(tmp_path, "dut", subset="train")) == 3
    got_test = load_dataset(tmp_path, "dut", subset="test")
    assert [s.id for s in got_test] == sorted(s.id for s in test)
    assert all(s.blur_kind == "defocus" for s in got_test)


def test_motion_list_overrides_prefix(tmp_path):
    samples = make_fixture_set(seed=4, n=3)
    write_cuhk_tree(tmp_path, samples)
    listing = tmp_path / "motion.txt"
    listing.write_text(samples[1].id + "\n")
    loaded = load_dataset(tmp_path, "cuhk", motion_list=listing)
    kinds = {s.id: s.blur_kind for s in loaded}
    assert kinds[samples[1].id] == "motion"
    assert all(v == "defocus" for k, v in kinds.items() if k != samples[1].id)


def test_split_cuhk_stratified():
    split = split_cuhk(synthetic_population(), train_n=800, seed=0)
    assert len(split.train) == 800 and len(split.test) == 200
    test_motion = sum(1 for s in split.test if s.blur_kind == "motion")
    assert abs(test_motion - 59) <= 1
    assert abs((200 - test_motion) - 141) <= 1
    assert split.ratio_preserved


def test_split_defocus_only():
    samples = synthetic_population(n_motion=0, n_defocus=704)
    split = split_cuhk(samples, train_n=604, seed=1)
    assert len(split.train) == 604 and len(split.test) == 100


def test_split_determinism():
    samples = synthetic_population(20, 30)
    a = split_cuhk(samples, train_n=40, seed=9)
    b = split_cuhk(samples, train_n=40, seed=9)
    c = split_cuhk(samples, train_n=40, seed=10)
    assert [s.id for s in a.train] == [s.id for s in b.train]
    assert [s.id for s in a.test] == [s.id for s in b.test]
    assert [s.id for s in a.train] != [s.id for s in c.train]


def test_split_partitions_do_not_overlap():
    samples = synthetic_population(10, 20)
    split = split_cuhk(samples, train_n=21, seed=3)
    train_ids = {s.id for s in split.train}
    test_ids = {s.id for s in split.test}
    assert not train_ids & test_ids
    assert train_ids | test_ids == {s.id for s in samples}


def test_split_rejects_oversized_train():
    with pytest.raises(ConfigError):
        split_cuhk(synthetic_population(2, 3), train_n=5, seed=0)


def test_write_manifest(tmp_path):
    split = split_cuhk(synthetic_population(4, 6), train_n=8, seed=0)
    write_manifest(split, tmp_path)
    train_ids = (tmp_path / "train.txt").read_text().split()
    test_ids = (tmp_path / "test.txt").read_text().split()
    assert len(train_ids) == 8 and len(test_ids) == 2
    assert set(train_ids) == {s.id for s in split.train}


@pytest.mark.parametrize("policy,factor", [("hflip", 2), ("hflip_vflip", 4), ("none", 1)])
def test_augment_counts(fixture_samples, policy, factor):
    out = augment(fixture_samples, policy)
    assert len(out) == factor * len(fixture_samples)
    assert len({s.id for s in out}) == len(out)
    for s in out:
        assert set(np.unique(s.mask)) <= {0, 1}


def test_augment_hflip_involution(fixture_samples):
    sample = fixture_samples[0]
    once = augment([sample], "hflip")[1]
    twice = augment([once], "hflip")[1]
    assert np.array_equal(twice.image, sample.image)
    assert np.array_equal(twice.mask, sample.mask)


def test_augment_transforms_mask_with_image(fixture_samples):
    sample = fixture_samples[0]
    flipped = augment([sample], "hflip_vflip")
    assert np.array_equal(flipped[1].mask, sample.mask[:, ::-1])
    assert np.array_equal(flipped[2].mask, sample.mask[::-1, :])
    assert np.array_equal(flipped[3].mask, sample.mask[::-1, ::-1])


def test_preprocess_contract():
    rng = np.random.default_rng(5)
    image = rng.integers(0, 256, size=(480, 320, 3), dtype=np.uint8)
    mask = (rng.random((480, 320)) > 0.5).astype(np.uint8)
    sample = BlurSample("wide", image, mask)
    x, m = preprocess(sample, 256)
    assert x.shape == (3, 256, 256) and x.dtype == np.float32
    assert 0.0 <= x.min() and x.max() <= 1.0
    assert m.shape == (256, 256)
    assert set(np.unique(m)) <= {0, 1}


def test_preprocess_all_ones_mask():
    sample = BlurSample("ones", np.zeros((10, 14, 3), dtype=np.uint8),
                        np.ones((10, 14), dtype=np.uint8))
    _, mask = preprocess(sample, 32)
    assert np.all(mask == 1)


def test_preprocess_size_check():
    sample = BlurSample("tiny", np.zeros((8, 8, 3), dtype=np.uint8),
                        np.zeros((8, 8), dtype=np.uint8))
    with pytest.raises(ConfigError):
        preprocess(sample, 8)


def nearest_reference(mask, out_h, out_w):
    # independent scalar-loop nearest neighbour with the same definition:
    # sample at (i + 0.5) * in/out - 0.5, ties toward the nearer edge
    in_h, in_w = mask.shape
    out = np.zeros((out_h, out_w), dtype=mask.dtype)
    for i in range(out_h):
        for j in range(out_w):
            src = []
            for n_in, n_out, pos in ((in_h, out_h, i), (in_w, out_w, j)):
                ideal = (pos + 0.5) * n_in / n_out - 0.5
                lo, hi = int(np.floor(ideal)), int(np.ceil(ideal))
                if ideal - lo < hi - ideal:
                    pick = lo
                elif hi - ideal < ideal - lo:
                    pick = hi
                else:
                    pick = lo if ideal <= (n_in - 1) / 2 else hi
                src.append(min(max(pick, 0), n_in - 1))
            out[i, j] = mask[src[0], src[1]]
    return out


def test_checkerboard_nearest_oracle():
    board = np.indices((4, 4)).sum(axis=0) % 2
    resized = resize_mask_nearest(board.astype(np.uint8), 8, 8)
    assert set(np.unique(resized)) <= {0, 1}
    assert np.array_equal(resized, nearest_reference(board.astype(np.uint8), 8, 8))


@pytest.mark.parametrize("shape,target", [((7, 11), (16, 16)), ((33, 18), (16, 16)),
                                          ((16, 16), (24, 40)), ((50, 50), (25, 25))])
def test_nearest_matches_reference(shape, target):
    rng = np.random.default_rng(sum(shape) + sum(target))
    mask = (rng.random(shape) > 0.5).astype(np.uint8)
    assert np.array_equal(resize_mask_nearest(mask, *target),
                          nearest_reference(mask, *target))


# (even input, odd output) pairs are excluded: their center pixel samples
# exactly between two sources, which no deterministic rounding can mirror
@pytest.mark.parametrize("shape,size", [((48, 48), 32), ((64, 64), 16),
                                        ((54, 54), 18), ((32, 32), 16)])
def test_flip_commutes_with_preprocess(shape, size):
    rng = np.random.default_rng(11)
    image = rng.integers(0, 256, size=shape + (3,), dtype=np.uint8)
    mask = (rng.random(shape) > 0.5).astype(np.uint8)
    sample = BlurSample("c", image, mask)
    flipped_first = preprocess(augment([sample], "hflip")[1], size)
    flipped_after = preprocess(sample, size)
    assert np.array_equal(flipped_first[1], flipped_after[1][:, ::-1])
    assert np.array_equal(flipped_first[0], flipped_after[0][:, :, ::-1])


def test_preprocess_many_deterministic_order(fixture_samples):
    shuffled = list(reversed(fixture_samples))
    a = preprocess_many(fixture_samples, 32)
    b = preprocess_many(shuffled, 32)
    assert a[2] == b[2]
    assert np.array_equal(a[0], b[0])
    assert np.array_equal(a[1], b[1])
    threaded = preprocess_many(shuffled, 32, workers=3)
    assert np.array_equal(a[0], threaded[0])
