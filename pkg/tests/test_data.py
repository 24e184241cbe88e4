"""Synthetic generator, manifests, augmentation and batching."""

import numpy as np
import pytest

from dformer.core import Rng
from dformer.data import (IGNORE_INDEX, AugmentParams, DatasetManifest, RGBDDataset, RGBDSample, augment,
                          class_depth_band, gen_synthetic, split_indices)
from dformer.data.loader import INPUT_MEAN, INPUT_STD


@pytest.fixture(scope="module")
def seg(tmp_path_factory):
    return gen_synthetic(11, 24, 64, "segment", 5, tmp_path_factory.mktemp("seg"))


@pytest.fixture(scope="module")
def cls(tmp_path_factory):
    return gen_synthetic(3, 240, 32, "classify", 4, tmp_path_factory.mktemp("cls"))


def _bytes(m: DatasetManifest):
    return [(m.root / p).read_bytes() for row in m.samples for p in row]


def test_generation_is_byte_deterministic(tmp_path):
    a = gen_synthetic(5, 6, 32, "segment", 3, tmp_path / "a")
    b = gen_synthetic(5, 6, 32, "segment", 3, tmp_path / "b", workers=3)
    assert (a.root / "manifest.txt").read_bytes() == (b.root / "manifest.txt").read_bytes()
    assert _bytes(a) == _bytes(b)
    c = gen_synthetic(6, 6, 32, "segment", 3, tmp_path / "c")
    assert _bytes(a) != _bytes(c)


def test_manifest_format(seg):
    lines = (seg.root / "manifest.txt").read_text().splitlines()
    assert lines[0] == "#classes=5 seed=11 recipe=1"
    assert len(lines) == 25
    assert lines[1].split("\t") == ["rgb_00000.rdt", "depth_00000.rdt", "label_00000.rdt"]
    back = DatasetManifest.read(seg.root)
    assert back.samples == seg.samples and back.num_classes == 5 and back.mode == "segment"


def test_segment_shapes_and_ranges(seg):
    assert len(seg) == 24
    for i in range(len(seg)):
        s = seg.load(i)
        assert s.rgb.shape == (64, 64, 3) and s.depth.shape == (64, 64, 1)
        assert s.target.shape == (64, 64)
        assert s.rgb.min() >= 0 and s.rgb.max() <= 1
        assert s.depth.min() >= 0 and s.depth.max() <= 1
        assert set(np.unique(s.target)) <= set(range(5))


def test_shapes_sit_in_their_depth_band(seg):
    for i in range(6):
        s = seg.load(i)
        for c in np.unique(s.target):
            if c == 0:
                continue
            lo, hi = class_depth_band(int(c) - 1, 4)
            d = s.depth[..., 0][s.target == c]
            assert d.min() >= lo - 1e-6 and d.max() <= hi + 1e-6


def test_classify_targets(cls):
    ds = RGBDDataset(cls)
    ys = np.array([s.target for s in ds.samples])
    assert ys.min() >= 0 and ys.max() < 4
    assert len(np.unique(ys)) == 4


def test_depth_linear_probe_beats_chance(cls):
    ds = RGBDDataset(cls)
    feats = np.array([[s.depth.mean(), np.percentile(s.depth, 10), np.percentile(s.depth, 30)]
                      for s in ds.samples])
    y = np.array([s.target for s in ds.samples])
    tr, te = slice(0, 160), slice(160, None)
    mu, sd = feats[tr].mean(0), feats[tr].std(0)
    X = np.c_[(feats - mu) / sd, np.ones(len(feats))]
    W = np.zeros((X.shape[1], 4))
    n = 160
    for _ in range(3000):  # plain multinomial logistic regression
        z = X[tr] @ W
        p = np.exp(z - z.max(1, keepdims=True))
        p /= p.sum(1, keepdims=True)
        p[np.arange(n), y[tr]] -= 1
        W -= 0.5 * X[tr].T @ p / n
    acc = np.mean(np.argmax(X[te] @ W, 1) == y[te])
    chance = np.bincount(y[tr], minlength=4).max() / n
    assert acc > chance + 0.15


def test_invalid_arguments(tmp_path):
    with pytest.raises(ValueError, match="multiple of 32"):
        gen_synthetic(0, 2, 48, "segment", 3, tmp_path)
    with pytest.raises(ValueError):
        gen_synthetic(0, 2, 32, "segment", 1, tmp_path)
    with pytest.raises(ValueError):
        gen_synthetic(0, 2, 32, "detect", 3, tmp_path)


def test_sample_alignment_check():
    with pytest.raises(ValueError):
        RGBDSample(np.zeros((4, 4, 3)), np.zeros((4, 5, 1)), 0)


# ------------------------------------------------------------------ augmentation


def test_augment_identity(seg):
    s = seg.load(0)
    out = augment(s, Rng(0), AugmentParams(flip_p=0.0, scale_range=(1.0, 1.0)))
    for a, b in ((out.rgb, s.rgb), (out.depth, s.depth), (out.target, s.target)):
        np.testing.assert_array_equal(a, b)


def test_flip_is_an_involution(seg):
    s = seg.load(1)
    p = AugmentParams(flip_p=1.0, scale_range=(1.0, 1.0))
    once = augment(s, Rng(0), p)
    np.testing.assert_array_equal(once.target, s.target[:, ::-1])
    twice = augment(once, Rng(1), p)
    for a, b in ((twice.rgb, s.rgb), (twice.depth, s.depth), (twice.target, s.target)):
        np.testing.assert_array_equal(a, b)


def test_half_scale_alignment_scan(seg):
    """At scale 0.5 each output pixel is one 2x2 block of the source.

    Where a block carries a single label, the label must survive and the rgb
    and depth values must be the block mean.
    """
    s = seg.load(2)
    out = augment(s, Rng(0), AugmentParams(flip_p=0.0, scale_range=(0.5, 0.5), crop=(32, 32)))
    blocks = s.target.reshape(32, 2, 32, 2).transpose(0, 2, 1, 3).reshape(32, 32, 4)
    uniform = (blocks == blocks[..., :1]).all(-1)
    assert uniform.mean() > 0.8
    np.testing.assert_array_equal(out.target[uniform], blocks[..., 0][uniform])
    rgb_mean = s.rgb.reshape(32, 2, 32, 2, 3).mean(axis=(1, 3))
    np.testing.assert_allclose(out.rgb, rgb_mean, atol=1e-6)
    depth_mean = s.depth.reshape(32, 2, 32, 2, 1).mean(axis=(1, 3))
    np.testing.assert_allclose(out.depth, depth_mean, atol=1e-6)


def test_crop_keeps_modalities_aligned(seg):
    s = seg.load(3)
    out = augment(s, Rng(4), AugmentParams(flip_p=0.0, scale_range=(0.5, 0.5), crop=(24, 24)))
    half = augment(s, Rng(0), AugmentParams(flip_p=0.0, scale_range=(0.5, 0.5), crop=(32, 32)))
    # locate the crop from rgb alone, then check label and depth sit at the same offset
    hits = [(oy, ox) for oy in range(9) for ox in range(9)
            if np.array_equal(half.rgb[oy:oy + 24, ox:ox + 24], out.rgb)]
    assert len(hits) == 1
    oy, ox = hits[0]
    np.testing.assert_array_equal(out.target, half.target[oy:oy + 24, ox:ox + 24])
    np.testing.assert_array_equal(out.depth, half.depth[oy:oy + 24, ox:ox + 24])


def test_padding_uses_ignore_index(seg):
    s = seg.load(4)
    out = augment(s, Rng(2), AugmentParams(flip_p=0.0, scale_range=(0.5, 0.5)))
    assert out.target.shape == (64, 64)
    assert np.sum(out.target == IGNORE_INDEX) == 64 * 64 - 32 * 32
    assert set(np.unique(out.target)) - {IGNORE_INDEX} <= set(np.unique(s.target))


def test_upscale_preserves_present_classes(seg):
    s = seg.load(5)
    out = augment(s, Rng(3), AugmentParams(flip_p=0.5, scale_range=(1.0, 1.75), crop=(64, 64)))
    assert set(np.unique(out.target)) <= set(np.unique(s.target))


# ------------------------------------------------------------------ loader


def test_batching_and_depth_modes(seg):
    ds = RGBDDataset(seg)
    rgb, depth, tgt = ds.batch([0, 1, 2])
    assert rgb.shape == (3, 3, 64, 64) and depth.shape == (3, 1, 64, 64) and tgt.shape == (3, 64, 64)
    np.testing.assert_allclose(rgb[0], (seg.load(0).rgb.transpose(2, 0, 1) - INPUT_MEAN) / INPUT_STD,
                               atol=1e-6)
    _, d3, _ = RGBDDataset(seg, "dup3").batch([0])
    assert d3.shape == (1, 3, 64, 64)
    np.testing.assert_array_equal(d3[:, 0], d3[:, 2])
    _, drgb, _ = RGBDDataset(seg, "rgb").batch([0])
    np.testing.assert_array_equal(drgb, rgb[:1])
    with pytest.raises(ValueError):
        RGBDDataset(seg, "lidar")


def test_empty_dataset_rejected(tmp_path):
    with pytest.raises(ValueError, match="empty"):
        RGBDDataset(DatasetManifest(tmp_path, [], 3, 0))


def test_epoch_order_is_seeded(seg):
    ds = RGBDDataset(seg)
    a = list(ds.epoch_batches(range(10), 4, Rng(1)))
    assert a == list(ds.epoch_batches(range(10), 4, Rng(1)))
    assert [len(b) for b in a] == [4, 4, 2]
    assert sorted(i for b in a for i in b) == list(range(10))


def test_split_indices():
    tr, va = split_indices(50, 0)
    assert len(va) == 10 and len(tr) == 40
    assert sorted(tr + va) == list(range(50))
    assert split_indices(50, 0) == (tr, va)
    assert split_indices(50, 1) != (tr, va)
