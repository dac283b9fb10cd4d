import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attrikit.data.batching import iterate_batches, make_batch
from attrikit.data.imageio import read_image, read_image_u8, read_ppm, write_image, write_ppm
from attrikit.data.manifest import DatasetManifest, Record
from attrikit.data.synthetic import AttributeSpec, assign_labels, generate_synthetic, standard_spec
from attrikit.data.transforms import (
    AugmentationConfig,
    augment,
    hflip,
    letterbox_geometry,
    resize_aspect_preserving,
    resize_fixed,
)
from attrikit.errors import ConfigError, DataError


def small_spec(seed=0, counts=None):
    return standard_spec(counts or {"train": 24, "val": 8, "test": 8}, seed=seed, size=32)


# ---- image files -----------------------------------------------------------------------

def test_ppm_round_trip_is_lossless(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (7, 5, 3), dtype=np.uint8)
    write_ppm(img, tmp_path / "a.ppm")
    np.testing.assert_array_equal(read_ppm(tmp_path / "a.ppm"), img)
    np.testing.assert_array_equal(read_image_u8(tmp_path / "a.ppm"), img)


def test_png_via_pillow(tmp_path):
    img = np.random.default_rng(1).random((6, 4, 3)).astype(np.float32)
    write_image(img, tmp_path / "a.png")
    back = read_image(tmp_path / "a.png")
    assert back.shape == (6, 4, 3)
    assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-6


def test_bad_ppm_rejected(tmp_path):
    (tmp_path / "bad.ppm").write_bytes(b"P3\n1 1\n255\n0 0 0\n")
    with pytest.raises(DataError):
        read_ppm(tmp_path / "bad.ppm")


# ---- resizing --------------------------------------------------------------------------

def test_letterbox_80x40():
    img = np.random.default_rng(0).random((80, 40, 3)).astype(np.float32)
    fill = np.array([0.1, 0.2, 0.3], np.float32)
    out = resize_aspect_preserving(img, 64, fill)
    assert out.shape == (64, 64, 3)
    assert letterbox_geometry(80, 40, 64) == (64, 32, 0, 16)
    np.testing.assert_array_equal(out[:, :16], np.broadcast_to(fill, (64, 16, 3)))
    np.testing.assert_array_equal(out[:, 48:], np.broadcast_to(fill, (64, 16, 3)))


def test_letterbox_square_is_pure_resize():
    img = np.random.default_rng(1).random((32, 32, 3)).astype(np.float32)
    fill = np.full(3, -5.0, np.float32)
    out = resize_aspect_preserving(img, 48, fill)
    assert not np.any(out == -5.0)


@settings(max_examples=100, deadline=None)
@given(h=st.integers(1, 300), w=st.integers(1, 300), target=st.integers(8, 128))
def test_letterbox_keeps_aspect_and_never_crops(h, w, target):
    ch, cw, top, left = letterbox_geometry(h, w, target)
    assert max(ch, cw) == target
    assert 0 <= top and top + ch <= target and 0 <= left and left + cw <= target
    # content aspect equals the source aspect up to one pixel of rounding
    if h >= w:
        assert abs(cw - w * target / h) <= 1
    else:
        assert abs(ch - h * target / w) <= 1


def test_resize_fixed_without_crop_is_plain_resize():
    img = np.random.default_rng(2).random((20, 10, 3)).astype(np.float32)
    assert resize_fixed(img, 16, 16).shape == (16, 16, 3)


def test_center_crop_window_on_gradient():
    ramp = np.tile(np.arange(8, dtype=np.float32)[None, :, None], (8, 1, 3))
    out = resize_fixed(ramp, 8, 4)
    np.testing.assert_array_equal(out[0, :, 0], [2, 3, 4, 5])


def test_random_crop_is_seeded():
    img = np.random.default_rng(3).random((16, 16, 3)).astype(np.float32)
    a = resize_fixed(img, 16, 10, True, np.random.default_rng(7))
    b = resize_fixed(img, 16, 10, True, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)


# ---- augmentation ----------------------------------------------------------------------

def test_disabled_augment_only_subtracts_mean():
    img = np.random.default_rng(4).random((6, 6, 3)).astype(np.float32)
    mean = np.array([0.2, 0.4, 0.6], np.float32)
    out = augment(img, AugmentationConfig.disabled(), np.random.default_rng(0), mean)
    np.testing.assert_array_equal(out, img - mean)


def test_double_flip_is_identity():
    img = np.random.default_rng(5).random((5, 7, 3))
    np.testing.assert_array_equal(hflip(hflip(img)), img)


def test_zero_amplitudes_leave_pixels_unchanged():
    img = np.random.default_rng(6).random((6, 6, 3)).astype(np.float32)
    cfg = AugmentationConfig(flip_prob=0.0, jitter_scale=0.0, jitter_shift=0.0, rotate=True, rotation_degrees=0.0,
                             mean_subtraction=False)
    np.testing.assert_array_equal(augment(img, cfg, np.random.default_rng(0)), img)


# ---- synthetic data and manifests ------------------------------------------------------

def test_prevalence_is_exact_and_within_binomial_bound():
    spec = standard_spec({"train": 2000})
    labels = assign_labels(spec, 2000, np.random.default_rng(0))
    assert 960 <= labels[:, 0].sum() <= 1040
    np.testing.assert_array_equal(labels.sum(axis=0), np.round(np.array(
        [a.prevalence for a in spec.attributes]) * 2000))


def test_generation_is_deterministic(tmp_path):
    a = generate_synthetic(small_spec(), tmp_path / "a")
    b = generate_synthetic(small_spec(), tmp_path / "b")
    assert (tmp_path / "a" / "manifest.csv").read_bytes() == (tmp_path / "b" / "manifest.csv").read_bytes()
    for r in a.records:
        assert (tmp_path / "a" / r.path).read_bytes() == (tmp_path / "b" / r.path).read_bytes()
    assert len(b.records) == 40


def test_lower_half_tokens_stay_in_lower_half(tmp_path):
    m = generate_synthetic(small_spec(counts={"train": 60}), tmp_path)
    h = 32
    for r in m.records:
        if r.labels[0]:
            top, _, bh, _ = m.token_boxes[r.path][0]
            assert top >= h // 2 and top + bh <= h


def test_manifest_round_trip_and_disjoint_splits(tmp_path):
    m = generate_synthetic(small_spec(), tmp_path)
    again = DatasetManifest.load(tmp_path)
    again.save(tmp_path / "copy")
    third = DatasetManifest.load(tmp_path / "copy")
    for x, y in zip(again.records, third.records):
        assert x.path == y.path and x.split == y.split and np.array_equal(x.labels, y.labels)
    np.testing.assert_allclose(third.mean_pixel, m.mean_pixel)
    splits = [set(r.path for r in again.records if r.split == s) for s in ("train", "val", "test")]
    assert not (splits[0] & splits[1]) and not (splits[0] & splits[2]) and not (splits[1] & splits[2])


def test_manifest_rejects_bad_labels(tmp_path):
    with pytest.raises(DataError):
        DatasetManifest(["a"], [Record("x.ppm", np.array([2]), "train")])
    (tmp_path / "manifest.csv").write_text("path,a\nx.ppm,1,0\n")
    with pytest.raises(DataError):
        DatasetManifest.load(tmp_path)


def test_attribute_spec_validation():
    with pytest.raises(ConfigError):
        AttributeSpec("x", "hexagon", "red")
    with pytest.raises(ConfigError):
        AttributeSpec("x", "square", "red", prevalence=1.0)


# ---- batching --------------------------------------------------------------------------

def test_batch_of_one_dims():
    img = np.zeros((20, 10, 3), np.uint8)
    x, y = make_batch([img], np.array([[1, 0]]), AugmentationConfig(long_sides=(64,)), np.random.default_rng(0), True)
    assert x.shape == (1, 3, 64, 64) and y.shape == (1, 2)


def test_single_size_gives_uniform_batches(tmp_path):
    m = generate_synthetic(small_spec(), tmp_path)
    cfg = AugmentationConfig(long_sides=(40,))
    for x, _, _ in iterate_batches(m.split("train"), 5, cfg):
        assert x.shape[1:] == (3, 40, 40)


def test_labels_follow_images_under_shuffling(tmp_path):
    # tracer images: sample i is a flat image of value i, labels encode i in binary
    n = 24
    images = [np.full((8, 8, 3), i, np.uint8) for i in range(n)]
    labels = np.array([[(i >> b) & 1 for b in range(5)] for i in range(n)], np.int8)
    recs = [Record(f"{i}.ppm", labels[i], "train") for i in range(n)]
    m = DatasetManifest([f"b{b}" for b in range(5)], recs, mean_pixel=np.zeros(3))
    view = m.split("train")
    view._images = images
    cfg = AugmentationConfig.disabled(long_sides=(8,), mean_subtraction=False)
    seen = 0
    for x, y, idx in iterate_batches(view, 7, cfg, seed=3):
        ids = np.round(x[:, 0, 0, 0] * 255).astype(int)
        np.testing.assert_array_equal(ids, idx)
        np.testing.assert_array_equal(y, labels[ids])
        seen += len(idx)
    assert seen == n


def test_worker_count_does_not_change_batches(tmp_path):
    m = generate_synthetic(small_spec(), tmp_path)
    view = m.split("train")
    cfg = AugmentationConfig(rotate=True)
    serial = list(iterate_batches(view, 5, cfg, seed=1, epoch=2))
    threaded = list(iterate_batches(view, 5, cfg, seed=1, epoch=2, workers=3))
    for (a, ya, ia), (b, yb, ib) in zip(serial, threaded):
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(ya, yb)
        np.testing.assert_array_equal(ia, ib)


def test_augmentation_preserves_labels(tmp_path):
    m = generate_synthetic(small_spec(), tmp_path)
    view = m.split("train")
    for _, y, idx in iterate_batches(view, 6, AugmentationConfig(rotate=True), seed=0):
        np.testing.assert_array_equal(y, view.labels()[idx])


def test_letterbox_padding_is_zero_after_training_augmentation():
    img = np.random.default_rng(7).random((40, 10, 3)).astype(np.float32)
    mean = np.array([0.3, 0.5, 0.7], np.float32)
    cfg = AugmentationConfig(long_sides=(32,), flip_prob=0.0, jitter_scale=0.3, jitter_shift=0.2)
    x, _ = make_batch([img], np.zeros((1, 1)), cfg, np.random.default_rng(0), True, mean=mean)
    left, width = letterbox_geometry(40, 10, 32)[3], letterbox_geometry(40, 10, 32)[1]
    assert not x[0, :, :, :left].any() and not x[0, :, :, left + width:].any()
    assert x[0, :, :, left:left + width].any()
