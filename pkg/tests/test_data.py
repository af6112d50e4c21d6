import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from qunet.data import LCG, bilinear_resize, binarize, load_dataset, make_partitions, stack, synth_dataset
from qunet.exceptions import IngestionError


def test_bilinear_identity_and_constant():
    img = np.random.default_rng(0).uniform(size=(3, 5, 7))
    assert np.array_equal(bilinear_resize(img, 5, 7), img)
    assert np.allclose(bilinear_resize(np.full((1, 8, 8), 0.3), 3, 5), 0.3)


def test_bilinear_half_pixel_downsample_by_two_is_box_average():
    img = np.arange(16.0).reshape(1, 4, 4)
    out = bilinear_resize(img, 2, 2)
    expected = img.reshape(1, 2, 2, 2, 2).mean(axis=(2, 4))
    assert np.allclose(out, expected)


def test_bilinear_upsample_hand_values():
    out = bilinear_resize(np.array([[[0.0, 1.0]]]), 1, 4)
    # source x = (i + 0.5) / 2 - 0.5 -> -0.25, 0.25, 0.75, 1.25 clamped
    assert np.allclose(out[0, 0], [0.0, 0.25, 0.75, 1.0])


def test_bilinear_rejects_zero_target():
    with pytest.raises(ValueError):
        bilinear_resize(np.zeros((1, 2, 2)), 0, 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(2, 12), st.integers(1, 12), st.integers(1, 12))
def test_bilinear_stays_within_input_range(h, w, oh, ow):
    img = np.random.default_rng(h * 13 + w).uniform(size=(2, h, w))
    out = bilinear_resize(img, oh, ow)
    assert out.shape == (2, oh, ow)
    assert out.min() >= img.min() - 1e-12 and out.max() <= img.max() + 1e-12


def test_binarize_threshold_inclusive():
    assert binarize(np.array([0.49, 0.5, 0.51])).tolist() == [0.0, 1.0, 1.0]


def _write_pair(root, stem, size=(8, 6), mask_size=None):
    (root / "images").mkdir(exist_ok=True)
    (root / "masks").mkdir(exist_ok=True)
    rgb = np.random.default_rng(len(stem)).integers(0, 256, size=(size[1], size[0], 3), dtype=np.uint8)
    Image.fromarray(rgb).save(root / "images" / f"{stem}.png")
    m = np.zeros((mask_size or size)[::-1], dtype=np.uint8)
    m[:2] = 255
    Image.fromarray(m).save(root / "masks" / f"{stem}.png")
    return rgb


def test_load_dataset_pairs_sorted_and_scaled(tmp_path):
    rgb = _write_pair(tmp_path, "b")
    _write_pair(tmp_path, "a")
    data = load_dataset(tmp_path / "images", tmp_path / "masks")
    assert [s.id for s in data] == ["a", "b"]
    assert np.allclose(data[1].image, rgb.transpose(2, 0, 1) / 255.0)
    assert set(np.unique(data[0].mask)) == {0.0, 1.0}
    resized = load_dataset(tmp_path / "images", tmp_path / "masks", size=4)
    assert resized[0].image.shape == (3, 4, 4) and resized[0].mask.shape == (1, 4, 4)
    x, y = stack(resized)
    assert x.shape == (2, 3, 4, 4) and y.shape == (2, 1, 4, 4)


def test_load_dataset_errors(tmp_path):
    _write_pair(tmp_path, "a")
    (tmp_path / "masks" / "a.png").unlink()
    with pytest.raises(IngestionError, match="a"):
        load_dataset(tmp_path / "images", tmp_path / "masks")
    _write_pair(tmp_path, "c", mask_size=(4, 4))
    (tmp_path / "images" / "a.png").unlink()
    with pytest.raises(IngestionError, match="sizes differ"):
        load_dataset(tmp_path / "images", tmp_path / "masks")
    with pytest.raises(IngestionError):
        load_dataset(tmp_path / "nope", tmp_path / "masks")


def test_lcg_reference_stream():
    # state_1 = (seed * a + c) mod 2^64, then one more step before output
    a, c, m = 6364136223846793005, 1442695040888963407, 2**64
    s = (0 * a + c) % m
    expected = []
    for _ in range(3):
        s = (s * a + c) % m
        expected.append(s >> 33)
    g = LCG(0)
    assert [g.next() for _ in range(3)] == expected


def test_partitions_deterministic_disjoint_and_sized():
    ids = [f"id{i}" for i in range(25)]
    parts = make_partitions(ids, 4, 0.8)
    assert parts == make_partitions(ids, 4, 0.8)
    for k, p in enumerate(parts):
        assert p.seed == k
        assert len(p.train_ids) == 20 and len(p.test_ids) == 5
        assert sorted(p.train_ids + p.test_ids) == sorted(ids)
    assert parts[0].train_ids != parts[1].train_ids
    with pytest.raises(ValueError):
        make_partitions(ids, 2, 1.0)
    with pytest.raises(ValueError):
        make_partitions([], 2)


def test_synth_dataset_properties():
    data = synth_dataset(20, size=32, seed=3)
    assert data[0].id == "synth00000"
    for s in data:
        assert s.image.shape == (3, 32, 32) and s.mask.shape == (1, 32, 32)
        assert 0.05 < s.mask.mean() < 0.6
        assert 0 <= s.image.min() and s.image.max() <= 1
    again = synth_dataset(20, size=32, seed=3)
    assert all(np.array_equal(a.image, b.image) for a, b in zip(data, again))
    with pytest.raises(ValueError):
        synth_dataset(2, size=20)


def test_two_by_two_to_one_is_mean():
    img = np.array([[[1.0, 2.0], [3.0, 10.0]]])
    assert bilinear_resize(img, 1, 1)[0, 0, 0] == pytest.approx(4.0)


def test_ten_ids_split_eight_two():
    parts = make_partitions([str(i) for i in range(10)], 10, 0.8)
    assert all(len(p.train_ids) == 8 and len(p.test_ids) == 2 for p in parts)


def test_partitions_are_diverse():
    parts = make_partitions([str(i) for i in range(100)], 10, 0.8)
    assert len({frozenset(p.test_ids) for p in parts}) >= 2


def test_resized_mask_stays_binary():
    mask = (np.random.default_rng(0).uniform(size=(1, 13, 13)) > 0.5).astype(float)
    out = binarize(bilinear_resize(mask, 5, 5))
    assert set(np.unique(out)) <= {0.0, 1.0}


def test_synth_size_64():
    data = synth_dataset(100, size=64, seed=0)
    assert len(data) == 100 and all(set(np.unique(s.mask)) <= {0.0, 1.0} for s in data)
