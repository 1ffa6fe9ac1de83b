import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from segrobust.data import (DataError, Dataset, FormatError, SynthSpec, gen_synthetic_dataset,
                            load_dataset, load_image, load_mask, load_perturbation, quantize,
                            resize_pair, save_dataset, store_image, store_mask, store_perturbation)
from segrobust.tensor_core import IGNORE


def test_generation_is_deterministic():
    spec = SynthSpec(n_train=4, n_test=2, seed=11)
    a, b = gen_synthetic_dataset(spec), gen_synthetic_dataset(spec)
    for da, db in zip(a, b):
        for (ia, xa, ya), (ib, xb, yb) in zip(da, db):
            assert ia == ib and np.array_equal(xa, xb) and np.array_equal(ya, yb)


def test_generation_layout():
    train, test = gen_synthetic_dataset(SynthSpec(n_train=6, n_test=6))
    assert not {i for i, _, _ in train} & {i for i, _, _ in test}
    for _, x, y in list(train) + list(test):
        assert x.shape == (32, 32, 3) and x.min() >= 0 and x.max() <= 1
        assert (y == 2).sum() < (y == 1).sum()
    _, test = gen_synthetic_dataset(SynthSpec(small_count=0, n_train=0, n_test=4))
    for _, _, y in test:
        assert set(np.unique(y)) <= {0, 1}


def test_image_quantization(tmp_path):
    p = tmp_path / "a.ppm"
    img = np.zeros((1, 2, 3))
    img[0, 0] = 1.0
    img[0, 1] = 0.5
    store_image(p, img)
    back = load_image(p)
    assert np.all(back[0, 0] == 1.0)
    assert np.all(back[0, 1] == 128 / 255)
    assert quantize(np.array([0.5]))[0] == 128


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6), st.just(3)),
              elements=st.floats(0, 1)))
def test_image_round_trip(tmp_path_factory, img):
    d = tmp_path_factory.mktemp("img")
    store_image(d / "a.ppm", img)
    back = load_image(d / "a.ppm")
    assert np.max(np.abs(back - img)) <= 1 / 510 + 1e-12
    store_image(d / "b.ppm", back)
    assert (d / "a.ppm").read_bytes() == (d / "b.ppm").read_bytes()


@settings(max_examples=25, deadline=None)
@given(arrays(np.int64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.sampled_from([0, 1, 2, IGNORE])))
def test_mask_round_trip(tmp_path_factory, mask):
    p = tmp_path_factory.mktemp("mask") / "m.pgm"
    store_mask(p, mask)
    assert np.array_equal(load_mask(p), mask)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 5), st.integers(1, 5), st.just(3)),
              elements=st.floats(-1, 1, width=32)))
def test_perturbation_round_trip(tmp_path_factory, delta):
    p = tmp_path_factory.mktemp("pert") / "d.sgpd"
    store_perturbation(p, delta)
    assert np.array_equal(load_perturbation(p), delta.astype(np.float64))


def _files(tmp_path):
    img, mask, pert = tmp_path / "a.ppm", tmp_path / "m.pgm", tmp_path / "d.sgpd"
    store_image(img, np.full((2, 3, 3), 0.3))
    store_mask(mask, np.ones((2, 3), dtype=np.int64))
    store_perturbation(pert, np.zeros((2, 3, 3)))
    return [(img, load_image, 2), (mask, load_mask, 2), (pert, load_perturbation, 4)]


def test_magic_mutations_rejected(tmp_path):
    for path, loader, n_magic in _files(tmp_path):
        raw = path.read_bytes()
        for k in range(n_magic):
            for flip in (0x01, 0x20, 0xFF):
                bad = bytearray(raw)
                bad[k] ^= flip
                path.write_bytes(bytes(bad))
                with pytest.raises(FormatError, match="byte 0"):
                    loader(path)
        path.write_bytes(raw)


def test_truncation_rejected(tmp_path):
    for path, loader, _ in _files(tmp_path):
        raw = path.read_bytes()
        path.write_bytes(raw[:-1])
        with pytest.raises(FormatError, match="byte"):
            loader(path)


def test_malformed_header(tmp_path):
    p = tmp_path / "a.ppm"
    p.write_bytes(b"P6\n2 x\n255\n" + bytes(12))
    with pytest.raises(FormatError, match="byte 5"):
        load_image(p)


def test_resize_examples():
    img = np.random.default_rng(0).uniform(0, 1, (5, 4, 3))
    mask = np.random.default_rng(0).integers(0, 3, (5, 4))
    ri, rm = resize_pair(img, mask, size=(5, 4))
    assert np.array_equal(ri, img) and np.array_equal(rm, mask)
    _, rm = resize_pair(img, mask, size=(9, 13))
    assert set(np.unique(rm)) <= set(np.unique(mask))
    checker = np.zeros((2, 2, 3))
    checker[0, 0] = checker[1, 1] = 1.0
    up, _ = resize_pair(checker, np.zeros((2, 2), dtype=np.int64), size=(4, 4))
    for (i, j), (si, sj) in {(0, 0): (0, 0), (0, 3): (0, 1), (3, 0): (1, 0), (3, 3): (1, 1)}.items():
        assert np.array_equal(up[i, j], checker[si, sj])


def test_resize_longer_side():
    img, mask = np.zeros((10, 20, 3)), np.zeros((10, 20), dtype=np.int64)
    ri, rm = resize_pair(img, mask, longer=8)
    assert ri.shape == (4, 8, 3) and rm.shape == (4, 8)


def test_dataset_round_trip(tmp_path, small_data):
    train, _ = small_data
    save_dataset(train, tmp_path / "ds")
    back = load_dataset(tmp_path / "ds")
    assert back.classes == 3 and back.background_id == 0
    for (ia, xa, ya), (ib, xb, yb) in zip(train, back):
        assert ia == ib and np.array_equal(ya, yb)
        assert np.max(np.abs(xa - xb)) <= 1 / 510 + 1e-12


def test_dataset_validation(tmp_path, small_data):
    with pytest.raises(DataError, match="duplicate"):
        Dataset([("a", np.zeros((3, 3, 3)), np.zeros((3, 3), int))] * 2, 3)
    with pytest.raises(DataError, match="class count"):
        Dataset([("a", np.zeros((3, 3, 3)), np.full((3, 3), 5))], 3)
    train, _ = small_data
    save_dataset(train, tmp_path / "ds")
    manifest = json.loads((tmp_path / "ds" / "MANIFEST.json").read_text())
    manifest["classes"] = 2
    (tmp_path / "ds" / "MANIFEST.json").write_text(json.dumps(manifest))
    with pytest.raises(DataError, match="class count"):
        load_dataset(tmp_path / "ds")
    with pytest.raises(DataError, match="missing"):
        load_dataset(tmp_path / "nowhere")
