import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from extremeseg.errors import EmptyMask
from extremeseg.metrics import (boundary, dice, distance_volume, evaluate_case, format_report, jaccard,
                                precision, report, surface_distance_map, write_report)

masks = arrays(np.uint8, (4, 3, 3), elements=st.integers(0, 1))


def flat_masks(n_a, n_b, overlap, size=300):
    a = np.zeros((size, 1, 1), np.uint8)
    b = np.zeros((size, 1, 1), np.uint8)
    a[:n_a] = 1
    b[n_a - overlap:n_a - overlap + n_b] = 1
    return a, b


def test_dice_examples():
    a, b = flat_masks(100, 100, 50)
    assert dice(a, a) == 1.0
    assert dice(a, b) == 0.5
    assert jaccard(a, b) == pytest.approx(1 / 3)
    c, d = flat_masks(100, 100, 0)
    assert dice(c, d) == 0.0 and jaccard(c, d) == 0.0
    z = np.zeros((3, 3, 3))
    assert dice(z, z) == 1.0 and jaccard(z, z) == 1.0


@settings(max_examples=100, deadline=None)
@given(masks, masks)
def test_symmetry_and_identity(a, b):
    assert dice(a, b) == dice(b, a)
    assert jaccard(a, b) == jaccard(b, a)
    d = dice(a, b)
    assert jaccard(a, b) == pytest.approx(d / (2 - d), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(masks, masks, st.integers(0, 2 ** 31))
def test_permutation_invariance(a, b, seed):
    perm = np.random.default_rng(seed).permutation(a.size)
    pa = a.ravel()[perm].reshape(a.shape)
    pb = b.ravel()[perm].reshape(b.shape)
    assert dice(pa, pb) == dice(a, b)
    assert jaccard(pa, pb) == jaccard(a, b)


def test_precision():
    a, b = flat_masks(100, 100, 50)
    assert precision(a, b) == 0.5
    assert precision(np.zeros_like(a), b) == 1.0


def test_boundary_of_cube():
    m = np.zeros((7, 7, 7), np.uint8)
    m[1:6, 1:6, 1:6] = 1
    assert boundary(m).sum() == 125 - 27


def test_distance_identical_masks():
    m = np.zeros((6, 6, 6), np.uint8)
    m[1:4, 2:5, 1:5] = 1
    _, d = surface_distance_map(m, m)
    assert np.all(d == 0)


def test_parallel_planes():
    a = np.zeros((8, 6, 5), np.uint8)
    b = np.zeros_like(a)
    a[1] = 1
    b[4] = 1
    vox, d = surface_distance_map(a, b)
    assert len(vox) == 30
    np.testing.assert_allclose(d, 3.0)
    _, d2 = surface_distance_map(a, b, spacing=(0.5, 1, 1))
    np.testing.assert_allclose(d2, 1.5)


def brute_distances(pred, gt, spacing):
    bp = np.argwhere(boundary(pred))
    bg = np.argwhere(boundary(gt))
    s = np.asarray(spacing)
    out = {}
    for p in bp:
        out[tuple(p)] = min(float(np.sqrt(np.sum(((p - q) * s) ** 2))) for q in bg)
    return out


@pytest.mark.parametrize("seed", range(10))
def test_distance_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    pred = (rng.random((6, 5, 4)) < 0.4).astype(np.uint8)
    gt = (rng.random((6, 5, 4)) < 0.4).astype(np.uint8)
    spacing = (1.0, 0.7, 2.0)
    vox, d = surface_distance_map(pred, gt, spacing)
    oracle = brute_distances(pred, gt, spacing)
    assert {tuple(v) for v in vox} == set(oracle)
    for v, dist in zip(vox, d):
        assert dist == pytest.approx(oracle[tuple(v)], abs=1e-9)


def test_symmetric_distance():
    rng = np.random.default_rng(3)
    pred = (rng.random((6, 6, 6)) < 0.3).astype(np.uint8)
    gt = (rng.random((6, 6, 6)) < 0.3).astype(np.uint8)
    forward = brute_distances(pred, gt, (1, 1, 1))
    reverse = brute_distances(gt, pred, (1, 1, 1))
    vox, d = surface_distance_map(pred, gt, symmetric=True)
    for v, dist in zip(vox, d):
        key = tuple(v)
        assert dist == pytest.approx(max(forward.get(key, -1), reverse.get(key, -1)))
    dense = distance_volume(pred, gt, symmetric=True)
    assert np.count_nonzero(dense >= 0) == len(vox)


def test_distance_empty():
    with pytest.raises(EmptyMask):
        surface_distance_map(np.zeros((3, 3, 3)), np.ones((3, 3, 3)))


def test_report_statistics():
    one = report([{"case": "a", "dice": 0.8, "jaccard": 0.8 / 1.2}])
    assert one["dice"] == {"mean": pytest.approx(0.8), "std": 0.0}
    two = report([{"case": "a", "dice": 0.6, "jaccard": 0.5}, {"case": "b", "dice": 1.0, "jaccard": 1.0}])
    assert two["dice"]["mean"] == pytest.approx(0.8)
    assert two["dice"]["std"] == pytest.approx(0.2)
    with pytest.raises(ValueError):
        report([])


def test_report_files(tmp_path):
    a, b = flat_masks(100, 100, 50)
    summary = report([evaluate_case("x", a, b), evaluate_case("y", a, a)])
    write_report(summary, tmp_path / "r.json", tmp_path / "r.txt")
    assert json.loads((tmp_path / "r.json").read_text())["dice"]["mean"] == pytest.approx(0.75)
    text = (tmp_path / "r.txt").read_text()
    assert "75.00" in text and "mean±std" in text
    assert format_report(summary).splitlines()[1].split()[1] == "50.00"
