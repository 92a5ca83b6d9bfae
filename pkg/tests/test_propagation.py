import math

import numpy as np
import pytest

from extremeseg.errors import NoPositives, VolumeTooSmall, ZeroNormFeature
from extremeseg.inference import sliding_window_infer, window_offsets
from extremeseg.net import Arch, ModelState, init_model
from extremeseg.propagation import (SimpleConfig, binarize, binarize_training_masks, propagate_labels,
                                    sample_referring, similarity_score)


def brute_score(features, q, refs, lam):
    count = 0
    zq = features[(slice(None),) + tuple(q)]
    for r in refs:
        zr = features[(slice(None),) + tuple(r)]
        dot = sum(float(a) * float(b) for a, b in zip(zq, zr))
        cos = dot / (math.sqrt(sum(float(a) ** 2 for a in zq)) * math.sqrt(sum(float(b) ** 2 for b in zr)))
        if cos > lam:
            count += 1
    return count


def test_identical_features_score_all():
    f = np.ones((3, 4, 1, 1))
    refs = [(i % 4, 0, 0) for i in range(5)]
    assert similarity_score(f, (0, 0, 0), refs) == 5


def test_orthogonal_features_score_zero():
    f = np.zeros((2, 2, 1, 1))
    f[0, 0] = 1.0
    f[1, 1] = 1.0
    assert similarity_score(f, (0, 0, 0), [(1, 0, 0)] * 5, lam=0.96) == 0


def test_zero_norm_feature():
    f = np.zeros((2, 2, 1, 1))
    f[0, 1] = 1.0
    with pytest.raises(ZeroNormFeature):
        similarity_score(f, (0, 0, 0), [(1, 0, 0)])


@pytest.mark.parametrize("seed", range(10))
def test_score_matches_double_loop(seed):
    rng = np.random.default_rng(seed)
    f = rng.normal(size=(3, 4, 4, 3))
    refs = [tuple(int(rng.integers(n)) for n in (4, 4, 3)) for _ in range(20)]
    q = (1, 2, 0)
    for lam in (0.0, 0.5, 0.9):
        assert similarity_score(f, q, refs, lam) == brute_score(f, q, refs, lam)


def brute_propagate(features, y, cfg, refs):
    out = np.zeros(y.shape, bool)
    for k in np.ndindex(y.shape):
        if y[k] == 2 and brute_score(features, k, refs, cfg.lam) > cfg.alpha * cfg.N:
            out[k] = True
    return out


def test_no_unlabeled_is_empty():
    y = np.ones((3, 3, 3), np.uint8)
    out = propagate_labels(np.ones((2, 3, 3, 3)), y, SimpleConfig(N=5), np.random.default_rng(0))
    assert not out.any()


def test_all_identical_promotes_everything():
    y = np.full((3, 3, 3), 2, np.uint8)
    y[1, 1, 1] = 1
    y[0, 0, 0] = 0
    out = propagate_labels(np.ones((2, 3, 3, 3)), y, SimpleConfig(N=100), np.random.default_rng(0))
    assert np.array_equal(out, y == 2)


def test_no_positives():
    with pytest.raises(NoPositives):
        propagate_labels(np.ones((2, 2, 2, 2)), np.full((2, 2, 2), 2), SimpleConfig(), np.random.default_rng(0))


def random_case(seed):
    rng = np.random.default_rng(seed)
    dims = (4, 4, 3)
    y = rng.integers(0, 3, dims).astype(np.uint8)
    y[0, 0, 0] = 1
    # clustered features so some voxels actually pass the threshold
    centre = rng.normal(size=3)
    f = centre[:, None, None, None] + rng.normal(scale=rng.uniform(0.05, 1.0), size=(3,) + dims)
    return rng, f, y


@pytest.mark.parametrize("seed", range(50))
def test_propagate_matches_brute_force(seed):
    _, f, y = random_case(seed)
    N = 1 + seed % 20
    cfg = SimpleConfig(N=N, lam=0.9, alpha=0.5)
    got = propagate_labels(f, y, cfg, np.random.default_rng(seed))
    refs = sample_referring(y, N, np.random.default_rng(seed))
    assert np.array_equal(got, brute_propagate(f, y, cfg, refs))
    assert not np.any(got & (y != 2))


@pytest.mark.parametrize("seed", range(50))
def test_propagate_monotone(seed):
    _, f, y = random_case(seed)
    prev = None
    for lam in (0.5, 0.8, 0.9, 0.96, 0.99):
        cur = propagate_labels(f, y, SimpleConfig(N=10, lam=lam, alpha=0.5), np.random.default_rng(seed))
        if prev is not None:
            assert not np.any(cur & ~prev)
        prev = cur
    prev = None
    for alpha in (0.1, 0.5, 0.8, 0.96, 1.0):
        cur = propagate_labels(f, y, SimpleConfig(N=10, lam=0.8, alpha=alpha), np.random.default_rng(seed))
        if prev is not None:
            assert not np.any(cur & ~prev)
        prev = cur


def test_strict_acceptance_threshold():
    # 97 of 100 identical referring voxels are needed at alpha 0.96
    y = np.full((100, 1, 2), 2, np.uint8)
    y[:, 0, 0] = 1
    f = np.zeros((2, 100, 1, 2))
    f[0] = 1.0
    f[1, :4, 0, 0] = 50.0  # four positives point elsewhere
    f[1, 0, 0, 0] = 0.0
    rng = np.random.default_rng(3)
    refs = sample_referring(y, 100, np.random.default_rng(3))
    hits = sum(1 for r in refs if r[0] == 0 or r[0] >= 4)
    got = propagate_labels(f, y, SimpleConfig(), rng)
    assert got[0, 0, 1] == (hits > 96)


def test_config_validation():
    for kw in (dict(N=0), dict(lam=1.0), dict(alpha=0.0), dict(w=-1.0)):
        with pytest.raises(ValueError):
            SimpleConfig(**kw)


def test_binarize_tie_rule():
    assert binarize(np.full((2, 2, 2), 0.5)).sum() == 0
    assert binarize(np.full((2, 2, 2), 0.9)).all()


def constant_model(p):
    m = init_model(Arch(), 0)
    m = ModelState(m.arch, np.zeros_like(m.params), 0)
    m.views()["cls.b"][:] = [0.0, math.log(p / (1 - p))]
    return m


def test_binarize_training_masks_constant_model():
    m = constant_model(0.9)
    vols = [np.zeros((16, 16, 8), np.float32), np.ones((16, 8, 8), np.float32)]
    masks = binarize_training_masks(m, vols, (8, 8, 8))
    assert [mk.shape for mk in masks] == [(16, 16, 8), (16, 8, 8)]
    assert all(mk.all() for mk in masks)


def test_window_offsets():
    assert window_offsets(96, 64) == [0, 32]
    assert window_offsets(64, 64) == [0]
    assert window_offsets(48, 32) == [0, 16]
    assert window_offsets(50, 32) == [0, 16, 18]
    with pytest.raises(VolumeTooSmall):
        window_offsets(16, 32)


def test_sliding_window_covers_and_averages():
    m = constant_model(0.7)
    p = sliding_window_infer(m, np.random.default_rng(0).normal(size=(20, 12, 8)).astype(np.float32), (8, 8, 8))
    np.testing.assert_allclose(p, 0.7, rtol=1e-5)
