"""Similarity-aware label propagation.

Each fine-tune iteration draws ``N`` referring voxels from the positives of
the current patch. An unlabeled voxel becomes a pseudo-positive for that
iteration when more than ``alpha * N`` referring features have cosine
similarity above ``lam`` with its own feature.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .errors import NoPositives, ZeroNormFeature
from .inference import sliding_window_infer
from .volume import POSITIVE, UNLABELED, check_voxel


@dataclass
class SimpleConfig:
    N: int = 100
    lam: float = 0.96
    alpha: float = 0.96
    w: float = 0.1

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not 0 < self.lam < 1:
            raise ValueError("lam must lie in (0, 1)")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.w < 0:
            raise ValueError("w must be nonnegative")


def _unit(vectors: np.ndarray) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ZeroNormFeature("feature vector has zero norm")
    return vectors / norms


def similarity_score(features, query: Sequence[int], referring, lam: float = 0.96) -> int:
    """Number of referring voxels whose cosine similarity with ``query`` exceeds ``lam``."""
    features = np.asarray(features)
    dims = features.shape[1:]
    q = check_voxel(query, dims)
    refs = np.asarray(referring, dtype=np.intp).reshape(-1, 3)
    for r in refs:
        check_voxel(r, dims)
    zq = _unit(features[(slice(None),) + q])
    zr = _unit(features[:, refs[:, 0], refs[:, 1], refs[:, 2]].T)
    return int(np.count_nonzero(zr @ zq > lam))


def sample_referring(y, N: int, rng: np.random.Generator) -> np.ndarray:
    """N positive voxel coordinates drawn uniformly with replacement."""
    pos = np.argwhere(np.asarray(y) == POSITIVE)
    if len(pos) == 0:
        raise NoPositives("no positive voxels to refer to")
    return pos[rng.integers(0, len(pos), N)]


def propagate_labels(features, y, cfg: SimpleConfig, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask of unlabeled voxels promoted to positive for one iteration."""
    features = np.asarray(features)
    y = np.asarray(y)
    if features.shape[1:] != y.shape:
        raise ValueError("feature field and mask dims differ")
    refs = sample_referring(y, cfg.N, rng)
    out = np.zeros(y.shape, dtype=bool)
    unl = np.argwhere(y == UNLABELED)
    if len(unl) == 0:
        return out
    zr = _unit(features[:, refs[:, 0], refs[:, 1], refs[:, 2]].T)
    zu = _unit(features[:, unl[:, 0], unl[:, 1], unl[:, 2]].T)
    scores = np.count_nonzero(zu @ zr.T > cfg.lam, axis=1)
    hit = unl[scores > cfg.alpha * cfg.N]
    out[hit[:, 0], hit[:, 1], hit[:, 2]] = True
    return out


def binarize(prob) -> np.ndarray:
    """``prob > 0.5`` as a {0, 1} mask (0.5 itself maps to 0)."""
    return (np.asarray(prob) > 0.5).astype(np.uint8)


def binarize_training_masks(model, volumes, patch_dims) -> List[np.ndarray]:
    """Binary pseudo-masks for each training volume from sliding-window inference."""
    return [binarize(sliding_window_infer(model, v, patch_dims)) for v in volumes]
