"""Partial cross-entropy, supervised contrastive loss and the fine-tune term.

Every loss returns its value together with the exact gradient w.r.t. the
network outputs it consumes: two-channel logits ``(2, X, Y, Z)`` for the
cross-entropy terms, the feature field ``(D, X, Y, Z)`` for the contrastive
term.

``reduction="sum"`` gives the plain sums over voxels. ``reduction="mean"``
divides the cross-entropy terms (including the weighted pseudo-label term) by
the number of labeled voxels; training uses it so the step size does not
depend on patch size.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import MissingClass, NoLabeledVoxels, ZeroNormFeature

CLAMP = 1e-7


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _sigmoid(x):
    return np.exp(_log_sigmoid(x))


def _ce_terms(prob, target_pos: np.ndarray, target_neg: np.ndarray):
    """Per-voxel CE values and d(loss)/d(logit_fg - logit_bg), clamp-aware."""
    p = np.asarray(prob, dtype=np.float64)
    pc = np.clip(p, CLAMP, 1.0 - CLAMP)
    inside = (p >= CLAMP) & (p <= 1.0 - CLAMP)
    loss = np.where(target_pos, -np.log(pc), 0.0) + np.where(target_neg, -np.log1p(-pc), 0.0)
    # d(-log p)/dd = -(1 - p);  d(-log(1 - p))/dd = p   with d = l1 - l0
    dd = np.where(target_pos, -(1.0 - p), 0.0) + np.where(target_neg, p, 0.0)
    return loss, np.where(inside, dd, 0.0)


def _to_logit_grad(dd, dtype):
    return np.stack([-dd, dd]).astype(dtype)


def _labeled_count(y) -> int:
    return int(np.count_nonzero((y == 0) | (y == 1)))


def pce_loss(prob, y, reduction: str = "sum") -> Tuple[float, np.ndarray]:
    """Cross-entropy over voxels labeled 0 or 1; label 2 is ignored.

    Probabilities are clamped to ``[1e-7, 1 - 1e-7]`` before the log.
    """
    prob = np.asarray(prob)
    y = np.asarray(y)
    if prob.shape != y.shape:
        raise ValueError(f"prob shape {prob.shape} does not match mask {y.shape}")
    n = _labeled_count(y)
    if n == 0:
        raise NoLabeledVoxels("mask has no voxels labeled 0 or 1")
    loss, dd = _ce_terms(prob, y == 1, y == 0)
    total = float(loss.sum())
    if reduction == "mean":
        total /= n
        dd = dd / n
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    return total, _to_logit_grad(dd, prob.dtype)


def finetune_loss(prob, y, pseudo_pos, w: float, reduction: str = "sum") -> Tuple[float, np.ndarray]:
    """Partial CE plus ``-w * sum(log p)`` over the pseudo-positive voxels.

    ``pseudo_pos`` is a boolean mask (or anything convertible to one) of
    voxels that must all carry label 2 in ``y``.
    """
    prob = np.asarray(prob)
    y = np.asarray(y)
    pseudo = np.zeros(y.shape, dtype=bool) if pseudo_pos is None else np.asarray(pseudo_pos, dtype=bool)
    if pseudo.shape != y.shape:
        raise ValueError("pseudo-positive mask shape does not match the label mask")
    if np.any(pseudo & (y != 2)):
        raise ValueError("pseudo-positives must be unlabeled voxels")
    total, grad = pce_loss(prob, y, reduction="sum")
    if w != 0 and pseudo.any():
        extra, dd = _ce_terms(prob, pseudo, np.zeros_like(pseudo))
        total += w * float(extra.sum())
        grad = grad + _to_logit_grad(w * dd, prob.dtype)
    if reduction == "mean":
        n = _labeled_count(y)
        total /= n
        grad = (grad / n).astype(grad.dtype)
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    return total, grad


@dataclass
class SamplePlan:
    """Voxel coordinates ``(N, 3)`` drawn from the positive and negative sets."""

    positives: np.ndarray
    negatives: np.ndarray
    N: int
    tau: float = 0.1

    def __post_init__(self):
        self.positives = np.asarray(self.positives, dtype=np.intp).reshape(-1, 3)
        self.negatives = np.asarray(self.negatives, dtype=np.intp).reshape(-1, 3)
        if len(self.positives) != self.N or len(self.negatives) != self.N:
            raise ValueError("plan must hold exactly N positives and N negatives")
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    def swapped(self) -> "SamplePlan":
        return SamplePlan(self.negatives, self.positives, self.N, self.tau)


def sample_plan(y, N: int, rng: np.random.Generator, tau: float = 0.1) -> SamplePlan:
    """Uniform draws with replacement of N label-1 and N label-0 voxels."""
    if N < 1:
        raise ValueError("N must be >= 1")
    y = np.asarray(y)
    pos = np.argwhere(y == 1)
    neg = np.argwhere(y == 0)
    if len(pos) == 0 or len(neg) == 0:
        raise MissingClass("patch lacks positive or negative voxels")
    return SamplePlan(pos[rng.integers(0, len(pos), N)], neg[rng.integers(0, len(neg), N)], N, tau)


def ctr_loss(features, plan: SamplePlan) -> Tuple[float, np.ndarray]:
    """Sigmoid-of-cosine contrastive loss averaged over all 2N sampled anchors.

    For each anchor the other 2N - 1 samples contribute ``log(1 - s)`` if they
    carry the other label and ``log(s)`` otherwise, with
    ``s = sigmoid(cos / tau)``, all scaled by ``-1 / (2N - 1)``.
    """
    features = np.asarray(features)
    N = plan.N
    idx = np.concatenate([plan.positives, plan.negatives])
    labels = np.r_[np.ones(N, bool), np.zeros(N, bool)]
    z = features[:, idx[:, 0], idx[:, 1], idx[:, 2]].T.astype(np.float64)
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms == 0):
        raise ZeroNormFeature("sampled feature vector has zero norm")
    u = z / norms[:, None]
    x = (u @ u.T) / plan.tau
    same = labels[:, None] == labels[None, :]
    off = ~np.eye(2 * N, dtype=bool)
    terms = np.where(same, _log_sigmoid(x), _log_sigmoid(-x))
    scale = 1.0 / ((2 * N - 1) * (2 * N))
    loss = -scale * float(terms[off].sum())

    dterm = np.where(same, 1.0 - _sigmoid(x), -_sigmoid(x))
    G = np.where(off, -scale * dterm / plan.tau, 0.0)
    du = (G + G.T) @ u
    dz = (du - u * np.sum(u * du, axis=1, keepdims=True)) / norms[:, None]
    grad = np.zeros(features.shape, dtype=np.float64)
    for d in range(features.shape[0]):
        np.add.at(grad[d], (idx[:, 0], idx[:, 1], idx[:, 2]), dz[:, d])
    return loss, grad.astype(features.dtype)


def train_loss(prob, features, y, plan: Optional[SamplePlan], reduction: str = "sum"):
    """Partial CE plus the contrastive term; ``plan=None`` drops the latter.

    Returns ``(loss, dlogits, dfeatures)``.
    """
    loss, dlogits = pce_loss(prob, y, reduction)
    if plan is None:
        return loss, dlogits, np.zeros_like(np.asarray(features))
    ctr, dfeat = ctr_loss(features, plan)
    return loss + ctr, dlogits, dfeat
