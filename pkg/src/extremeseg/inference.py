"""Sliding-window inference with half-patch stride."""
from __future__ import annotations

import itertools
from typing import List, Sequence

import numpy as np

from .errors import VolumeTooSmall
from .net import ModelState, forward


def window_offsets(n: int, patch: int, stride: int = None) -> List[int]:
    """Window starts along one axis; the last window is clamped to the edge."""
    if patch > n:
        raise VolumeTooSmall(f"patch {patch} larger than volume extent {n}")
    stride = stride or max(patch // 2, 1)
    offs = list(range(0, n - patch + 1, stride))
    if offs[-1] + patch < n:
        offs.append(n - patch)
    return offs


def sliding_window_infer(model: ModelState, v, patch_dims: Sequence[int]) -> np.ndarray:
    """Foreground probability map averaged over overlapping windows."""
    data = np.asarray(getattr(v, "data", v))
    grids = [window_offsets(n, p) for n, p in zip(data.shape, patch_dims)]
    acc = np.zeros(data.shape, dtype=np.float64)
    count = np.zeros(data.shape, dtype=np.int32)
    px, py, pz = patch_dims
    for ox, oy, oz in itertools.product(*grids):
        sl = (slice(ox, ox + px), slice(oy, oy + py), slice(oz, oz + pz))
        acc[sl] += forward(model, data[sl]).prob
        count[sl] += 1
    return np.clip(acc / count, 0.0, 1.0)
