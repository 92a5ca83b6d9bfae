"""Initial pseudo-masks from six extreme points.

Scribbles are geodesics on the gradient-magnitude map between opposite extreme
points, dilated and clipped to the extreme-point box. They seed an iterated
random walker: each solve promotes confident voxels (prob > ``fg_threshold``
or < ``bg_threshold``) to seeds for the next solve.
"""
from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy import sparse

from .errors import CgDivergence, EmptySeeds
from .volume import (NEGATIVE, POSITIVE, UNLABELED, ExtremePoints, Volume3D,
                     bbox_from_extremes, check_voxel, dilate, gradient_magnitude)

log = logging.getLogger(__name__)


@dataclass
class RwConfig:
    """Random-walker and scribble settings.

    ``beta`` applies to intensities rescaled to [0, 1] inside :func:`rw_solve`;
    edge weights are ``exp(-beta * diff**2) + epsilon_w``. The graph is
    6-connected. ``cg_max_iters=None`` means ``min(10 * n_unseeded, 20000)``.
    """

    beta: float = 90.0
    epsilon_w: float = 1e-6
    cg_tol: float = 1e-6
    cg_max_iters: Optional[int] = None
    fg_threshold: float = 0.8
    bg_threshold: float = 0.1
    n_iterations: int = 7
    dilation_iters: int = 1
    path_eps: float = 1e-4

    def __post_init__(self):
        if not 0.0 <= self.bg_threshold < self.fg_threshold <= 1.0:
            raise ValueError("need 0 <= bg_threshold < fg_threshold <= 1")
        if self.n_iterations < 1 or self.dilation_iters < 1:
            raise ValueError("n_iterations and dilation_iters must be >= 1")
        if self.beta <= 0 or self.epsilon_w <= 0:
            raise ValueError("beta and epsilon_w must be positive")


@dataclass
class SeedSet:
    """Boolean foreground / background seed masks."""

    foreground: np.ndarray
    background: np.ndarray

    def __post_init__(self):
        self.foreground = np.asarray(self.foreground, dtype=bool)
        self.background = np.asarray(self.background, dtype=bool)
        if self.foreground.shape != self.background.shape:
            raise ValueError("seed masks have different shapes")
        if np.any(self.foreground & self.background):
            raise ValueError("foreground and background seeds overlap")


def _as_array(v) -> np.ndarray:
    return v.data if isinstance(v, Volume3D) else np.asarray(v)


def dijkstra_path(cost, src: Sequence[int], dst: Sequence[int], path_eps: float = 1e-4,
                  return_cost: bool = False):
    """Cheapest 6-connected path from ``src`` to ``dst``.

    Stepping onto voxel ``u`` costs ``cost[u] + path_eps``; the start voxel is
    free. Returns the voxel list (both endpoints included), plus the total cost
    when ``return_cost`` is set.
    """
    c = _as_array(cost).astype(np.float64)
    dims = c.shape
    src = check_voxel(src, dims)
    dst = check_voxel(dst, dims)
    if np.any(c < 0):
        raise ValueError("path costs must be nonnegative")
    nx, ny, nz = dims
    step = (c + path_eps).ravel().tolist()
    sxy = ny * nz
    s = (src[0] * ny + src[1]) * nz + src[2]
    t = (dst[0] * ny + dst[1]) * nz + dst[2]

    n = nx * ny * nz
    dist = [float("inf")] * n
    prev = [-1] * n
    done = bytearray(n)
    dist[s] = 0.0
    heap = [(0.0, s)]
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = 1
        if u == t:
            break
        x, rem = divmod(u, sxy)
        y, z = divmod(rem, nz)
        nbrs = []
        if x > 0:
            nbrs.append(u - sxy)
        if x < nx - 1:
            nbrs.append(u + sxy)
        if y > 0:
            nbrs.append(u - nz)
        if y < ny - 1:
            nbrs.append(u + nz)
        if z > 0:
            nbrs.append(u - 1)
        if z < nz - 1:
            nbrs.append(u + 1)
        for w in nbrs:
            if done[w]:
                continue
            nd = d + step[w]
            if nd < dist[w]:
                dist[w] = nd
                prev[w] = u
                heapq.heappush(heap, (nd, w))

    path = []
    u = t
    while u != -1:
        x, rem = divmod(u, sxy)
        y, z = divmod(rem, nz)
        path.append((x, y, z))
        u = prev[u]
    path.reverse()
    if return_cost:
        return path, dist[t]
    return path


def build_scribbles(v: Volume3D, e: ExtremePoints, cfg: Optional[RwConfig] = None) -> np.ndarray:
    """Union of the three extreme-pair geodesics, dilated, clipped to the box."""
    cfg = cfg or RwConfig()
    e.check_inside(v.dims)
    grad = gradient_magnitude(v).data
    scribble = np.zeros(v.dims, dtype=np.uint8)
    for a, b in e.pairs():
        for p in dijkstra_path(grad, a, b, path_eps=cfg.path_eps):
            scribble[p] = 1
    scribble = dilate(scribble, cfg.dilation_iters)
    return scribble * bbox_from_extremes(e).mask(v.dims)


def _edge_weights(data: np.ndarray, beta: float, eps: float):
    """Edges (i, j, w) of the 6-connected grid in C-order voxel ids."""
    lo, hi = data.min(), data.max()
    scaled = (data - lo) / (hi - lo) if hi > lo else np.zeros_like(data)
    ids = np.arange(data.size).reshape(data.shape)
    heads, tails, weights = [], [], []
    for axis in range(3):
        if data.shape[axis] < 2:
            continue
        a = [slice(None)] * 3
        b = [slice(None)] * 3
        a[axis] = slice(None, -1)
        b[axis] = slice(1, None)
        a, b = tuple(a), tuple(b)
        diff = scaled[a] - scaled[b]
        heads.append(ids[a].ravel())
        tails.append(ids[b].ravel())
        weights.append((np.exp(-beta * diff * diff) + eps).ravel())
    if not heads:
        return np.zeros(0, int), np.zeros(0, int), np.zeros(0)
    return np.concatenate(heads), np.concatenate(tails), np.concatenate(weights)


def graph_weights(v, beta: float = 90.0, eps: float = 1e-6) -> sparse.csr_matrix:
    """Symmetric weighted adjacency matrix used by the random walker."""
    data = _as_array(v).astype(np.float64)
    i, j, w = _edge_weights(data, beta, eps)
    n = data.size
    W = sparse.coo_matrix((np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))),
                          shape=(n, n))
    return W.tocsr()


def pcg(A, b: np.ndarray, tol: float, max_iters: int, x0: Optional[np.ndarray] = None):
    """Jacobi-preconditioned conjugate gradient on SPD ``A``.

    Stops when ``||r|| <= tol * ||b||``. Returns ``(x, iterations)``; raises
    :class:`CgDivergence` if the tolerance is not met within ``max_iters``.
    """
    inv_diag = 1.0 / A.diagonal()
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b) if x0 is None else x0.astype(np.float64).copy()
    if bnorm == 0.0:
        return np.zeros_like(b), 0
    r = b - A @ x
    target = tol * bnorm
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    for it in range(max_iters + 1):
        if np.linalg.norm(r) <= target:
            return x, it
        if it == max_iters:
            break
        Ap = A @ p
        step = rz / (p @ Ap)
        x += step * p
        r -= step * Ap
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise CgDivergence(f"residual {np.linalg.norm(r) / bnorm:.3e} above tol {tol:g} "
                       f"after {max_iters} iterations")


def rw_solve(v, seeds: SeedSet, cfg: Optional[RwConfig] = None, x0: Optional[np.ndarray] = None) -> np.ndarray:
    """Foreground probability of a two-label random walker.

    Seeds are fixed (1 on foreground, 0 on background); the remaining voxels
    solve the combinatorial Dirichlet problem ``L_UU x = -L_UM x_M``.
    ``x0`` optionally warm-starts CG with a full-size probability map.
    """
    cfg = cfg or RwConfig()
    data = _as_array(v).astype(np.float64)
    fg = seeds.foreground
    bg = seeds.background
    if fg.shape != data.shape:
        raise ValueError(f"seed shape {fg.shape} does not match volume {data.shape}")
    if not fg.any() or not bg.any():
        raise EmptySeeds("random walker needs both foreground and background seeds")

    out = np.ascontiguousarray(fg, dtype=np.float64)
    free = ~(fg | bg)
    if not free.any():
        return out
    W = graph_weights(data, cfg.beta, cfg.epsilon_w)
    deg = np.asarray(W.sum(axis=1)).ravel()
    flat_free = np.flatnonzero(free.ravel())
    flat_fg = np.flatnonzero(fg.ravel())
    W_free = W[flat_free]
    L_uu = (sparse.diags(deg[flat_free]) - W_free[:, flat_free]).tocsr()
    rhs = np.asarray(W_free[:, flat_fg].sum(axis=1)).ravel()
    max_iters = cfg.cg_max_iters or min(10 * flat_free.size, 20000)
    start = None if x0 is None else np.asarray(x0, dtype=np.float64).ravel()[flat_free]
    x, iters = pcg(L_uu, rhs, cfg.cg_tol, max_iters, x0=start)
    log.debug("random walker: %d unseeded voxels, %d CG iterations", flat_free.size, iters)
    out.ravel()[flat_free] = x
    return np.clip(out, 0.0, 1.0)


def generate_initial_mask(v: Volume3D, e: ExtremePoints, cfg: Optional[RwConfig] = None,
                          history: Optional[List[dict]] = None) -> np.ndarray:
    """Trinary pseudo-mask: 0 outside the box, 1 confident foreground, 2 otherwise.

    ``n_iterations`` random-walker solves are run; between consecutive solves,
    unseeded voxels above ``fg_threshold`` / below ``bg_threshold`` become
    seeds (existing seeds keep their label). The last map is thresholded at
    ``fg_threshold`` and joined with the scribbles. Per-solve seed counts are
    appended to ``history`` when given.
    """
    cfg = cfg or RwConfig()
    e.check_inside(v.dims)
    inside = bbox_from_extremes(e).mask(v.dims).astype(bool)
    scribbles = build_scribbles(v, e, cfg).astype(bool)
    fg = scribbles.copy()
    bg = ~inside
    if not bg.any():
        raise EmptySeeds("extreme-point box covers the whole volume; no background seeds")
    prob = None
    for it in range(cfg.n_iterations):
        prob = rw_solve(v, SeedSet(fg, bg), cfg, x0=prob)
        if history is not None:
            history.append({"iteration": it + 1, "fg_seeds": int(fg.sum()), "bg_seeds": int(bg.sum())})
        if it + 1 < cfg.n_iterations:
            free = ~(fg | bg)
            fg = fg | (free & (prob > cfg.fg_threshold))
            bg = bg | (free & (prob < cfg.bg_threshold))

    mask = np.full(v.dims, UNLABELED, dtype=np.uint8)
    mask[(prob > cfg.fg_threshold) | scribbles] = POSITIVE
    mask[~inside] = NEGATIVE
    return mask
