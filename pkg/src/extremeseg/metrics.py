"""Overlap metrics, surface distances and summary reports."""
from __future__ import annotations

import json
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import EmptyMask
from .volume import check_same_dims

DISTANCE_SENTINEL = -1.0


def dice(a, b) -> float:
    """``2|a & b| / (|a| + |b|)``; 1.0 when both are empty."""
    a = np.asarray(a) > 0
    b = np.asarray(b) > 0
    check_same_dims(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(a & b)) / total


def jaccard(a, b) -> float:
    """``|a & b| / |a | b|``; 1.0 when both are empty."""
    a = np.asarray(a) > 0
    b = np.asarray(b) > 0
    check_same_dims(a, b)
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a & b)) / union


def precision(pred, gt) -> float:
    pred = np.asarray(pred) > 0
    gt = np.asarray(gt) > 0
    check_same_dims(pred, gt)
    n = int(pred.sum())
    return float(np.count_nonzero(pred & gt)) / n if n else 1.0


_SIX = ndimage.generate_binary_structure(3, 1)


def boundary(mask) -> np.ndarray:
    """Mask voxels with at least one face neighbour outside the mask (or the volume)."""
    m = np.asarray(mask) > 0
    eroded = ndimage.binary_erosion(m, structure=_SIX, border_value=0)
    return m & ~eroded


def surface_distance_map(pred, gt, spacing=(1.0, 1.0, 1.0), symmetric: bool = False):
    """Distance (mm) from each boundary voxel of ``pred`` to the nearest ``gt`` boundary voxel.

    Returns ``(voxels, distances)`` with ``voxels`` an ``(M, 3)`` int array.
    With ``symmetric=True`` the boundary voxels of ``gt`` are added with their
    distance to the ``pred`` boundary; a voxel on both boundaries keeps the
    larger of its two distances.
    """
    pred = np.asarray(pred) > 0
    gt = np.asarray(gt) > 0
    check_same_dims(pred, gt)
    if not pred.any() or not gt.any():
        raise EmptyMask("surface distance needs two nonempty masks")
    bp, bg = boundary(pred), boundary(gt)
    to_gt = ndimage.distance_transform_edt(~bg, sampling=spacing)
    dist = np.where(bp, to_gt, DISTANCE_SENTINEL)
    if symmetric:
        to_pred = ndimage.distance_transform_edt(~bp, sampling=spacing)
        dist = np.maximum(dist, np.where(bg, to_pred, DISTANCE_SENTINEL))
    voxels = np.argwhere(dist >= 0)
    return voxels, dist[dist >= 0]


def distance_volume(pred, gt, spacing=(1.0, 1.0, 1.0), symmetric: bool = False) -> np.ndarray:
    """Dense float32 map of :func:`surface_distance_map`; other voxels hold -1."""
    voxels, d = surface_distance_map(pred, gt, spacing, symmetric)
    out = np.full(np.shape(pred), DISTANCE_SENTINEL, dtype=np.float32)
    out[voxels[:, 0], voxels[:, 1], voxels[:, 2]] = d
    return out


def evaluate_case(name: str, pred, gt) -> dict:
    return {"case": name, "dice": dice(pred, gt), "jaccard": jaccard(pred, gt)}


def report(rows: Sequence[dict]) -> dict:
    """Mean and population std of Dice and Jaccard plus the per-case rows.

    ``rows`` are dicts with keys ``case``, ``dice`` and ``jaccard``.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("report needs at least one case")
    summary = {"n_cases": len(rows), "cases": rows}
    for key in ("dice", "jaccard"):
        vals = np.array([r[key] for r in rows], dtype=np.float64)
        summary[key] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return summary


def format_report(summary: dict) -> str:
    """Aligned text table of a :func:`report` summary, values in percent."""
    width = max([len("mean±std")] + [len(str(r["case"])) for r in summary["cases"]])
    lines = [f"{'case':<{width}}  {'Dice [%]':>14}  {'Jaccard [%]':>14}"]
    for r in summary["cases"]:
        lines.append(f"{r['case']:<{width}}  {100 * r['dice']:>14.2f}  {100 * r['jaccard']:>14.2f}")
    d, j = summary["dice"], summary["jaccard"]
    lines.append(f"{'mean±std':<{width}}  {100 * d['mean']:>7.2f}±{100 * d['std']:<6.2f}"
                 f"  {100 * j['mean']:>7.2f}±{100 * j['std']:<6.2f}")
    return "\n".join(lines)


def write_report(summary: dict, json_path, text_path=None) -> None:
    with open(json_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if text_path is not None:
        with open(text_path, "w") as fh:
            fh.write(format_report(summary) + "\n")
