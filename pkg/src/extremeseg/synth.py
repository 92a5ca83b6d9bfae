"""Synthetic contrast-enhanced volumes with one ellipsoidal lesion each.

The lesion is a randomly rotated ellipsoid (or, in lobulated mode, a union of
2-3 overlapping ones). Intensity is a background level plus the lesion
contrast, an additive low-frequency bias field and Gaussian noise.
Geometry is drawn before any intensity randomness, so the ground truth for a
given seed does not depend on the noise settings.

By default enhancement fades towards the lesion margin (``rim_falloff``) and
the margin is blurred (``edge_blur``, mm). With sharp, uniform lesions the
random walker recovers nearly the whole lesion and there is nothing left for
label propagation to do; soft margins leave the outer shell unlabeled, as
with real tumours.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

from .errors import EmptyMask, SpecInfeasible
from .io import read_mask, read_volume, write_mask, write_volume
from .volume import ExtremePoints, Volume3D


@dataclass
class SynthSpec:
    dims: Tuple[int, int, int] = (48, 48, 32)
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    radii_min: Tuple[float, float, float] = (5.0, 5.0, 4.0)
    radii_max: Tuple[float, float, float] = (9.0, 9.0, 7.0)
    margin: int = 2
    background_mean: float = 0.0
    contrast: float = 1.0
    noise_sigma: float = 0.15
    bias_amplitude: float = 0.2
    rim_falloff: float = 0.6
    edge_blur: float = 1.0
    n_distractors: int = 0
    distractor_level: float = 0.45
    distractor_radii: Tuple[float, float] = (2.0, 5.0)
    lobulated: bool = False
    jitter: bool = False

    def __post_init__(self):
        self.dims = tuple(int(n) for n in self.dims)
        self.spacing = tuple(float(s) for s in self.spacing)
        self.radii_min = tuple(float(r) for r in self.radii_min)
        self.radii_max = tuple(float(r) for r in self.radii_max)
        self.distractor_radii = tuple(float(r) for r in self.distractor_radii)

    def check(self) -> None:
        if any(lo <= 0 or lo > hi for lo, hi in zip(self.radii_min, self.radii_max)):
            raise SpecInfeasible("need 0 < radii_min <= radii_max")
        # a rotated ellipsoid fits in a sphere of its largest radius
        reach = max(self.radii_max) * (1.6 if self.lobulated else 1.0)
        for n, s in zip(self.dims, self.spacing):
            if 2 * (reach / s + self.margin) >= n - 1:
                raise SpecInfeasible(f"lesion of reach {reach} mm does not fit in {n} voxels with margin")
        if self.contrast - 0.0 <= 2 * self.noise_sigma:
            raise SpecInfeasible("lesion contrast must exceed twice the noise sigma")

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


def _grid_mm(dims, spacing):
    axes = [np.arange(n) * s for n, s in zip(dims, spacing)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def _ellipsoid_radius(points, center, radii, rot: Rotation):
    """Normalized ellipsoidal radius; <= 1 inside."""
    local = (points - center) @ rot.as_matrix()
    return np.sqrt(np.sum((local / np.asarray(radii)) ** 2, axis=-1))


def gen_case(spec: SynthSpec, rng: np.random.Generator):
    """Return ``(Volume3D, ground_truth_mask)``."""
    spec.check()
    pts = _grid_mm(spec.dims, spec.spacing)
    extent = np.array([(n - 1) * s for n, s in zip(spec.dims, spec.spacing)])
    reach = max(spec.radii_max)
    n_lobes = int(rng.integers(2, 4)) if spec.lobulated else 1
    lo = np.array(spec.radii_min)
    hi = np.array(spec.radii_max)
    lobe_reach = reach * (1.6 if spec.lobulated else 1.0)
    pad = lobe_reach + spec.margin * np.array(spec.spacing)
    center = pad + rng.random(3) * (extent - 2 * pad)

    rho = np.full(spec.dims, np.inf)
    for i in range(n_lobes):
        radii = lo + rng.random(3) * (hi - lo)
        rot = Rotation.random(random_state=rng)
        c = center if i == 0 else center + (rng.random(3) - 0.5) * 1.2 * radii.min()
        if spec.lobulated and i > 0:
            radii = radii * 0.6
        rho = np.minimum(rho, _ellipsoid_radius(pts, c, radii, rot))
    gt = (rho <= 1.0).astype(np.uint8)
    if not gt.any():
        raise SpecInfeasible("drawn lesion covers no voxel centers")

    tissue = np.zeros(spec.dims)
    if spec.n_distractors:
        # enhancing background tissue, kept clear of the lesion
        clearance = ndimage.distance_transform_edt(gt == 0, sampling=spec.spacing)
        rlo, rhi = spec.distractor_radii
        for _ in range(spec.n_distractors):
            r = rlo + rng.random(3) * (rhi - rlo)
            rot = Rotation.random(random_state=rng)
            c = rng.random(3) * extent
            blob = _ellipsoid_radius(pts, c, r, rot) <= 1.0
            blob &= clearance > 2.0 * max(spec.spacing)
            tissue = np.maximum(tissue, blob.astype(np.float64))

    # intensity randomness is drawn after the geometry
    phases = rng.random(3) * 2 * np.pi
    freqs = 0.5 + rng.random(3)
    bias = spec.bias_amplitude * np.prod(
        [np.cos(np.pi * freqs[a] * pts[..., a] / max(extent[a], 1.0) + phases[a]) for a in range(3)], axis=0)
    noise = rng.normal(0.0, 1.0, size=spec.dims)

    lesion = gt.astype(np.float64)
    if spec.rim_falloff:
        lesion = lesion * (1.0 - spec.rim_falloff * np.clip(rho, 0.0, 1.0) ** 2)
    lesion = np.maximum(lesion, spec.distractor_level * tissue)
    if spec.edge_blur:
        lesion = ndimage.gaussian_filter(lesion, spec.edge_blur / np.array(spec.spacing))
    data = spec.background_mean + spec.contrast * lesion + bias + spec.noise_sigma * noise
    return Volume3D(data.astype(np.float32), spec.spacing), gt


def extract_extremes(gt, jitter_rng: Optional[np.random.Generator] = None) -> ExtremePoints:
    """Six extreme voxels of a mask; ties go to the lexicographically first voxel.

    With ``jitter_rng`` each point moves by up to one voxel along the two axes
    tangent to its direction (clipped to the volume).
    """
    gt = np.asarray(gt)
    idx = np.argwhere(gt > 0)  # lexicographic (x, y, z) order
    if len(idx) == 0:
        raise EmptyMask("cannot extract extreme points from an empty mask")
    points = {}
    for axis, name in enumerate("xyz"):
        for kind, target in (("min", idx[:, axis].min()), ("max", idx[:, axis].max())):
            p = idx[np.flatnonzero(idx[:, axis] == target)[0]].copy()
            if jitter_rng is not None:
                for t in range(3):
                    if t != axis:
                        p[t] = np.clip(p[t] + jitter_rng.integers(-1, 2), 0, gt.shape[t] - 1)
            points[name + kind] = tuple(int(c) for c in p)
    return ExtremePoints(**points)


def case_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def gen_dataset(spec: SynthSpec, n_train: int, n_test: int, seed: int, out_dir) -> dict:
    """Write volumes, ground truth, extreme points and ``manifest.json``."""
    if n_train < 1 or n_test < 1:
        raise ValueError("need at least one training and one test case")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cases = []
    for i in range(n_train + n_test):
        rng = case_rng(seed, i)
        vol, gt = gen_case(spec, rng)
        ext = extract_extremes(gt, rng if spec.jitter else None)
        name = f"case_{i:03d}"
        files = {"volume": f"{name}_volume.vol", "gt": f"{name}_gt.vol", "extremes": f"{name}_extremes.json"}
        write_volume(vol, out / files["volume"])
        write_mask(gt, out / files["gt"], vol.spacing)
        (out / files["extremes"]).write_text(json.dumps(ext.to_dict(), sort_keys=True) + "\n")
        cases.append({"id": name, "split": "train" if i < n_train else "test", **files})
    manifest = {"seed": int(seed), "spec": spec.to_dict(), "n_train": n_train, "n_test": n_test, "cases": cases}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


@dataclass
class Case:
    id: str
    split: str
    volume: Volume3D
    gt: np.ndarray
    extremes: ExtremePoints
    meta: dict = field(default_factory=dict)


def load_dataset(root):
    """Read a dataset written by :func:`gen_dataset`; returns ``(manifest, cases)``."""
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    cases = []
    for c in manifest["cases"]:
        cases.append(Case(
            id=c["id"], split=c["split"],
            volume=read_volume(root / c["volume"]),
            gt=read_mask(root / c["gt"]),
            extremes=ExtremePoints.from_dict(json.loads((root / c["extremes"]).read_text())),
            meta=c,
        ))
    return manifest, cases
