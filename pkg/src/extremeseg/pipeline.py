"""Train, fine-tune with label propagation, retrain.

1. ``train_stage``: partial CE + contrastive loss on the trinary pseudo-masks.
2. ``finetune_stage``: start from the trained weights; each iteration adds
   pseudo-positives found by :func:`propagate_labels` to the partial CE. The
   pseudo-positives live for that one iteration only.
3. Binarize every training volume with the fine-tuned network.
4. ``retrain_stage``: fresh initialization, full CE on the binary masks.

Every step draws one patch centred on a positive voxel of the initial mask
and one patch at a uniformly random position; their gradients are averaged.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import MissingClass, NoForeground, NoLabeledVoxels, NoPositives, VolumeTooSmall
from .inference import sliding_window_infer
from .losses import finetune_loss, pce_loss, sample_plan, train_loss
from .metrics import evaluate_case, precision, report
from .net import Arch, ModelState, backward, check_patch_dims, forward, init_model, poly_lr, save_model, sgd_step
from .propagation import SimpleConfig, binarize, propagate_labels
from .seeds import RwConfig, generate_initial_mask
from .volume import POSITIVE, ExtremePoints, Volume3D, normalize

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    """All stage settings. Learning rates, N, tau and the propagation
    settings default to the reference values; epochs and patch size are
    desk-scale and can be raised to clinical scale."""

    patch_dims: Tuple[int, int, int] = (32, 32, 16)
    arch: Arch = field(default_factory=Arch)
    epochs_train: int = 60
    finetune_iters: int = 100
    epochs_retrain: int = 60
    eta_train: float = 0.01
    eta_finetune: float = 1e-4
    momentum: float = 0.9
    N: int = 100
    tau: float = 0.1
    use_ctr: bool = True
    reduction: str = "mean"
    simple: SimpleConfig = field(default_factory=SimpleConfig)
    rw: RwConfig = field(default_factory=RwConfig)
    seed: int = 0
    retrain_seed: int = 1

    def __post_init__(self):
        self.patch_dims = tuple(int(n) for n in self.patch_dims)
        check_patch_dims(self.arch, self.patch_dims)
        if self.eta_train <= 0 or self.eta_finetune <= 0:
            raise ValueError("learning rates must be positive")
        if min(self.epochs_train, self.finetune_iters, self.epochs_retrain) < 0:
            raise ValueError("stage lengths must be >= 0")


@dataclass
class TrainingCase:
    volume: Volume3D
    extremes: ExtremePoints
    initial_mask: np.ndarray
    current_mask: Optional[np.ndarray] = None
    id: str = ""

    def __post_init__(self):
        if self.initial_mask.shape != self.volume.dims:
            raise ValueError("initial mask dims differ from the volume")
        if self.current_mask is not None and self.current_mask.shape != self.volume.dims:
            raise ValueError("current mask dims differ from the volume")


@dataclass
class PatchPair:
    fg_slices: tuple
    bg_slices: tuple

    def crops(self, arr):
        return arr[self.fg_slices], arr[self.bg_slices]


def _window(center: int, p: int, n: int) -> slice:
    start = min(max(center - p // 2, 0), n - p)
    return slice(start, start + p)


def sample_patch_pair(case: TrainingCase, patch_dims, rng: np.random.Generator) -> PatchPair:
    """A window centred (then clipped) on a random positive of the initial mask,
    and a window at a uniformly random in-bounds position."""
    dims = case.volume.dims
    if any(p > n for p, n in zip(patch_dims, dims)):
        raise VolumeTooSmall(f"patch {tuple(patch_dims)} exceeds volume {dims}")
    pos = np.argwhere(case.initial_mask == POSITIVE)
    if len(pos) == 0:
        raise NoForeground(f"case {case.id!r} has no positive voxels in its initial mask")
    c = pos[rng.integers(len(pos))]
    fg = tuple(_window(int(ci), p, n) for ci, p, n in zip(c, patch_dims, dims))
    starts = [int(rng.integers(0, n - p + 1)) for p, n in zip(patch_dims, dims)]
    bg = tuple(slice(s, s + p) for s, p in zip(starts, patch_dims))
    return PatchPair(fg, bg)


def _digest(arr) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def _train_loop(model: ModelState, cases: Sequence[TrainingCase], epochs: int, eta: float,
                cfg: PipelineConfig, rng: np.random.Generator, target: str, use_ctr: bool,
                trace: Optional[list], stage: str) -> ModelState:
    for epoch in range(epochs):
        lr = poly_lr(eta, epoch, epochs)
        epoch_losses = []
        for ci in rng.permutation(len(cases)):
            case = cases[ci]
            labels = case.initial_mask if target == "initial" else case.current_mask
            pair = sample_patch_pair(case, cfg.patch_dims, rng)
            grad = np.zeros_like(model.params)
            losses = []
            for sl in (pair.fg_slices, pair.bg_slices):
                y = labels[sl]
                rec = forward(model, case.volume.data[sl])
                plan = None
                if use_ctr:
                    try:
                        plan = sample_plan(y, cfg.N, rng, cfg.tau)
                    except MissingClass:
                        plan = None
                try:
                    loss, dl, df = train_loss(rec.prob, rec.features, y, plan, cfg.reduction)
                except NoLabeledVoxels:
                    continue
                grad += backward(model, rec, dl, df)
                losses.append(loss)
            if not losses:
                continue
            model = sgd_step(model, grad / len(losses), lr, cfg.momentum)
            epoch_losses.append(float(np.mean(losses)))
        if trace is not None:
            trace.append({"stage": stage, "epoch": epoch, "lr": lr,
                          "loss": float(np.mean(epoch_losses)) if epoch_losses else None})
        log.info("%s epoch %d/%d lr=%.5f loss=%s", stage, epoch + 1, epochs, lr,
                 f"{np.mean(epoch_losses):.4f}" if epoch_losses else "n/a")
    return model


def train_stage(cases: Sequence[TrainingCase], cfg: PipelineConfig, trace: Optional[list] = None) -> ModelState:
    """Initial training on the trinary pseudo-masks (partial CE + contrastive)."""
    model = init_model(cfg.arch, cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1])
    return _train_loop(model, cases, cfg.epochs_train, cfg.eta_train, cfg, rng,
                       target="initial", use_ctr=cfg.use_ctr, trace=trace, stage="train")


def finetune_stage(model: ModelState, cases: Sequence[TrainingCase], cfg: PipelineConfig,
                   trace: Optional[list] = None) -> ModelState:
    """Fine-tune with per-iteration pseudo-positives from label propagation."""
    rng = np.random.default_rng([cfg.seed, 2])
    model = replace(model, velocity=None)
    digests = [_digest(c.initial_mask) for c in cases]
    order: List[int] = []
    for it in range(cfg.finetune_iters):
        if not order:
            order = list(rng.permutation(len(cases)))
        case = cases[order.pop(0)]
        lr = poly_lr(cfg.eta_finetune, it, cfg.finetune_iters)
        pair = sample_patch_pair(case, cfg.patch_dims, rng)
        grad = np.zeros_like(model.params)
        losses, n_pseudo = [], 0
        for sl in (pair.fg_slices, pair.bg_slices):
            y = case.initial_mask[sl]
            rec = forward(model, case.volume.data[sl])
            try:
                pseudo = propagate_labels(rec.features, y, cfg.simple, rng)
            except NoPositives:
                pseudo = None
            try:
                loss, dl = finetune_loss(rec.prob, y, pseudo, cfg.simple.w, cfg.reduction)
            except NoLabeledVoxels:
                continue
            if pseudo is not None:
                n_pseudo += int(pseudo.sum())
            # pseudo-positives are valid for this iteration only
            del pseudo
            grad += backward(model, rec, dl, None)
            losses.append(loss)
        if not losses:
            continue
        model = sgd_step(model, grad / len(losses), lr, cfg.momentum)
        if trace is not None:
            trace.append({"stage": "finetune", "iteration": it, "lr": lr,
                          "loss": float(np.mean(losses)), "n_pseudo": n_pseudo})
    assert digests == [_digest(c.initial_mask) for c in cases], "fine-tuning must not persist pseudo-labels"
    return model


def retrain_stage(cases: Sequence[TrainingCase], cfg: PipelineConfig, trace: Optional[list] = None) -> ModelState:
    """Fresh network trained with full CE on each case's binary ``current_mask``."""
    for c in cases:
        if c.current_mask is None or not np.isin(c.current_mask, (0, 1)).all():
            raise ValueError(f"case {c.id!r} lacks a binary current mask")
    model = init_model(cfg.arch, cfg.retrain_seed)
    rng = np.random.default_rng([cfg.retrain_seed, 3])
    return _train_loop(model, cases, cfg.epochs_retrain, cfg.eta_train, cfg, rng,
                       target="current", use_ctr=False, trace=trace, stage="retrain")


def prepare_case(volume: Volume3D, extremes: ExtremePoints, rw: RwConfig, case_id: str = "",
                 history: Optional[list] = None) -> TrainingCase:
    """Normalize the volume and build its initial pseudo-mask."""
    vol = normalize(volume)
    vol = vol.with_data(vol.data.astype(np.float32))
    mask = generate_initial_mask(vol, extremes, rw, history)
    return TrainingCase(vol, extremes, mask, id=case_id)


def predict(model: ModelState, volume: Volume3D, patch_dims) -> np.ndarray:
    """Binary prediction for a raw (unnormalized) volume."""
    vol = normalize(volume)
    return binarize(sliding_window_infer(model, vol.data.astype(np.float32), patch_dims))


def evaluate_model(model: ModelState, cases, patch_dims) -> dict:
    """Dice/Jaccard report over cases with ``volume``, ``gt`` and ``id`` attributes."""
    return report([evaluate_case(c.id, predict(model, c.volume, patch_dims), c.gt) for c in cases])


@dataclass
class PipelineResult:
    models: dict
    reports: dict
    pseudo_mask_precision: List[float]
    traces: dict
    manifest: dict


def _jsonable_cfg(cfg: PipelineConfig) -> dict:
    d = asdict(cfg)
    d["arch"] = cfg.arch.to_dict()
    return json.loads(json.dumps(d, default=list))


def run_pipeline(train_cases, test_cases, cfg: PipelineConfig, out_dir=None) -> PipelineResult:
    """Full train / fine-tune / binarize / retrain run with evaluation.

    ``train_cases`` and ``test_cases`` need ``id``, ``volume``, ``gt`` and
    ``extremes`` attributes (e.g. :class:`extremeseg.synth.Case`); ground
    truth of training cases is used only for reporting.
    """
    t0 = time.perf_counter()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    prepared, seed_logs = [], {}
    for c in train_cases:
        hist: list = []
        prepared.append(prepare_case(c.volume, c.extremes, cfg.rw, c.id, hist))
        seed_logs[c.id] = hist
    pm_precision = [precision(p.initial_mask == POSITIVE, c.gt) for p, c in zip(prepared, train_cases)]
    log.info("initial pseudo-masks ready (%.1fs), mean label-1 precision %.3f",
             time.perf_counter() - t0, float(np.mean(pm_precision)))

    traces = {"train": [], "finetune": [], "retrain": []}
    trained = train_stage(prepared, cfg, traces["train"])
    finetuned = finetune_stage(trained, prepared, cfg, traces["finetune"])

    def train_masks(model):
        return [binarize(sliding_window_infer(model, p.volume.data, cfg.patch_dims)) for p in prepared]

    trained_masks = train_masks(trained)
    finetuned_masks = train_masks(finetuned)
    for p, m in zip(prepared, finetuned_masks):
        p.current_mask = m
    retrained = retrain_stage(prepared, cfg, traces["retrain"])

    models = {"train": trained, "finetune": finetuned, "retrain": retrained}
    reports = {f"test_{k}": evaluate_model(m, test_cases, cfg.patch_dims) for k, m in models.items()}
    reports["train_masks_trained"] = report(
        [evaluate_case(c.id, m, c.gt) for c, m in zip(train_cases, trained_masks)])
    reports["train_masks_finetuned"] = report(
        [evaluate_case(c.id, m, c.gt) for c, m in zip(train_cases, finetuned_masks)])
    reports["train_masks_initial"] = report(
        [evaluate_case(c.id, p.initial_mask == POSITIVE, c.gt) for c, p in zip(train_cases, prepared)])

    manifest = {
        "config": _jsonable_cfg(cfg),
        "seeds": {"seed": cfg.seed, "retrain_seed": cfg.retrain_seed},
        "train_cases": [c.id for c in train_cases],
        "test_cases": [c.id for c in test_cases],
        "input_hashes": {c.id: _digest(c.volume.data) for c in list(train_cases) + list(test_cases)},
        "pseudo_mask_precision": pm_precision,
        "seed_counts": seed_logs,
        "traces": traces,
        "summary": {k: {"dice": r["dice"], "jaccard": r["jaccard"]} for k, r in reports.items()},
        "checkpoints": {},
    }
    if out is not None:
        for name, m in models.items():
            path = out / f"model_{name}.mdl"
            save_model(m, path)
            manifest["checkpoints"][name] = path.name
        with open(out / "report.json", "w") as fh:
            json.dump(reports, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(out / "run_manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    log.info("pipeline finished in %.1fs", time.perf_counter() - t0)
    return PipelineResult(models, reports, pm_precision, traces, manifest)
