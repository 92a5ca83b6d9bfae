"""JSON run configuration.

Hyperparameters are grouped per stage and the reference ones keep their
usual symbols (``N``, ``tau``, ``lambda``, ``alpha``, ``w``, ``eta``)::

    {
      "seed": 0,
      "patch_dims": [32, 32, 16],
      "arch": {"channels": [8, 16], "feature_dim": 8},
      "train": {"epochs": 60, "eta": 0.01, "momentum": 0.9, "N": 100, "tau": 0.1, "use_ctr": true},
      "finetune": {"iters": 100, "eta": 0.0001, "N": 100, "lambda": 0.96, "alpha": 0.96, "w": 0.1},
      "retrain": {"epochs": 60, "seed": 1},
      "rw": {"beta": 90.0, "fg_threshold": 0.8, "bg_threshold": 0.1, "n_iterations": 7, ...},
      "synth": {"dims": [48, 48, 32], ...},
      "data": {"n_train": 20, "n_test": 10}
    }

Missing keys take their defaults.
"""
from __future__ import annotations

from dataclasses import asdict, fields
from typing import Tuple

from .net import Arch
from .pipeline import PipelineConfig
from .propagation import SimpleConfig
from .seeds import RwConfig
from .synth import SynthSpec

# (section, json key) -> PipelineConfig attribute
_PIPELINE_KEYS = {
    ("train", "epochs"): "epochs_train",
    ("train", "eta"): "eta_train",
    ("train", "momentum"): "momentum",
    ("train", "N"): "N",
    ("train", "tau"): "tau",
    ("train", "use_ctr"): "use_ctr",
    ("train", "reduction"): "reduction",
    ("finetune", "iters"): "finetune_iters",
    ("finetune", "eta"): "eta_finetune",
    ("retrain", "epochs"): "epochs_retrain",
    ("retrain", "seed"): "retrain_seed",
}
_SIMPLE_KEYS = {"N": "N", "lambda": "lam", "alpha": "alpha", "w": "w"}

DATA_DEFAULTS = {"n_train": 20, "n_test": 10}


def _check_keys(section: str, given: dict, allowed) -> None:
    unknown = set(given) - set(allowed)
    if unknown:
        raise ValueError(f"unknown key(s) in config section {section!r}: {sorted(unknown)}")


def pipeline_config(d: dict) -> PipelineConfig:
    kw = {}
    if "seed" in d:
        kw["seed"] = int(d["seed"])
    if "patch_dims" in d:
        kw["patch_dims"] = tuple(d["patch_dims"])
    if "arch" in d:
        _check_keys("arch", d["arch"], [f.name for f in fields(Arch)])
        kw["arch"] = Arch(**d["arch"])
    for section in ("train", "finetune", "retrain"):
        sec = d.get(section, {})
        allowed = [k for s, k in _PIPELINE_KEYS if s == section]
        if section == "finetune":
            allowed += list(_SIMPLE_KEYS)
        _check_keys(section, sec, allowed)
        for key, value in sec.items():
            if (section, key) in _PIPELINE_KEYS:
                kw[_PIPELINE_KEYS[(section, key)]] = value
    ft = d.get("finetune", {})
    kw["simple"] = SimpleConfig(**{attr: ft[key] for key, attr in _SIMPLE_KEYS.items() if key in ft})
    rw = d.get("rw", {})
    _check_keys("rw", rw, [f.name for f in fields(RwConfig)])
    kw["rw"] = RwConfig(**rw)
    return PipelineConfig(**kw)


def synth_spec(d: dict) -> SynthSpec:
    sec = d.get("synth", {})
    _check_keys("synth", sec, [f.name for f in fields(SynthSpec)])
    return SynthSpec(**sec)


def data_settings(d: dict) -> dict:
    sec = d.get("data", {})
    _check_keys("data", sec, list(DATA_DEFAULTS) + ["dir"])
    return {**DATA_DEFAULTS, **sec}


def to_dict(cfg: PipelineConfig, spec: SynthSpec = None, data: dict = None) -> dict:
    """Inverse of :func:`pipeline_config` (plus optional synth/data sections)."""
    out = {"seed": cfg.seed, "patch_dims": list(cfg.patch_dims), "arch": cfg.arch.to_dict(),
           "train": {}, "finetune": {}, "retrain": {}}
    for (section, key), attr in _PIPELINE_KEYS.items():
        out[section][key] = getattr(cfg, attr)
    for key, attr in _SIMPLE_KEYS.items():
        out["finetune"][key] = getattr(cfg.simple, attr)
    out["rw"] = asdict(cfg.rw)
    if spec is not None:
        out["synth"] = spec.to_dict()
    if data is not None:
        out["data"] = dict(data)
    return out


def split_patch_dims(text: str) -> Tuple[int, int, int]:
    parts = [int(p) for p in text.replace("x", ",").split(",") if p]
    if len(parts) != 3:
        raise ValueError(f"patch dims need three integers, got {text!r}")
    return tuple(parts)
