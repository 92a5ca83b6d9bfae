"""Command-line entry point.

    extremeseg <subcommand> [--config c.json] [--seed S] [--threads T] [--out-dir D] [overrides]

Subcommands: gen-data, pseudomask, train, finetune, retrain, infer, eval,
pipeline. Exit status is 0 on success, 1 on usage errors and 2 on runtime
failures. Every run writes ``run_manifest.json`` into the output directory.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import config as cfgmod
from .errors import ExtremeSegError
from .inference import sliding_window_infer
from .io import read_mask, read_volume, write_mask, write_u8, write_volume
from .metrics import boundary, distance_volume, evaluate_case, format_report, report, write_report
from .net import load_model, save_model
from .pipeline import (TrainingCase, finetune_stage, prepare_case, retrain_stage, run_pipeline,
                       train_stage)
from .propagation import binarize
from .synth import gen_dataset, load_dataset
from .volume import Volume3D, normalize

log = logging.getLogger("extremeseg")

SUBCOMMANDS = ("gen-data", "pseudomask", "train", "finetune", "retrain", "infer", "eval", "pipeline")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# flag -> (section, key) in the JSON config
_OVERRIDES = {
    "epochs_train": ("train", "epochs", int),
    "eta_train": ("train", "eta", float),
    "momentum": ("train", "momentum", float),
    "N": ("train", "N", int),
    "tau": ("train", "tau", float),
    "finetune_iters": ("finetune", "iters", int),
    "eta_finetune": ("finetune", "eta", float),
    "N_ref": ("finetune", "N", int),
    "lambda": ("finetune", "lambda", float),
    "alpha": ("finetune", "alpha", float),
    "w": ("finetune", "w", float),
    "epochs_retrain": ("retrain", "epochs", int),
    "retrain_seed": ("retrain", "seed", int),
    "beta": ("rw", "beta", float),
    "epsilon_w": ("rw", "epsilon_w", float),
    "cg_tol": ("rw", "cg_tol", float),
    "cg_max_iters": ("rw", "cg_max_iters", int),
    "fg_threshold": ("rw", "fg_threshold", float),
    "bg_threshold": ("rw", "bg_threshold", float),
    "n_iterations": ("rw", "n_iterations", int),
    "dilation_iters": ("rw", "dilation_iters", int),
    "path_eps": ("rw", "path_eps", float),
    "n_train": ("data", "n_train", int),
    "n_test": ("data", "n_test", int),
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("global")
    g.add_argument("--config", type=Path, help="JSON config file")
    g.add_argument("--seed", type=int, help="master seed")
    g.add_argument("--threads", type=int, default=1, help="BLAS threads (1 = deterministic mode)")
    g.add_argument("--out-dir", type=Path, default=Path("out"))
    g.add_argument("--data-dir", type=Path, help="dataset directory written by gen-data")
    g.add_argument("--patch-dims", help="e.g. 32,32,16")
    g.add_argument("-v", "--verbose", action="store_true")
    o = common.add_argument_group("hyperparameter overrides")
    for name, (section, key, typ) in _OVERRIDES.items():
        o.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, help=f"{section}.{key}")

    parser = _Parser(prog="extremeseg", description="Extreme-point weakly supervised 3D segmentation")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset")
    sub.add_parser("pseudomask", parents=[common], help="initial trinary pseudo-masks")
    p = sub.add_parser("train", parents=[common], help="initial training")
    p.add_argument("--pseudo-dir", type=Path, help="reuse pseudo-masks written by `pseudomask`")
    p = sub.add_parser("finetune", parents=[common], help="fine-tune with label propagation")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--pseudo-dir", type=Path)
    p = sub.add_parser("retrain", parents=[common], help="retrain on binary pseudo-masks")
    p.add_argument("--masks-dir", type=Path, required=True, help="binary masks written by `finetune`")
    p.add_argument("--pseudo-dir", type=Path)
    for name in ("infer", "eval"):
        p = sub.add_parser(name, parents=[common], help="sliding-window inference" if name == "infer"
                           else "Dice/Jaccard report on the test split")
        p.add_argument("--model", type=Path, required=True)
        p.add_argument("--volume", type=Path, help="single VOL1 volume (infer only)")
        p.add_argument("--split", default="test", choices=["train", "test", "all"])
        p.add_argument("--overlay", action="store_true", help="also write u8 overlay volumes")
        if name == "eval":
            p.add_argument("--distance-maps", action="store_true", help="write surface-distance volumes")
    sub.add_parser("pipeline", parents=[common], help="train, fine-tune, retrain and evaluate")
    return parser


def _load_config(args) -> dict:
    d = json.loads(args.config.read_text()) if args.config else {}
    if args.seed is not None:
        d["seed"] = args.seed
    if args.patch_dims:
        d["patch_dims"] = list(cfgmod.split_patch_dims(args.patch_dims))
    for name, (section, key, _) in _OVERRIDES.items():
        value = getattr(args, name, None)
        if value is not None:
            d.setdefault(section, {})[key] = value
    if args.data_dir is not None:
        d.setdefault("data", {})["dir"] = str(args.data_dir)
    return d


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, cfg_dict: dict, inputs, outputs, extra=None) -> None:
    manifest = {
        "command": command,
        "config": cfg_dict,
        "seeds": {"seed": cfg_dict.get("seed", 0), "retrain_seed": cfg_dict.get("retrain", {}).get("seed")},
        "inputs": {str(p): _file_hash(p) for p in inputs if Path(p).is_file()},
        "outputs": sorted(str(p) for p in outputs),
    }
    if extra:
        manifest.update(extra)
    with open(out / "run_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _dataset(d: dict, split: str = None):
    data = cfgmod.data_settings(d)
    if "dir" not in data:
        raise UsageError("a dataset is required (--data-dir or config data.dir)")
    root = Path(data["dir"])
    manifest, cases = load_dataset(root)
    inputs = [root / "manifest.json"] + [root / c[k] for c in manifest["cases"] for k in ("volume", "gt", "extremes")]
    if split and split != "all":
        cases = [c for c in cases if c.split == split]
    return cases, inputs


def _prepared(cases, cfg, pseudo_dir=None, logs=None):
    out = []
    for c in cases:
        if pseudo_dir is not None:
            vol = normalize(c.volume)
            out.append(TrainingCase(vol.with_data(vol.data.astype(np.float32)), c.extremes,
                                    read_mask(Path(pseudo_dir) / f"{c.id}_init.vol"), id=c.id))
        else:
            hist = []
            out.append(prepare_case(c.volume, c.extremes, cfg.rw, c.id, hist))
            if logs is not None:
                logs[c.id] = hist
    return out


def _overlay(volume: Volume3D, pred, gt=None) -> np.ndarray:
    data = volume.data.astype(np.float64)
    lo, hi = np.percentile(data, [1, 99])
    img = np.clip((data - lo) / max(hi - lo, 1e-12), 0, 1) * 250
    img = img.astype(np.uint8)
    if gt is not None:
        img[boundary(gt)] = 254
    img[boundary(pred)] = 255
    return img


def cmd_gen_data(args, d, out):
    spec = cfgmod.synth_spec(d)
    data = cfgmod.data_settings(d)
    target = Path(data.get("dir") or out / "data")
    manifest = gen_dataset(spec, data["n_train"], data["n_test"], d.get("seed", 0), target)
    outputs = [target / "manifest.json"] + [target / c[k] for c in manifest["cases"]
                                            for k in ("volume", "gt", "extremes")]
    return [], outputs, {"dataset": str(target)}


def cmd_pseudomask(args, d, out):
    cfg = cfgmod.pipeline_config(d)
    cases, inputs = _dataset(d, "train")
    logs = {}
    prepared = _prepared(cases, cfg, logs=logs)
    outputs = []
    for p, c in zip(prepared, cases):
        path = out / f"{p.id}_init.vol"
        write_mask(p.initial_mask, path, c.volume.spacing)
        outputs.append(path)
    with open(out / "seed_counts.json", "w") as fh:
        json.dump(logs, fh, indent=2, sort_keys=True)
    outputs.append(out / "seed_counts.json")
    return inputs, outputs, {}


def cmd_train(args, d, out):
    cfg = cfgmod.pipeline_config(d)
    cases, inputs = _dataset(d, "train")
    trace = []
    model = train_stage(_prepared(cases, cfg, args.pseudo_dir), cfg, trace)
    path = out / "model_train.mdl"
    save_model(model, path)
    return inputs, [path], {"trace": trace}


def cmd_finetune(args, d, out):
    cfg = cfgmod.pipeline_config(d)
    cases, inputs = _dataset(d, "train")
    prepared = _prepared(cases, cfg, args.pseudo_dir)
    trace = []
    model = finetune_stage(load_model(args.model), prepared, cfg, trace)
    outputs = [out / "model_finetune.mdl"]
    save_model(model, outputs[0])
    for p, c in zip(prepared, cases):
        path = out / f"{p.id}_binary.vol"
        write_mask(binarize(sliding_window_infer(model, p.volume.data, cfg.patch_dims)), path, c.volume.spacing)
        outputs.append(path)
    return inputs + [args.model], outputs, {"trace": trace}


def cmd_retrain(args, d, out):
    cfg = cfgmod.pipeline_config(d)
    cases, inputs = _dataset(d, "train")
    prepared = _prepared(cases, cfg, args.pseudo_dir)
    mask_files = []
    for p in prepared:
        mask_files.append(args.masks_dir / f"{p.id}_binary.vol")
        p.current_mask = read_mask(mask_files[-1])
    trace = []
    model = retrain_stage(prepared, cfg, trace)
    path = out / "model_retrain.mdl"
    save_model(model, path)
    return inputs + mask_files, [path], {"trace": trace}


def cmd_infer(args, d, out):
    cfg = cfgmod.pipeline_config(d)
    model = load_model(args.model)
    if args.volume is not None:
        items = [(args.volume.stem, read_volume(args.volume), None)]
        inputs = [args.volume]
    else:
        cases, inputs = _dataset(d, args.split)
        items = [(c.id, c.volume, c.gt) for c in cases]
    outputs = []
    for name, vol, gt in items:
        prob = sliding_window_infer(model, normalize(vol).data.astype(np.float32), cfg.patch_dims)
        pred = binarize(prob)
        write_volume(vol.with_data(prob.astype(np.float32)), out / f"{name}_prob.vol")
        write_mask(pred, out / f"{name}_pred.vol", vol.spacing)
        outputs += [out / f"{name}_prob.vol", out / f"{name}_pred.vol"]
        if args.overlay:
            path = out / f"{name}_overlay.vol"
            write_u8(_overlay(vol, pred, gt), path, vol.spacing)
            outputs.append(path)
    return inputs + [args.model], outputs, {}


def cmd_eval(args, d, out):
    cfg = cfgmod.pipeline_config(d)
    model = load_model(args.model)
    cases, inputs = _dataset(d, args.split)
    rows, outputs = [], []
    for c in cases:
        pred = binarize(sliding_window_infer(model, normalize(c.volume).data.astype(np.float32), cfg.patch_dims))
        rows.append(evaluate_case(c.id, pred, c.gt))
        if args.distance_maps and pred.any():
            path = out / f"{c.id}_surface_distance.vol"
            write_volume(c.volume.with_data(distance_volume(pred, c.gt, c.volume.spacing)), path)
            outputs.append(path)
        if args.overlay:
            path = out / f"{c.id}_overlay.vol"
            write_u8(_overlay(c.volume, pred, c.gt), path, c.volume.spacing)
            outputs.append(path)
    summary = report(rows)
    write_report(summary, out / "report.json", out / "report.txt")
    print(format_report(summary))
    return inputs + [args.model], outputs + [out / "report.json", out / "report.txt"], {}


def cmd_pipeline(args, d, out):
    cfg = cfgmod.pipeline_config(d)
    data = cfgmod.data_settings(d)
    if "dir" not in data:
        raise UsageError("pipeline needs a dataset (--data-dir or config data.dir)")
    cases, inputs = _dataset(d, "all")
    train = [c for c in cases if c.split == "train"]
    test = [c for c in cases if c.split == "test"]
    result = run_pipeline(train, test, cfg, out)
    with open(out / "report.txt", "w") as fh:
        for name, rep in result.reports.items():
            fh.write(f"== {name}\n{format_report(rep)}\n\n")
    outputs = [out / result.manifest["checkpoints"][k] for k in ("train", "finetune", "retrain")]
    outputs += [out / "report.json", out / "report.txt"]
    return inputs, outputs, {"pipeline_manifest": "pipeline_manifest.json"}


COMMANDS = {
    "gen-data": cmd_gen_data, "pseudomask": cmd_pseudomask, "train": cmd_train, "finetune": cmd_finetune,
    "retrain": cmd_retrain, "infer": cmd_infer, "eval": cmd_eval, "pipeline": cmd_pipeline,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        d = _load_config(args)
        # validate the whole config up front so bad values are usage errors
        cfgmod.pipeline_config(d)
        cfgmod.synth_spec(d)
        cfgmod.data_settings(d)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"extremeseg: error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, ExtremeSegError) as exc:
        parser.print_usage(sys.stderr)
        print(f"extremeseg: error: bad configuration: {exc}", file=sys.stderr)
        return 1

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    out = args.out_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        with threadpool_limits(limits=args.threads):
            inputs, outputs, extra = COMMANDS[args.command](args, d, out)
        if args.command == "pipeline":
            # keep the detailed pipeline manifest next to the CLI one
            (out / "run_manifest.json").rename(out / "pipeline_manifest.json")
        extra = dict(extra, elapsed_s=round(time.perf_counter() - t0, 3), threads=args.threads)
        _write_manifest(out, args.command, d, inputs, outputs, extra)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"extremeseg: error: {exc}", file=sys.stderr)
        return 1
    except (ExtremeSegError, OSError, ValueError, KeyError) as exc:
        print(f"extremeseg: {args.command} failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
