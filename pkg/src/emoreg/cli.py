"""Command-line interface.

Subcommands::

    synth       generate a synthetic benchmark dataset as CSV files
    train       train a model on a dataset directory
    eval        score a trained model on a split
    ablate      evaluate every modality subset + attention importance
    experiment  multi-seed standard-vs-robust comparison with statistics
    trace       write one sample's predicted and true traces as CSV

Exit codes: 0 on success, 2 for configuration/usage mistakes, 1 for runtime
failures.  Commands that produce a directory write a ``manifest.json`` first
(the manifest records the fully materialized configuration and a wall-clock
stamp; all other outputs are bit-reproducible for a fixed config and seed).
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
import traceback

import numpy as np

from . import __version__
from .configio import (
    build_model_config,
    build_synth_config,
    build_train_config,
    check_all_consumed,
    load_config_file,
    parse_int_list,
)
from .data import load_dataset, synth_generate, write_dataset
from .errors import ConfigError, DataLoadError, EmoregError
from .model import (
    EmotionRegressor,
    ModelConfig,
    load_checkpoint,
    load_model_state,
    save_checkpoint,
)
from .objective import ccc, rmse
from .tensor import Rng
from .train import (
    ablation_study,
    evaluate,
    experiment_run,
    render_experiment_report,
    train_run,
)

CHECKPOINT_NAME = "model.ckpt"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, sort_keys=True, indent=2)
        fh.write("\n")


def _prepare_out_dir(out, force: bool):
    if os.path.exists(out) and not force:
        raise ConfigError(
            f"output directory {out} already exists; pass --force to reuse it"
        )
    os.makedirs(out, exist_ok=True)


def _write_manifest(out, command: str, payload: dict):
    manifest = {
        "tool": "emoreg",
        "version": __version__,
        "command": command,
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    manifest.update(payload)
    _write_json(os.path.join(out, "manifest.json"), manifest)


def _load_raw_config(path) -> dict:
    return load_config_file(path) if path else {}


def _modalities_arg(value, known):
    if value is None:
        return None
    names = tuple(v.strip() for v in value.split(","))
    if not all(names):
        raise ConfigError(f"--modalities: bad list {value!r}")
    unknown = [m for m in names if m not in known]
    if unknown:
        raise ConfigError(
            f"--modalities: unknown {', '.join(unknown)} "
            f"(model has {', '.join(known)})"
        )
    return names


def _load_trained(path):
    config, params, norm_stats = load_checkpoint(path)
    model_cfg = ModelConfig.from_dict(config["model"])
    model = EmotionRegressor(model_cfg, Rng(0))
    load_model_state(model, params)
    return model, config, norm_stats


def _find_sample(samples, sample_id: str):
    for s in samples:
        if s.sample_id == sample_id:
            return s
    raise DataLoadError(
        f"sample {sample_id!r} not found; available: "
        + ", ".join(s.sample_id for s in samples)
    )


# ---------------------------------------------------------------------------
# Subcommands


def cmd_synth(args) -> int:
    raw = _load_raw_config(args.config)
    consumed = set()
    synth_cfg = build_synth_config(raw, consumed)
    check_all_consumed(raw, consumed)
    _prepare_out_dir(args.out, args.force)
    _write_manifest(
        args.out, "synth", {"seed": args.seed, "synth": synth_cfg.to_dict()}
    )
    data = synth_generate(synth_cfg, args.seed)
    for split, samples in data.items():
        write_dataset(args.out, split, samples)
        print(f"wrote {len(samples)} samples to {os.path.join(args.out, split)}")
    return 0


def cmd_train(args) -> int:
    raw = _load_raw_config(args.config)
    consumed = set()
    model_cfg = build_model_config(raw, consumed)
    train_cfg = build_train_config(raw, consumed)
    check_all_consumed(raw, consumed)
    if args.seed is not None:
        fields = train_cfg.to_dict()
        fields["seed"] = args.seed
        train_cfg = type(train_cfg)(**fields)
    train_samples = load_dataset(args.data, "train", model_cfg.modalities)
    val_samples = load_dataset(args.data, "val", model_cfg.modalities)
    _prepare_out_dir(args.out, args.force)
    _write_manifest(
        args.out,
        "train",
        {
            "data": os.path.abspath(args.data),
            "n_train": len(train_samples),
            "n_val": len(val_samples),
            "model": model_cfg.to_dict(),
            "train": train_cfg.to_dict(),
        },
    )
    log = None if args.quiet else print
    result = train_run(model_cfg, train_cfg, train_samples, val_samples, log=log)
    ckpt = os.path.join(args.out, CHECKPOINT_NAME)
    save_checkpoint(
        ckpt,
        {"model": model_cfg.to_dict(), "train": train_cfg.to_dict()},
        result.model.parameters(),
        result.norm_stats,
    )
    _write_json(os.path.join(args.out, "history.json"), result.history.to_dict())
    print(
        f"best val ccc {result.history.best_val_ccc:.4f} "
        f"(epoch {result.history.best_epoch}); checkpoint at {ckpt}"
    )
    return 0


def cmd_eval(args) -> int:
    model, _, norm_stats = _load_trained(args.model)
    samples = load_dataset(args.data, args.split, model.config.modalities)
    keep = _modalities_arg(args.modalities, model.config.modalities)
    result = evaluate(model, samples, norm_stats, use_modalities=keep)
    print(f"split      {args.split}")
    print(f"modalities {','.join(keep) if keep else 'all'}")
    print(f"ccc        {result.ccc:.4f}")
    print(f"rmse       {result.rmse:.4f}")
    print("per-sample ccc:")
    for sid in sorted(result.per_sample_ccc):
        print(f"  {sid}  {result.per_sample_ccc[sid]:.4f}")
    if args.out:
        payload = result.to_dict()
        payload["split"] = args.split
        payload["modalities"] = list(keep) if keep else "all"
        _write_json(args.out, payload)
        print(f"wrote {args.out}")
    return 0


def cmd_ablate(args) -> int:
    model, _, norm_stats = _load_trained(args.model)
    samples = load_dataset(args.data, args.split, model.config.modalities)
    report = ablation_study(model, samples, norm_stats)
    width = max(len("+".join(k)) for k in report.subsets)
    print(f"{'modalities'.ljust(width)}  {'ccc':>8}  {'rmse':>8}")
    for keep in sorted(report.subsets, key=lambda k: (len(k), k)):
        ev = report.subsets[keep]
        print(f"{'+'.join(keep).ljust(width)}  {ev.ccc:8.4f}  {ev.rmse:8.4f}")
    print("cross-attention importance:")
    for m, w in sorted(report.importance.items()):
        print(f"  {m}  {w:.4f}")
    if args.out:
        payload = {
            "subsets": {
                "+".join(k): {"ccc": ev.ccc, "rmse": ev.rmse}
                for k, ev in report.subsets.items()
            },
            "importance": report.importance,
            "split": args.split,
        }
        _write_json(args.out, payload)
        print(f"wrote {args.out}")
    return 0


def cmd_experiment(args) -> int:
    raw = _load_raw_config(args.config)
    consumed = set()
    model_cfg = build_model_config(raw, consumed)
    train_cfg = build_train_config(raw, consumed)
    seeds = None
    alpha = 0.05
    if "experiment.seeds" in raw:
        seeds = parse_int_list("experiment.seeds", raw["experiment.seeds"])
        consumed.add("experiment.seeds")
    if "experiment.alpha" in raw:
        alpha = float(raw["experiment.alpha"])
        consumed.add("experiment.alpha")
    check_all_consumed(raw, consumed)
    if args.seeds is not None:
        seeds = parse_int_list("--seeds", args.seeds)
    if seeds is None:
        seeds = list(range(10))
    elimination = dict(train_cfg.elimination)
    if not elimination:
        raise ConfigError(
            "experiment needs an elimination policy (eliminate.<modality> = rho)"
        )
    datasets = {
        split: load_dataset(args.data, split, model_cfg.modalities)
        for split in ("train", "val", "test")
    }
    _prepare_out_dir(args.out, args.force)
    _write_manifest(
        args.out,
        "experiment",
        {
            "data": os.path.abspath(args.data),
            "model": model_cfg.to_dict(),
            "train": train_cfg.to_dict(),
            "seeds": seeds,
            "alpha": alpha,
            "elimination": elimination,
        },
    )
    log = None if args.quiet else print
    report = experiment_run(
        model_cfg, train_cfg, datasets, seeds, elimination, alpha, log=log
    )
    text = render_experiment_report(report)
    _write_json(os.path.join(args.out, "report.json"), report.to_dict())
    with open(os.path.join(args.out, "report.txt"), "w") as fh:
        fh.write(text + "\n")
    print(text)
    return 0


def cmd_trace(args) -> int:
    model, _, norm_stats = _load_trained(args.model)
    samples = load_dataset(args.data, args.split, model.config.modalities)
    sample = _find_sample(samples, args.sample)
    keep = _modalities_arg(args.modalities, model.config.modalities)
    result = evaluate(model, [sample], norm_stats, use_modalities=keep)
    pred = result.predictions[sample.sample_id]
    c = ccc(pred, sample.labels)
    r = rmse(pred, sample.labels)
    parent = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(parent, exist_ok=True)
    with open(args.out, "w") as fh:
        fh.write("t,predicted,truth\n")
        for t, p, y in zip(sample.timestamps, pred, sample.labels):
            fh.write(f"{repr(float(t))},{repr(float(p))},{repr(float(y))}\n")
        fh.write(f"# ccc={repr(float(c))} rmse={repr(float(r))}\n")
    print(f"{sample.sample_id}: ccc {c:.4f}, rmse {r:.4f}; wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emoreg",
        description="Time-continuous multimodal emotion regression.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic benchmark dataset")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--out", required=True, help="dataset directory to create")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True, help="dataset root directory")
    p.add_argument("--out", required=True, help="run directory to create")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seed", type=int, help="override train.seed")
    p.add_argument("--force", action="store_true")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model")
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--modalities", help="comma list restricting the streams used")
    p.add_argument("--out", help="write metrics JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="evaluate every modality subset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", help="write report JSON here")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser(
        "experiment", help="multi-seed robustness comparison with statistics"
    )
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seeds", help="comma list of seeds (default 0..9)")
    p.add_argument("--force", action="store_true")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("trace", help="write predicted vs true trace CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--sample", required=True, help="sample id")
    p.add_argument("--split", default="test")
    p.add_argument("--modalities", help="comma list restricting the streams used")
    p.add_argument("--out", required=True, help="trace CSV path")
    p.set_defaults(func=cmd_trace)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except EmoregError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
