"""Command-line front door.

Subcommands: gen-data, train, eval, count-eval, order-analysis, denoise-eval.
Configuration comes from a plain-text file of dotted ``key = value`` lines
('#' starts a comment) grouped by prefix:

    data.*   dataset generation (see data.DataConfig)
    model.*  architecture overrides (see layers.ModelConfig), plus the extras
             ``model.preset`` (default "desk"), ``model.dtype``
             ("float64"/"float32"), ``model.token_samples``
    train.*  optimization settings (see training.TrainConfig, minus ``mode``
             which the --task flag controls)

Exit codes: 0 success, 2 bad configuration, 3 data problem, 4 numeric abort,
1 anything else.  Failures print one JSON object to stderr:
``{"error": <kind>, "message": <text>}``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from . import chain as ch
from . import data as sd
from . import reports as rp
from . import training as tr
from .errors import ConfigError, DataError, NumericError, SeqchainError
from .layers import preset_config

_TASK_MODES = {
    "sep": "separation",
    "asr": "recognition",
    "joint": "joint",
    "denoise": "denoise",
    "baseline-pit": "baseline-pit",
    "baseline-serial": "baseline-serial",
}
_DTYPES = {"float64": np.float64, "float32": np.float32}


# ---------------------------------------------------------------------------
# config files


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def load_config_file(path: str) -> dict:
    """Flat dict of dotted keys; values are JSON scalars or bare strings."""
    flat: dict = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = text.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        flat[key] = _parse_value(raw.strip())
    return flat


def _section(flat: dict, name: str) -> dict:
    """Nested dict of the keys under ``name.``; deeper dots nest further."""
    out: dict = {}
    prefix = name + "."
    for key, value in flat.items():
        if not key.startswith(prefix):
            continue
        parts = key[len(prefix):].split(".")
        node = out
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return out


def _check_keys(section: dict, allowed, where: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown config key {where}.{unknown[0]}")


def _data_config(flat: dict, args) -> sd.DataConfig:
    section = _section(flat, "data")
    if "count_weights" in section:
        weights = section["count_weights"]
        if not isinstance(weights, dict):
            raise ConfigError("data.count_weights needs dotted subkeys like data.count_weights.2")
        try:
            section["count_weights"] = {int(k): float(v) for k, v in weights.items()}
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad data.count_weights entry: {e}") from e
    fields = [f.name for f in dataclasses.fields(sd.DataConfig)]
    _check_keys(section, fields, "data")
    if args.out is not None:
        section["out_dir"] = args.out
    if args.seed is not None:
        section["seed"] = args.seed
    if "out_dir" not in section:
        raise ConfigError("gen-data needs data.out_dir or --out")
    return sd.DataConfig(**section)


def _model_bits(flat: dict):
    section = _section(flat, "model")
    preset = section.pop("preset", "desk")
    dtype_name = section.pop("dtype", "float64")
    if dtype_name not in _DTYPES:
        raise ConfigError(f"model.dtype must be one of {sorted(_DTYPES)}")
    token_samples = section.pop("token_samples", ch.DEFAULT_TOKEN_SAMPLES)
    fields = [f.name for f in dataclasses.fields(preset_config("desk")) if f.name != "preset"]
    _check_keys(section, fields, "model")
    cfg = preset_config(preset, **section)
    return cfg, _DTYPES[dtype_name], int(token_samples)


def _train_config(flat: dict, args) -> tr.TrainConfig:
    section = _section(flat, "train")
    if "mode" in section:
        raise ConfigError("set the training mode with --task, not train.mode")
    fields = [f.name for f in dataclasses.fields(tr.TrainConfig) if f.name != "mode"]
    _check_keys(section, fields, "train")
    section["mode"] = _TASK_MODES[args.task]
    if args.seed is not None:
        section["seed"] = args.seed
    return tr.TrainConfig(**section)


def _load_flat(args) -> dict:
    return load_config_file(args.config) if args.config else {}


# ---------------------------------------------------------------------------
# subcommands


def _emit(args, payload: dict) -> None:
    if not args.quiet:
        print(json.dumps(payload, indent=2))


def cmd_gen_data(args) -> int:
    cfg = _data_config(_load_flat(args), args)
    manifest = sd.build_dataset(cfg)
    digest = sd.dataset_digest(manifest)
    _emit(args, {"manifest": manifest, "digest": digest})
    return 0


def cmd_train(args) -> int:
    if args.out is None:
        raise ConfigError("train needs --out")
    flat = _load_flat(args)
    train_cfg = _train_config(flat, args)
    model_cfg, dtype, token_samples = _model_bits(flat)
    manifest = sd.load_manifest(args.data)
    if train_cfg.mode in ("recognition", "joint") or (
        train_cfg.mode == "baseline-pit" and train_cfg.pit_task == "recognition"
    ):
        if any(not rec.tokens or not all(rec.tokens) for rec in manifest["records"]):
            raise DataError("missing token references for a token-level task")
    model = ch.build_model(
        model_cfg,
        train_cfg.chain_mode(),
        seed=train_cfg.seed,
        dtype=dtype,
        token_samples=token_samples,
    )
    result = tr.train(
        train_cfg, args.data, model, args.out, resume=args.resume, quiet=args.quiet
    )
    _emit(
        args,
        {
            "epochs_run": result["epochs_run"],
            "best_valid": result["best_valid"],
            "best_epoch": result["best_epoch"],
            "best_path": result["best_path"],
            "last_path": result["last_path"],
            "log_path": result["log_path"],
        },
    )
    return 0


def _load_eval_pair(args):
    if args.out is None:
        raise ConfigError(f"{args.command} needs --out")
    snap = tr.load_checkpoint(args.ckpt)
    manifest = sd.load_manifest(args.data)
    return snap["model"], manifest


def cmd_eval(args) -> int:
    model, manifest = _load_eval_pair(args)
    for rec in manifest["records"]:
        if rec.split == args.split and rec.count > args.max_steps:
            raise DataError(f"item {rec.id} has {rec.count} sources, above --max-steps")
    report = rp.eval_quality(model, manifest, split=args.split)
    report.extras["threshold"] = args.threshold
    report.extras["max_steps"] = args.max_steps
    paths = rp.write_report(report, args.out)
    _emit(args, {"report": report.as_dict(), "paths": paths})
    return 0


def cmd_count_eval(args) -> int:
    model, manifest = _load_eval_pair(args)
    report = rp.eval_counting(
        model, manifest, split=args.split, threshold=args.threshold, max_steps=args.max_steps
    )
    paths = rp.write_report(report, args.out)
    _emit(args, {"report": report.as_dict(), "paths": paths})
    return 0


def cmd_order_analysis(args) -> int:
    model, manifest = _load_eval_pair(args)
    report = rp.order_analysis(model, manifest, split=args.split, loosen=args.range)
    paths = rp.write_report(report, args.out)
    _emit(args, {"report": report.as_dict(), "paths": paths})
    return 0


def cmd_denoise_eval(args) -> int:
    model, manifest = _load_eval_pair(args)
    report = rp.denoise_eval(model, manifest, split=args.split)
    paths = rp.write_report(report, args.out)
    _emit(args, {"report": report.as_dict(), "paths": paths})
    return 0


# ---------------------------------------------------------------------------
# wiring


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--seed", type=int, default=None, help="override the configured seed")
    shared.add_argument("--config", default=None, help="plain-text key=value config file")
    shared.add_argument("--out", default=None, help="output directory")
    shared.add_argument("--quiet", action="store_true", help="suppress stdout reporting")

    parser = argparse.ArgumentParser(prog="seqchain", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[shared], help="synthesize a dataset")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[shared], help="train a model")
    p.add_argument("--task", required=True, choices=sorted(_TASK_MODES))
    p.add_argument("--data", required=True, help="dataset manifest path")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    def eval_parser(name, func, threshold=False, steps=False, loosen=False):
        q = sub.add_parser(name, parents=[shared], help=f"{name} report")
        q.add_argument("--ckpt", required=True, help="checkpoint path")
        q.add_argument("--data", required=True, help="dataset manifest path")
        q.add_argument("--split", default="test", choices=("train", "valid", "test"))
        if threshold:
            q.add_argument("--threshold", type=float, default=3e-4)
        if steps:
            q.add_argument("--max-steps", type=int, default=6)
        if loosen:
            q.add_argument("--range", type=int, default=5)
        q.set_defaults(func=func)

    eval_parser("eval", cmd_eval, threshold=True, steps=True)
    eval_parser("count-eval", cmd_count_eval, threshold=True, steps=True)
    eval_parser("order-analysis", cmd_order_analysis, loosen=True)
    eval_parser("denoise-eval", cmd_denoise_eval)
    return parser


def _error_kind(exc: Exception) -> str:
    if isinstance(exc, ConfigError):
        return "config"
    if isinstance(exc, DataError):
        return "data"
    if isinstance(exc, NumericError):
        return "numeric"
    if isinstance(exc, OSError):
        return "io"
    return "error"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SeqchainError as e:
        print(json.dumps({"error": _error_kind(e), "message": str(e)}), file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(json.dumps({"error": "io", "message": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
