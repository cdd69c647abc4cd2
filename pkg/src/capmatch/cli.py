"""Command-line surface: synth, filter-captions, train, eval, retrieve,
ablate, gradcheck.

Configuration precedence is built-in defaults < JSON config file < flags.
Unknown config keys are rejected by name. Exit codes: 0 success, 1 usage or
configuration error, 2 data error, 3 internal invariant failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import errors as E
from .archive import SynthConfig, read_archive, synthesize, write_archive
from .captions import filter_captions
from .evaluator import (FusionConfig, RetrievalReport, evaluate_archive,
                        report_table, report_to_dict, retrieve_topk)
from .gradcheck import run_gradcheck
from .interaction import STRATEGIES, InteractionConfig
from .matching import MatchMode
from .model import init_model_params
from .objective import Temperature
from .trainer import Trainer, TrainConfig, checkpoint_load, checkpoint_save

USAGE_EXIT, DATA_EXIT, INTERNAL_EXIT = 1, 2, 3

_DATA_ERRORS = (E.ArchiveIoError, E.BadMagic, E.VersionMismatch, E.ShapeMismatch,
                E.NonFiniteValue, E.SplitMisuse, E.ArchiveMismatch, E.ZeroNormRow,
                E.NoCaptions, E.EmptyCorpus, E.DimensionMismatch)
_USAGE_ERRORS = (E.InvalidConfig, E.NonPositiveTemperature, E.NonSquare)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures to exit code 1
        raise UsageError(message)


# Flat key space shared by the config file and the flags.
CONFIG_KEYS = {
    # synthetic corpora
    "n": int, "dim": int, "frames": int, "captions": int, "words": int,
    "sigma_q": float, "sigma_v": float, "sigma_c": float,
    "distractor_fraction": float, "split": str, "latent_seed": int,
    # training
    "batch_size": int, "epochs_stage1": int, "epochs_stage2": int,
    "lr": float, "warmup_steps": int, "seed": int, "mode": str, "pooling": str,
    "caption_layers": int, "aug_enabled": bool, "aug_top_k": int,
    "lambda_aug": float, "tau": float, "tau_learnable": bool,
    "tau_min": float, "tau_max": float, "eval_every": int,
    # interaction
    "strategy": str, "layers": int, "heads": int, "ffn_mult": int,
    "max_frames": int,
    # fusion / runtime
    "alpha": float, "threads": int,
}

_DEFAULTS = {
    "n": 64, "dim": 32, "frames": 4, "captions": 5, "words": 8,
    "sigma_q": 0.3, "sigma_v": 0.3, "sigma_c": 0.3, "distractor_fraction": 0.0,
    "split": "train", "latent_seed": None,
    "batch_size": 32, "epochs_stage1": 10, "epochs_stage2": 5, "lr": 1e-3,
    "warmup_steps": 20, "seed": 0, "mode": "global", "pooling": "uniform",
    "caption_layers": 2, "aug_enabled": False, "aug_top_k": 1,
    "lambda_aug": 1.0, "tau": 0.05, "tau_learnable": False,
    "tau_min": 0.01, "tau_max": 0.5, "eval_every": 0,
    "strategy": "none", "layers": 1, "heads": 4, "ffn_mult": 4, "max_frames": 64,
    "alpha": 1.0, "threads": 1,
}


def load_config_file(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise E.ArchiveIoError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    for key in raw:
        if key not in CONFIG_KEYS:
            raise UsageError(f"unknown config key {key!r} in {path}")
    return raw


def resolve_config(args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags."""
    merged = dict(_DEFAULTS)
    if getattr(args, "config", None):
        merged.update(load_config_file(args.config))
    for key in CONFIG_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    if "CAPMATCH_THREADS" in os.environ and getattr(args, "threads", None) is None:
        try:
            merged["threads"] = int(os.environ["CAPMATCH_THREADS"])
        except ValueError as exc:
            raise UsageError(f"CAPMATCH_THREADS must be an int: {exc}") from exc
    return merged


def build_train_config(cfg: dict, dim: int) -> TrainConfig:
    interaction = InteractionConfig(strategy=cfg["strategy"], layers=cfg["layers"],
                                    heads=cfg["heads"], dim=dim,
                                    ffn_mult=cfg["ffn_mult"],
                                    max_frames=cfg["max_frames"])
    return TrainConfig(
        batch_size=cfg["batch_size"], epochs_stage1=cfg["epochs_stage1"],
        epochs_stage2=cfg["epochs_stage2"], lr=cfg["lr"],
        warmup_steps=cfg["warmup_steps"], seed=cfg["seed"],
        match_mode=MatchMode(kind=cfg["mode"], pooling=cfg["pooling"]),
        interaction=interaction, caption_layers=cfg["caption_layers"],
        aug_enabled=cfg["aug_enabled"], aug_top_k=cfg["aug_top_k"],
        lambda_aug=cfg["lambda_aug"],
        temperature=Temperature(value=cfg["tau"], learnable=cfg["tau_learnable"],
                                t_min=cfg["tau_min"], t_max=cfg["tau_max"]),
        alpha=cfg["alpha"], eval_every=cfg["eval_every"],
    )


def emit_report(report: RetrievalReport, fmt: str = "json",
                include_ranks: bool = False) -> str:
    """Stable text for one report: sorted-key JSON or an aligned table."""
    if fmt == "json":
        return json.dumps(report_to_dict(report, include_ranks), sort_keys=True)
    if fmt == "table":
        return report_table([report])
    raise UsageError(f"unknown report format {fmt!r}")


# --- subcommand bodies ---------------------------------------------------------

def _cmd_synth(args) -> int:
    cfg = resolve_config(args)
    synth = SynthConfig(n=cfg["n"], dim=cfg["dim"], frames=cfg["frames"],
                        captions=cfg["captions"], words=cfg["words"],
                        sigma_q=cfg["sigma_q"], sigma_v=cfg["sigma_v"],
                        sigma_c=cfg["sigma_c"],
                        distractor_fraction=cfg["distractor_fraction"],
                        seed=cfg["seed"], latent_seed=cfg["latent_seed"],
                        split=cfg["split"])
    archive = synthesize(synth)
    write_archive(archive, args.out)
    print(json.dumps({"written": args.out, "count": archive.count,
                      "dim": archive.dim, "split": archive.split}, sort_keys=True))
    return 0


def _cmd_filter_captions(args) -> int:
    archive = read_archive(args.archive)
    filtered = filter_captions(archive, args.k)
    text = json.dumps(filtered.as_json_dict(), sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def _cmd_train(args) -> int:
    cfg = resolve_config(args)
    train_archive = read_archive(args.train)
    val_archive = read_archive(args.val) if args.val else None
    config = build_train_config(cfg, dim=train_archive.dim)
    trainer = Trainer(train_archive, val_archive, config)
    trainer.train()
    if args.out:
        checkpoint_save(trainer, args.out)
    summary = {"steps": trainer.step, "epochs": trainer.epoch,
               "checkpoint": args.out,
               "final": trainer.epoch_reports[-1] if trainer.epoch_reports else None}
    print(json.dumps(summary, sort_keys=True))
    return 0


def _load_params(args, cfg, archive):
    if getattr(args, "checkpoint", None):
        trainer = checkpoint_load(args.checkpoint, archive)
        return trainer.params
    config = build_train_config(cfg, dim=archive.dim)
    return init_model_params(dim=archive.dim, match_mode=config.match_mode,
                             interaction=config.interaction,
                             caption_layers=config.caption_layers,
                             temperature=config.temperature, seed=config.seed)


def _cmd_eval(args) -> int:
    cfg = resolve_config(args)
    archive = read_archive(args.archive)
    params = _load_params(args, cfg, archive)
    fusion = FusionConfig(alpha=cfg["alpha"])
    directions = ("t2v", "v2t") if args.direction == "both" else (args.direction,)
    reports = evaluate_archive(archive, params, fusion, directions=directions,
                               batched=cfg["threads"] != 1)
    for d in directions:
        print(emit_report(reports[d], args.format, include_ranks=args.ranks))
    return 0


def _cmd_retrieve(args) -> int:
    cfg = resolve_config(args)
    archive = read_archive(args.archive)
    params = _load_params(args, cfg, archive)
    fusion = FusionConfig(alpha=cfg["alpha"])
    by_id = {q.id: q for q in archive.queries}
    if args.query_id not in by_id:
        raise UsageError(f"query id {args.query_id!r} not in archive")
    hits = retrieve_topk(by_id[args.query_id], archive.videos, params, fusion,
                         args.k)
    print(json.dumps([{"id": vid, "score": round(score, 6)}
                      for vid, score in hits]))
    return 0


def _cmd_ablate(args) -> int:
    from .trainer import run_ablation, standard_grid
    cfg = resolve_config(args)
    train_archive = read_archive(args.train)
    val_archive = read_archive(args.val)
    base = build_train_config(cfg, dim=train_archive.dim)
    seeds = [int(s) for s in args.seeds.split(",") if s]
    if not seeds:
        raise UsageError("--seeds needs at least one integer")
    grid = standard_grid(base, interaction_strategy=args.strategy_under_test)
    rows = run_ablation(grid, train_archive, val_archive, seeds)
    if args.format == "json":
        print(json.dumps(rows, sort_keys=True))
    else:
        print(f"{'config':<14} {'R@1 mean':>9}  per-seed")
        for row in rows:
            per = " ".join(f"{v:.2f}" for v in row["r1_per_seed"])
            print(f"{row['label']:<14} {row['r1_mean']:>9.2f}  {per}")
    return 0


def _cmd_gradcheck(args) -> int:
    seeds = [int(s) for s in args.seeds.split(",") if s]
    worst = run_gradcheck(seeds, h=args.h)
    ok = True
    for group in sorted(worst):
        status = "ok" if worst[group] < args.tol else "FAIL"
        ok = ok and worst[group] < args.tol
        print(f"{group:<18} max_rel_err={worst[group]:.3e}  {status}")
    if not ok:
        print("gradient check failed", file=sys.stderr)
        return INTERNAL_EXIT
    return 0


# --- argument wiring -------------------------------------------------------------

def _add_config_flags(p: _Parser, keys: tuple[str, ...]) -> None:
    for key in keys:
        typ = CONFIG_KEYS[key]
        flag = "--" + key.replace("_", "-")
        doc = f"default: {_DEFAULTS[key]}"
        if typ is bool:
            p.add_argument(flag, dest=key, default=None, help=doc,
                           action=argparse.BooleanOptionalAction)
        else:
            p.add_argument(flag, dest=key, type=typ, default=None, help=doc)


_SYNTH_KEYS = ("n", "dim", "frames", "captions", "words", "sigma_q", "sigma_v",
               "sigma_c", "distractor_fraction", "seed", "latent_seed", "split")
_TRAIN_KEYS = ("batch_size", "epochs_stage1", "epochs_stage2", "lr",
               "warmup_steps", "seed", "mode", "pooling", "caption_layers",
               "aug_enabled", "aug_top_k", "lambda_aug", "tau", "tau_learnable",
               "tau_min", "tau_max", "eval_every", "strategy", "layers", "heads",
               "ffn_mult", "max_frames", "alpha", "threads")
_EVAL_KEYS = ("mode", "pooling", "strategy", "layers", "heads", "ffn_mult",
              "max_frames", "caption_layers", "tau", "tau_learnable", "seed",
              "alpha", "threads")


def build_parser() -> _Parser:
    parser = _Parser(prog="capmatch",
                     description="Caption-assisted text-video retrieval engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic CVRA archive")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    _add_config_flags(p, _SYNTH_KEYS)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("filter-captions", help="rank captions against queries")
    p.add_argument("--archive", required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_filter_captions)

    p = sub.add_parser("train", help="two-stage training run")
    p.add_argument("--train", required=True)
    p.add_argument("--val", default=None)
    p.add_argument("--out", default=None, help="checkpoint directory")
    p.add_argument("--config", default=None)
    _add_config_flags(p, _TRAIN_KEYS)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="retrieval metrics over an archive")
    p.add_argument("--archive", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--direction", choices=["t2v", "v2t", "both"], default="t2v")
    p.add_argument("--format", choices=["json", "table"], default="json")
    p.add_argument("--ranks", action="store_true")
    _add_config_flags(p, _EVAL_KEYS)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("retrieve", help="top-k videos for one query")
    p.add_argument("--archive", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--query-id", required=True)
    p.add_argument("--k", type=int, default=5)
    _add_config_flags(p, _EVAL_KEYS)
    p.set_defaults(fn=_cmd_retrieve)

    p = sub.add_parser("ablate", help="component ladder over seeds")
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--strategy-under-test", default="coattn",
                   choices=[s for s in STRATEGIES if s != "none"])
    p.add_argument("--format", choices=["json", "table"], default="table")
    p.add_argument("--config", default=None)
    _add_config_flags(p, _TRAIN_KEYS)
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--h", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--f64", action="store_true", default=True,
                   help="accepted for compatibility; the suite always runs in "
                        "float64")
    p.set_defaults(fn=_cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = build_parser().parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except _USAGE_ERRORS as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except E.CapmatchError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return INTERNAL_EXIT


if __name__ == "__main__":
    sys.exit(main())
