"""Command-line surface: gen-data, train-teacher, distill, eval,
report-params. Non-interactive; exit codes are 0 (success), 1 (training
failure), 2 (usage error)."""

from __future__ import annotations

import argparse
import json
import sys
import time
import types
import typing
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .compression import census, compression_report, format_report
from .data_io import gen_synthetic, load_dataset, save_dataset
from .evaluation import evaluate
from .graph import normalized_adjacency, user_item_mean
from .pipeline import ABLATION_VARIANTS, TrainConfig, distill_student, train_teacher

USAGE_ERROR = 2
TRAIN_ERROR = 1


class UsageError(Exception):
    pass


def parse_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; '#' starts a comment, blanks ignored."""
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}: line {lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def _coerce(value: str, hint) -> object:
    origin = typing.get_origin(hint)
    if origin is typing.Union or origin is types.UnionType:
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if value.lower() in ("none", ""):
            return None
        return _coerce(value, args[0])
    if origin is tuple:
        inner = typing.get_args(hint)[0]
        return tuple(_coerce(v.strip(), inner) for v in value.split(","))
    if hint is bool:
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise UsageError(f"cannot parse boolean from {value!r}")
    if hint is int:
        return int(value)
    if hint is float:
        return float(value)
    return value


def build_train_config(config_path=None, overrides: dict[str, str] | None = None,
                       seed: int | None = None) -> TrainConfig:
    """Config file plus CLI overrides; unknown keys are rejected."""
    hints = typing.get_type_hints(TrainConfig)
    known = {f.name: hints[f.name] for f in fields(TrainConfig)}
    merged: dict[str, str] = {}
    if config_path is not None:
        merged.update(parse_config_file(config_path))
    if overrides:
        merged.update(overrides)
    kwargs: dict[str, object] = {}
    for key, value in merged.items():
        if key not in known:
            raise UsageError(f"unknown config key '{key}'")
        kwargs[key] = _coerce(value, known[key])
    if seed is not None:
        kwargs["seed"] = seed
    try:
        return TrainConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad configuration: {exc}") from exc


def _parse_overrides(pairs: list[str] | None) -> dict[str, str]:
    out: dict[str, str] = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise UsageError(f"--set expects key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        out[key.strip()] = value.strip()
    return out


def _write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n",
                          encoding="utf-8")


def _write_metrics_history(path, history: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in history:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(args) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise UsageError(f"output directory {out} is not empty (use --force)")
    dims = [int(v) for v in args.modality_dims.split(",")]
    bundle = gen_synthetic(args.users, args.items, args.latent_dim, dims,
                           args.interactions_per_user, args.noise_std,
                           seed=args.seed)
    save_dataset(out, bundle, seed=args.seed)
    print(f"wrote dataset to {out}")
    return 0


def cmd_train_teacher(args) -> int:
    config = build_train_config(args.config, _parse_overrides(args.set), args.seed)
    bundle = load_dataset(args.data_dir)
    started = time.perf_counter()
    teacher, history = train_teacher(bundle, config)
    elapsed = time.perf_counter() - started
    out = Path(args.out)
    ckpt.save_teacher(out, teacher)
    _write_metrics_history(out / "metrics.jsonl", history)
    epochs = max(1, history[-1]["epoch"] if history else config.teacher_epochs)
    _write_json(out / "train_log.json", {
        "epochs": epochs,
        "total_seconds": elapsed,
        "seconds_per_epoch": elapsed / epochs,
    })
    print(f"teacher checkpoint written to {out}")
    return 0


def cmd_distill(args) -> int:
    config = build_train_config(args.config, _parse_overrides(args.set), args.seed)
    bundle = load_dataset(args.data_dir)
    teacher = ckpt.load_teacher(args.teacher, bundle.features)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    with open(out / "loss_log.jsonl", "w", encoding="utf-8") as loss_log:
        student, history = distill_student(teacher, bundle, config,
                                           variant=args.variant,
                                           loss_log=loss_log)
    elapsed = time.perf_counter() - started
    ckpt.save_student(out, student)
    _write_metrics_history(out / "metrics.jsonl", history)
    epochs = max(1, history[-1]["epoch"] if history else config.distill_epochs)
    _write_json(out / "train_log.json", {
        "epochs": epochs,
        "total_seconds": elapsed,
        "seconds_per_epoch": elapsed / epochs,
    })
    print(f"student checkpoint written to {out}")
    return 0


def cmd_eval(args) -> int:
    bundle = load_dataset(args.data_dir)
    manifest = ckpt.load_checkpoint_manifest(args.checkpoint)
    adj = normalized_adjacency(bundle.train)
    if manifest["kind"] == "student":
        model = ckpt.load_student(args.checkpoint)
        scores = model.score_matrix(adj)
    elif manifest["kind"] == "teacher":
        model = ckpt.load_teacher(args.checkpoint, bundle.features)
        scores = model.score_matrix(adj, user_item_mean(bundle.train))
    else:
        raise UsageError(f"unknown checkpoint kind {manifest['kind']!r}")
    ks = tuple(int(k) for k in args.k_list.split(","))
    result = evaluate(scores, bundle, ks=ks, split=args.split)
    payload = dict(result.metrics)
    payload["n_users_evaluated"] = result.n_users_evaluated
    text = json.dumps(payload, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def _read_timing(path, label: str, timing: dict) -> None:
    if path:
        log = json.loads(Path(path).read_text(encoding="utf-8"))
        timing[f"{label}_seconds_per_epoch"] = float(log["seconds_per_epoch"])


def cmd_report_params(args) -> int:
    student_manifest = ckpt.load_checkpoint_manifest(args.student)
    teacher_manifest = ckpt.load_checkpoint_manifest(args.teacher)
    if student_manifest.get("kind") != "student":
        raise UsageError(f"{args.student} is not a student checkpoint")
    if teacher_manifest.get("kind") != "teacher":
        raise UsageError(f"{args.teacher} is not a teacher checkpoint")
    if (student_manifest["n_users"] != teacher_manifest["n_users"]
            or student_manifest["n_items"] != teacher_manifest["n_items"]):
        raise UsageError("student and teacher checkpoints describe different graphs")

    from .compression import CensusEntry
    s = student_manifest
    student_entries = [
        CensusEntry("student.user_emb", (s["n_users"], s["d"])),
        CensusEntry("student.item_emb", (s["n_items"], s["d"])),
    ]
    t = teacher_manifest
    teacher_entries = [
        CensusEntry("teacher.user_emb", (t["n_users"], t["d"])),
        CensusEntry("teacher.item_emb", (t["n_items"], t["d"])),
        CensusEntry("teacher.prompt.weight", (t["d"], t["d"])),
        CensusEntry("teacher.prompt.bias", (1, t["d"])),
    ]
    for name, dm in t["modalities"].items():
        teacher_entries.append(CensusEntry(f"teacher.reduce.{name}.weight", (dm, t["d"])))
        teacher_entries.append(CensusEntry(f"teacher.reduce.{name}.bias", (1, t["d"])))

    timing: dict = {}
    _read_timing(args.teacher_log, "teacher", timing)
    _read_timing(args.student_log, "student", timing)
    report = compression_report(student_entries, teacher_entries,
                                t["modalities"], t["n_items"],
                                shape_key=(t["n_users"], t["n_items"], t["d"]),
                                timing=timing or None)
    print(format_report(report))
    if args.out:
        _write_json(args.out, report)
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kdrec",
        description="Two-stage knowledge distillation for lightweight recommenders")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--users", type=int, default=500)
    p.add_argument("--items", type=int, default=300)
    p.add_argument("--latent-dim", type=int, default=8)
    p.add_argument("--modality-dims", default="64,48")
    p.add_argument("--interactions-per-user", type=int, default=12)
    p.add_argument("--noise-std", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-teacher", help="stage one: train the teacher")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("distill", help="stage two: distill the student")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", default="full", choices=ABLATION_VARIANTS)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("eval", help="all-ranking metrics for a checkpoint")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--k-list", default="20,50")
    p.add_argument("--split", default="test", choices=("test", "val"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report-params", help="parameter counts and compression ratio")
    p.add_argument("--teacher", required=True)
    p.add_argument("--student", required=True)
    p.add_argument("--teacher-log")
    p.add_argument("--student-log")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report_params)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (RuntimeError, FloatingPointError) as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return TRAIN_ERROR


if __name__ == "__main__":
    sys.exit(main())
