"""Command-line surface: augment, features, train, eval, rank.

stdout carries machine output only (JSON or TSV); diagnostics go to stderr.
Exit codes: 0 success, 1 usage, 2 I/O, 3 validation, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import dsp, features as features_mod, trainer as trainer_mod
from .core import (
    Manifest,
    ManifestEntry,
    ScoreVector,
    entry_to_dict,
    load_manifest,
    read_wav,
    save_manifest,
    write_embedding,
    write_wav,
)
from .dsp import AugmentConfig, apply_draws, draw_parameters, stable_id_hash
from .errors import InputError, NumericalError, ValidationError
from .losses import LossConfig
from .mixup import MixupConfig
from .model import HEAD_HIDDEN_DEFAULT, BranchConfig
from .trainer import TrainConfig

EXIT_USAGE = 1
EXIT_IO = 2
EXIT_VALIDATION = 3
EXIT_NUMERICAL = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# --- augment -------------------------------------------------------------------


def cmd_augment(args) -> int:
    manifest = load_manifest(args.manifest)
    base_dir = Path(args.manifest).parent
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = AugmentConfig(seed=args.seed, copies_per_clip=args.copies)
    if args.disable:
        cfg = cfg.disable([op.strip() for op in args.disable.split(",") if op.strip()])

    new_entries = list(manifest.entries)
    n_written = 0
    for entry in manifest.entries:
        if entry.split != "train" or entry.audio_path is None:
            continue
        clip = read_wav(base_dir / entry.audio_path)
        id_hash = stable_id_hash(entry.id)
        for copy_idx in range(cfg.copies_per_clip):
            draws = draw_parameters(cfg, (id_hash, copy_idx))
            augmented = apply_draws(clip, draws)
            aug_id = f"{entry.id}#aug{copy_idx}"
            stem = f"{entry.id}.aug{copy_idx}".replace("/", "_")
            wav_name = f"{stem}.wav"
            write_wav(augmented, out_dir / wav_name, encoding="float32")
            sidecar = {
                "id": aug_id,
                "source_id": entry.id,
                "seed": cfg.seed,
                "copy": copy_idx,
                "draws": [d.to_json() for d in draws],
            }
            (out_dir / f"{stem}.params.json").write_text(
                json.dumps(sidecar, sort_keys=True) + "\n"
            )
            new_entries.append(
                ManifestEntry(
                    id=aug_id,
                    audio_path=wav_name,
                    scores=entry.scores,
                    split="train",
                    augmented_from=entry.id,
                )
            )
            n_written += 1
    # Original entries keep their paths; make them resolvable from out_dir.
    rebased = []
    for e in new_entries:
        if e.augmented_from is None and e.audio_path is not None:
            audio = str((base_dir / e.audio_path).resolve())
            embeddings = {
                k: str((base_dir / v).resolve()) for k, v in e.embedding_paths.items()
            }
            rebased.append(dataclasses.replace(e, audio_path=audio, embedding_paths=embeddings))
        else:
            rebased.append(e)
    save_manifest(Manifest(entries=tuple(rebased)), out_dir / "manifest.jsonl")
    _log(f"augment: wrote {n_written} clips + manifest to {out_dir}")
    print(json.dumps({"written": n_written, "manifest": str(out_dir / "manifest.jsonl")}))
    return 0


# --- features ------------------------------------------------------------------


def cmd_features(args) -> int:
    if args.extractor != "toy":
        raise ValidationError(f"unknown extractor {args.extractor!r}")
    manifest = load_manifest(args.manifest)
    base_dir = Path(args.manifest).parent
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    new_entries = []
    n_written = 0
    for entry in manifest.entries:
        if entry.audio_path is None:
            new_entries.append(entry)
            continue
        clip = read_wav(base_dir / entry.audio_path)
        toys = features_mod.compute_toy_features(clip, n_mels=args.n_mels)
        paths = dict(entry.embedding_paths)
        stem = entry.id.replace("/", "_")
        for source_id, seq in toys.items():
            name = f"{stem}.{source_id}.hemb"
            write_embedding(seq, out_dir / name)
            paths[source_id] = name
            n_written += 1
        audio = str((base_dir / entry.audio_path).resolve())
        new_entries.append(dataclasses.replace(entry, audio_path=audio, embedding_paths=paths))
    save_manifest(Manifest(entries=tuple(new_entries)), out_dir / "manifest.jsonl")
    _log(f"features: wrote {n_written} embedding files to {out_dir}")
    print(json.dumps({"written": n_written, "manifest": str(out_dir / "manifest.jsonl")}))
    return 0


# --- train ---------------------------------------------------------------------


def _load_train_config(path, track: int):
    try:
        obj = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise InputError(f"config not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"config parse error in {path}: {exc}") from exc
    model_obj = obj.get("model") or {}
    branch_objs = model_obj.get("branches")
    if not branch_objs:
        raise ValidationError("config needs model.branches")
    branches = []
    for b in branch_objs:
        kwargs = dict(b)
        kwargs.setdefault("model_dim", 256)
        kwargs.setdefault(
            "downsample_factor", 4 if kwargs.get("scale") == "segment" else 1
        )
        kwargs.setdefault("attention_heads", 4)
        kwargs.setdefault("pooling_queries", 2)
        branches.append(BranchConfig(**kwargs))
    head_hidden = int(model_obj.get("head_hidden", HEAD_HIDDEN_DEFAULT))
    train_obj = dict(obj.get("train") or {})
    train_obj["track"] = track
    train_cfg = TrainConfig.from_json(train_obj)
    mix_cfg = MixupConfig.from_json(obj.get("mixup") or {})
    loss_cfg = LossConfig.from_json(obj.get("loss") or {}, track=track)
    return branches, head_hidden, train_cfg, mix_cfg, loss_cfg


def cmd_train(args) -> int:
    manifest = load_manifest(args.manifest)
    branches, head_hidden, train_cfg, mix_cfg, loss_cfg = _load_train_config(
        args.config, args.track
    )
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.no_mixup:
        overrides["use_mixup"] = False
    if args.no_augmented_data:
        overrides["use_augmented_data"] = False
    if args.smooth_l1_only:
        overrides["use_hybrid_loss"] = False
    if args.branches:
        overrides["branches_enabled"] = tuple(
            s.strip() for s in args.branches.split(",") if s.strip()
        )
    if args.precision:
        overrides["precision"] = args.precision
    if overrides:
        train_cfg = dataclasses.replace(train_cfg, **overrides)
    history_path = args.history or (str(args.out) + ".history.jsonl")
    result = trainer_mod.train(
        manifest, branches, train_cfg, mix_cfg, loss_cfg,
        out_path=args.out, history_path=history_path,
        base_dir=Path(args.manifest).parent, head_hidden=head_hidden,
    )
    _log(
        f"train: best epoch {result.best_epoch} "
        f"(val SRCC {result.best_val_srcc}) -> {result.checkpoint_path}"
    )
    print(json.dumps({
        "checkpoint": result.checkpoint_path,
        "history": str(history_path),
        "best_epoch": result.best_epoch,
        "best_val_srcc": result.best_val_srcc,
        "epochs_run": len(result.history),
    }, sort_keys=True))
    return 0


# --- eval ----------------------------------------------------------------------


def cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    report = trainer_mod.evaluate(
        args.checkpoint, manifest, args.split,
        tta_threshold=args.tta_threshold, tta_quantile=args.tta_quantile,
        base_dir=Path(args.manifest).parent,
    )
    print(report.to_json_str())
    return 0


# --- rank ----------------------------------------------------------------------


def cmd_rank(args) -> int:
    manifest = load_manifest(args.manifest)
    scored = trainer_mod.predict_entries(
        args.checkpoint, manifest, base_dir=Path(args.manifest).parent
    )
    if not scored:
        raise ValidationError("no entries to rank")
    width = scored[0][1].size
    if args.dimension is None:
        dim = 0
    else:
        names = None
        for e in manifest.entries:
            if e.scores is not None:
                names = list(e.scores.dimension_names)
                break
        if names is None:
            names = list(ScoreVector(values=np.zeros(width)).dimension_names)
        if args.dimension not in names:
            raise ValidationError(
                f"unknown dimension {args.dimension!r}; available: {names}"
            )
        dim = names.index(args.dimension)
    rows = sorted(
        ((entry_id, float(scores[dim])) for entry_id, scores in scored),
        key=lambda r: (-r[1], r[0]),
    )
    for entry_id, score in rows:
        print(f"{entry_id}\t{score:.6f}")
    return 0


# --- parser --------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="hark", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("augment", help="expand the train split with perturbed copies")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--copies", type=int, default=1)
    p.add_argument("--disable", default="", help="comma-separated op names to disable")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("features", help="write embedding files for manifest audio")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--extractor", default="toy", choices=["toy"])
    p.add_argument("--n-mels", type=int, default=64)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train a model from a manifest and config")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--track", type=int, required=True, choices=[1, 2])
    p.add_argument("--out", required=True)
    p.add_argument("--history", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--precision", default=None, choices=["float32", "float64"])
    p.add_argument("--no-mixup", action="store_true")
    p.add_argument("--no-augmented-data", action="store_true")
    p.add_argument("--smooth-l1-only", action="store_true")
    p.add_argument("--branches", default=None,
                   help="comma-separated source ids to enable (default: all)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics report for a split, JSON on stdout")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", required=True, choices=["train", "val", "test"])
    p.add_argument("--tta-threshold", type=float, default=None)
    p.add_argument("--tta-quantile", type=float, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rank", help="descending (id, score) TSV on stdout")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--dimension", default=None)
    p.set_defaults(func=cmd_rank)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        _log(f"hark: input error: {exc}")
        return EXIT_IO
    except ValidationError as exc:
        _log(f"hark: validation error: {exc}")
        return EXIT_VALIDATION
    except NumericalError as exc:
        _log(f"hark: numerical error: {exc}")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
