"""``totkit`` command line: data preparation, training, evaluation, streaming."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import config as cfgmod
from .checkpoint import load_checkpoint, save_checkpoint
from .dataio import load_dataset, read_episodes, read_frames, save_dataset, write_episodes
from .episodes import annotate_targets, augment_dataset, segment_session
from .errors import ConfigError, DataError, TotkitError
from .evaluation import (MAE_COLUMNS, data_fraction_experiment, emit_report, per_activity_report,
                         run_ablation)
from .features import ABLATION_MASKS, FeatureMask
from .generator import generate_cds_mirror, noise_floor
from .splits import DatasetManifest, fit_stereo_normalization, split_dataset
from .streaming import StreamRuntime, run_live, safety_gate
from .training import train

log = logging.getLogger("totkit")


def _load_episodes(path: str):
    """A dataset directory, or a bare episodes JSONL file (no manifest)."""
    p = Path(path)
    if p.is_dir():
        return load_dataset(p)
    return read_episodes(p), None


def _need_manifest(manifest: DatasetManifest | None, path: str) -> DatasetManifest:
    if manifest is None:
        raise DataError(f"{path} has no split manifest; run 'totkit split' first")
    return manifest


def _write_text(path: str | None, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


# Subcommands

def cmd_generate(args, cfg: cfgmod.RunConfig) -> int:
    episodes = generate_cds_mirror(cfg.generator, seed=args.seed)
    manifest = split_dataset(episodes, cfg.split_ratios, seed=args.seed)
    manifest.generator = cfg.generator.to_flat()
    save_dataset(args.out, episodes, manifest)
    print(f"wrote {len(episodes)} episodes to {args.out}")
    return 0


def cmd_segment(args, cfg: cfgmod.RunConfig) -> int:
    frames = read_frames(args.frames)
    episodes = segment_session(frames, args.tor, rate=cfg.model.rate, session_id=args.session)
    if args.labels:
        with open(args.labels, encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
        if len(rows) != len(args.tor):
            raise DataError(f"{len(rows)} label rows for {len(args.tor)} TOR times")
        by_tor = {round(float(r["tor"]), 6): r for r in rows}
        labeled = []
        for ep in episodes:
            row = by_tor.get(round(ep.tor_time, 6))
            if row is None:
                # the TOR frame is the nearest frame, so match the nearest label row
                row = min(rows, key=lambda r: abs(float(r["tor"]) - ep.tor_time))
            labeled.append(annotate_targets(ep, float(row["t_e"]), float(row["t_f"]), float(row["t_h"]),
                                            row.get("activity") or None))
        episodes = labeled
    write_episodes(episodes, args.out)
    print(f"wrote {len(episodes)} episodes to {args.out}")
    return 0


def cmd_split(args, cfg: cfgmod.RunConfig) -> int:
    episodes, _ = _load_episodes(args.data)
    manifest = split_dataset(episodes, cfg.split_ratios, seed=args.seed)
    save_dataset(args.out, episodes, manifest)
    print(json.dumps({s: len(manifest.ids(s)) for s in ("train", "val", "test")}))
    return 0


def cmd_augment(args, cfg: cfgmod.RunConfig) -> int:
    episodes, manifest = _load_episodes(args.data)
    manifest = _need_manifest(manifest, args.data)
    originals = [ep for ep in episodes if ep.provenance != "augmented"]
    train_set = manifest.select(originals, "train")
    augmented = augment_dataset(train_set, seed=args.seed, k=cfg.augment_k, guard=cfg.augment_guard)
    new = augmented[len(train_set):]
    splits = {eid: s for eid, s in manifest.splits.items() if eid in {ep.episode_id for ep in originals}}
    splits.update({ep.episode_id: "train" for ep in new})
    manifest = replace(manifest, splits=splits,
                       notes={**manifest.notes, "augment": f"k={cfg.augment_k} guard={cfg.augment_guard} "
                                                           f"seed={args.seed} (train split only)"})
    save_dataset(args.out, originals + new, manifest)
    print(f"added {len(new)} augmented episodes to the training split")
    return 0


def _model_config(args, cfg: cfgmod.RunConfig):
    model = cfg.model
    if getattr(args, "mask", None):
        model = replace(model, mask=FeatureMask.parse(args.mask))
    if getattr(args, "arch", None):
        model = replace(model, architecture=args.arch)
    return model


def cmd_train(args, cfg: cfgmod.RunConfig) -> int:
    episodes, manifest = _load_episodes(args.data)
    manifest = _need_manifest(manifest, args.data)
    model = _model_config(args, cfg)
    train_set, val_set = manifest.select(episodes, "train"), manifest.select(episodes, "val", originals_only=True)
    if args.normalize_stereo:
        norm = fit_stereo_normalization(train_set)
        model = replace(model, **norm)
    hyper = cfg.train if args.epochs is None else replace(cfg.train, epochs=args.epochs)
    params, history = train(model, train_set, val_set, hyper)
    save_checkpoint(args.out, params, model, manifest, train=hyper.to_dict(), best_epoch=history.best_epoch)
    if args.history:
        with open(args.history, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", *(f"val_{c}" for c in MAE_COLUMNS)])
            for r in history.epochs:
                w.writerow([r.epoch, f"{r.train_loss:.6f}", *(f"{v:.6f}" for v in r.val_mae)])
    print(f"best epoch {history.best_epoch}, val TOT MAE {history.val_tot_mae[history.best_epoch - 1]:.4f} s")
    return 0


def _evaluate(args):
    params, model = load_checkpoint(args.checkpoint)
    episodes, manifest = _load_episodes(args.data)
    subset = episodes if manifest is None else manifest.select(episodes, args.split, originals_only=True)
    if not subset:
        raise DataError(f"split {args.split!r} is empty")
    return per_activity_report(params, model, subset), subset


def cmd_eval(args, cfg: cfgmod.RunConfig) -> int:
    report, subset = _evaluate(args)
    out = {"n": report.n, **dict(zip(MAE_COLUMNS, report.mae))}
    if args.noise_floor:
        out["noise_floor_tot"] = noise_floor(cfg.generator, [ep.activity for ep in subset])
    print(json.dumps(out))
    return 0


def cmd_report(args, cfg: cfgmod.RunConfig) -> int:
    report, _ = _evaluate(args)
    emit_report(report, args.format, args.out)
    print(f"wrote {args.format} report to {args.out}")
    return 0


def cmd_ablate(args, cfg: cfgmod.RunConfig) -> int:
    episodes, manifest = _load_episodes(args.data)
    manifest = _need_manifest(manifest, args.data)
    spec = [FeatureMask.parse(m) for m in args.masks] if args.masks else ABLATION_MASKS
    table = run_ablation(manifest.select(episodes, "train"), manifest.select(episodes, "val", originals_only=True),
                         spec, hyper=cfg.train, base=cfg.model, seed=args.seed)
    _write_text(args.out, table.to_csv())
    return 0


def cmd_fractions(args, cfg: cfgmod.RunConfig) -> int:
    episodes, manifest = _load_episodes(args.data)
    manifest = _need_manifest(manifest, args.data)
    table = data_fraction_experiment(
        manifest.select(episodes, "train"), manifest.select(episodes, "val", originals_only=True),
        manifest.select(episodes, "test", originals_only=True), args.fractions,
        hyper=cfg.train, config=cfg.model, seed=args.seed)
    _write_text(args.out, table.to_csv())
    return 0


def cmd_stream(args, cfg: cfgmod.RunConfig) -> int:
    params, model = load_checkpoint(args.checkpoint, expected_mask=args.mask)
    runtime = StreamRuntime(params, model, staleness=cfg.staleness)
    src = sys.stdin if args.input in (None, "-") else open(args.input, encoding="utf-8")
    try:
        run_live(runtime, src, sys.stdout, ttc=args.ttc, epsilon=args.epsilon)
    finally:
        if src is not sys.stdin:
            src.close()
    return 0


def cmd_gate(args, cfg: cfgmod.RunConfig) -> int:
    print(json.dumps(safety_gate(args.tot, args.ttc, args.epsilon).to_json()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="totkit", description="Take-over time prediction toolkit.")
    p.add_argument("--seed", type=int, default=None, help="run seed (default: train.seed from config)")
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--rate", type=float, default=None, help="frame rate in Hz (default 15)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("generate", help="write a synthetic 1,375-episode benchmark dataset")
    s.add_argument("--out", required=True, help="dataset directory")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("segment", help="cut a frame stream into TOR-centred episodes")
    s.add_argument("--frames", required=True, help="JSONL or CSV frame stream")
    s.add_argument("--tor", type=float, nargs="+", required=True, help="TOR timestamps (s)")
    s.add_argument("--labels", help="CSV with columns tor,t_e,t_f,t_h[,activity]")
    s.add_argument("--session", default="session")
    s.add_argument("--out", required=True, help="episodes JSONL")
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("split", help="stratified train/val/test assignment")
    s.add_argument("--data", required=True, help="episodes JSONL or dataset directory")
    s.add_argument("--out", required=True, help="dataset directory")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("augment", help="TOR-shift augmentation of the training split")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("train", help="train a model and write a checkpoint")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--mask", help="feature families, e.g. F+G+H+S+O")
    s.add_argument("--arch", choices=("id-lstms", "single-lstm"))
    s.add_argument("--epochs", type=int)
    s.add_argument("--normalize-stereo", action="store_true")
    s.add_argument("--history", help="write per-epoch history CSV here")
    s.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "print MAE metrics as JSON"),
                                 ("report", cmd_report, "write a per-activity report")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--data", required=True)
        s.add_argument("--checkpoint", required=True)
        s.add_argument("--split", default="test")
        if name == "eval":
            s.add_argument("--noise-floor", action="store_true",
                           help="also print the generator's analytic TOT noise floor")
        else:
            s.add_argument("--format", choices=("csv", "svg", "markdown"), default="csv")
            s.add_argument("--out", required=True)
        s.set_defaults(func=func)

    s = sub.add_parser("ablate", help="feature-combination ablation table (CSV)")
    s.add_argument("--data", required=True)
    s.add_argument("--masks", nargs="+", help="override the default 11 masks")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("fractions", help="training-data fraction experiment (CSV)")
    s.add_argument("--data", required=True)
    s.add_argument("--fractions", type=float, nargs="+", default=[0.75, 0.9, 1.0])
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_fractions)

    s = sub.add_parser("stream", help="JSONL frames in, JSONL predictions out")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", help="frame JSONL file or named pipe (default stdin)")
    s.add_argument("--mask", help="refuse checkpoints trained on other features")
    s.add_argument("--ttc", type=float, help="also gate each prediction against this TTC")
    s.add_argument("--epsilon", type=float, default=0.0)
    s.set_defaults(func=cmd_stream)

    s = sub.add_parser("gate", help="apply the TOT + epsilon < TTC handover rule")
    s.add_argument("--tot", type=float, required=True)
    s.add_argument("--ttc", type=float, required=True)
    s.add_argument("--epsilon", type=float, required=True)
    s.set_defaults(func=cmd_gate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = cfgmod.load(args.config) if args.config else cfgmod.RunConfig()
        if args.rate is not None:
            cfg = cfg.with_rate(args.rate)
        if args.seed is None:
            args.seed = cfg.seed
        else:
            cfg = cfg.with_seed(args.seed)
        return args.func(args, cfg)
    except (TotkitError, ConfigError, OSError) as exc:
        print(f"totkit {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
