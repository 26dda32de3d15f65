"""Command-line surface: synthesize datasets, train variants, evaluate label
files, and emit sorted-run reports.

Exit codes: 0 success, 1 validation/config/parse error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from . import dataio, reporting, synthgen
from .config import ConfigError, ExperimentConfig, config_help_text, load_config
from .evaluation import event_based_f1, segment_based_f1, tagging_f1
from .labels import weak_from_strong
from .train import (
    VARIANTS,
    ExperimentSetup,
    TrainingDiverged,
    configure_variant,
    read_summary,
    run_experiment,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _templates_from_config(cfg: ExperimentConfig) -> tuple[list[synthgen.EventTemplateSpec], list[str]]:
    classes = list(cfg["synth.classes"])
    kinds = cfg["synth.kinds"]
    freqs = cfg["synth.base_freqs"]
    if not classes:
        raise ConfigError("synth.classes must name at least one class")
    templates = [
        synthgen.EventTemplateSpec(
            c,
            kinds[c % len(kinds)],
            freqs[c % len(freqs)],
            (cfg["synth.duration_min"], cfg["synth.duration_max"]),
            (cfg["synth.snr_min"], cfg["synth.snr_max"]),
        )
        for c in range(len(classes))
    ]
    return templates, classes


def _soundscape_spec(cfg: ExperimentConfig, n_classes: int) -> synthgen.SoundscapeSpec:
    dist = cfg["synth.class_distribution"]
    if not dist:
        dist = tuple(1.0 / n_classes for _ in range(n_classes))
    if len(dist) != n_classes:
        raise ConfigError(f"class_distribution has {len(dist)} entries for {n_classes} classes")
    return synthgen.SoundscapeSpec(
        clip_duration=cfg["synth.clip_duration"],
        events_per_clip_range=(cfg["synth.events_min"], cfg["synth.events_max"]),
        background_level_db=cfg["synth.background_db"],
        class_distribution=dist,
    )


def cmd_synth(args) -> int:
    cfg = load_config(args.config, args.set)
    templates, classes = _templates_from_config(cfg)
    spec = _soundscape_spec(cfg, len(classes))
    n_clips = args.n_clips if args.n_clips is not None else cfg["synth.n_clips"]
    seed = args.seed if args.seed is not None else cfg["train.seed"]
    manifest = synthgen.generate_dataset(
        spec,
        templates,
        classes,
        n_clips,
        args.out,
        cfg["features.sample_rate"],
        seed,
        source=args.source,
    )
    print(f"wrote {len(manifest.entries)} clips to {args.out} (source {args.source}, seed {seed})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    train_cfg = cfg.train_cfg()
    if args.seed is not None:
        train_cfg.seed = args.seed
    train_cfg = configure_variant(train_cfg, args.variant)
    manifests = list(cfg["data.train_manifests"])
    if args.train_manifest:
        manifests = list(args.train_manifest)
    eval_manifest = args.eval_manifest or cfg["data.eval_manifest"]
    if not manifests or not eval_manifest:
        raise ConfigError("training needs data.train_manifests and data.eval_manifest")
    setup = ExperimentSetup(
        train_manifests=manifests,
        eval_manifest=eval_manifest,
        feature_cfg=cfg.feature_cfg(),
        model_cfg=cfg.model_cfg(),
        train_cfg=train_cfg,
        eval_cfg=cfg.eval_cfg(),
        variant=args.variant,
    )
    out_dir = Path(args.out if args.out else cfg["data.out_dir"]) / args.variant
    summary = run_experiment(setup, args.seeds, jobs=args.jobs, out_dir=out_dir)
    agg = summary.aggregate()
    print(f"variant {args.variant}: {args.seeds} seed(s) -> {out_dir}")
    for name, a in agg.items():
        print(f"  {name}: mean {a['mean']:.4f} +/- {a['std']:.4f}, best {a['best']:.4f}")
    return EXIT_OK


def _weak_records_for_tagging(labels, clip_ids):
    records = dict(weak_from_strong(labels))
    return [records.get(cid, dataio.WeakLabelRecord(cid, frozenset())) for cid in sorted(clip_ids)]


def cmd_eval(args) -> int:
    # collect the class vocabulary from both files first
    names: set[str] = set()
    for path in (args.ref, args.est):
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                fields = line.split("\t")
                if line_no == 1 and fields[0].strip().lower() == "filename":
                    continue
                if len(fields) == 4:
                    names.add(fields[3])
    class_names = sorted(names)
    ref = dataio.read_strong_labels(args.ref, class_names)
    est = dataio.read_strong_labels(args.est, class_names)
    if args.metric == "event":
        report = event_based_f1(ref, est, args.onset_collar, args.offset_collar, args.offset_ratio, args.average)
    elif args.metric == "segment":
        report = segment_based_f1(ref, est, args.segment_length, args.average)
    else:
        clip_ids = {lab.clip_id for lab in ref} | {lab.clip_id for lab in est}
        report = tagging_f1(
            _weak_records_for_tagging(ref, clip_ids), _weak_records_for_tagging(est, clip_ids), args.average
        )
    record = {
        "metric": args.metric,
        "params": {
            "onset_collar": args.onset_collar,
            "offset_collar": args.offset_collar,
            "offset_ratio": args.offset_ratio,
            "segment_length": args.segment_length,
            "average": args.average,
        },
        **asdict(report),
    }
    print(
        f"{args.metric}-based F1 = {report.f1:.4f} "
        f"(precision {report.precision:.4f}, recall {report.recall:.4f}, "
        f"tp {report.tp}, fp {report.fp}, fn {report.fn})"
    )
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(record, fh, indent=2)
            fh.write("\n")
    return EXIT_OK


def cmd_report(args) -> int:
    summaries = [read_summary(path) for path in args.summaries]
    rows = reporting.sorted_f1_rows(summaries)
    reporting.write_report_csv(args.out_csv, rows)
    reporting.write_report_svg(args.out_svg, summaries)
    print(f"wrote {args.out_csv} ({len(rows)} rows) and {args.out_svg} ({len(summaries)} systems)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sedlab",
        description="Weakly-supervised sound event detection lab with a frame-pairwise distance loss.",
        epilog=config_help_text(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset",
                             epilog=config_help_text(), formatter_class=argparse.RawDescriptionHelpFormatter)
    p_synth.add_argument("--config", default=None, help="INI config file")
    p_synth.add_argument("--out", required=True, help="output dataset directory")
    p_synth.add_argument("--n-clips", type=int, default=None, help="override synth.n_clips")
    p_synth.add_argument("--seed", type=int, default=None, help="override train.seed for generation")
    p_synth.add_argument("--source", choices=(dataio.SOURCE_SS, dataio.SOURCE_RW), default=dataio.SOURCE_SS,
                         help="mark clips as SS (strong labels used) or RW (weak labels only)")
    p_synth.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", help="train one system variant over several seeds",
                             epilog=config_help_text(), formatter_class=argparse.RawDescriptionHelpFormatter)
    p_train.add_argument("--config", default=None, help="INI config file")
    p_train.add_argument("--variant", choices=VARIANTS, default="fpd-euc", help="system variant")
    p_train.add_argument("--seeds", type=int, default=1, help="number of seeds to train")
    p_train.add_argument("--jobs", type=int, default=1, help="parallel seed jobs")
    p_train.add_argument("--seed", type=int, default=None, help="override train.seed")
    p_train.add_argument("--train-manifest", action="append", default=[], help="training manifest (repeatable)")
    p_train.add_argument("--eval-manifest", default=None, help="evaluation manifest")
    p_train.add_argument("--out", default=None, help="output directory (default data.out_dir)")
    p_train.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="score an estimated label file against a reference")
    p_eval.add_argument("--ref", required=True, help="reference strong-label TSV")
    p_eval.add_argument("--est", required=True, help="estimated strong-label TSV")
    p_eval.add_argument("--metric", choices=("event", "segment", "tagging"), default="event")
    p_eval.add_argument("--onset-collar", type=float, default=0.2)
    p_eval.add_argument("--offset-collar", type=float, default=0.2)
    p_eval.add_argument("--offset-ratio", type=float, default=0.2)
    p_eval.add_argument("--segment-length", type=float, default=1.0)
    p_eval.add_argument("--average", choices=("micro", "macro"), default="micro")
    p_eval.add_argument("--json", default=None, help="also write a machine-readable JSON record")
    p_eval.set_defaults(func=cmd_eval)

    p_report = sub.add_parser("report", help="sorted per-seed F1 curves as CSV + SVG")
    p_report.add_argument("summaries", nargs="+", help="summary.jsonl files, one per system")
    p_report.add_argument("--out-csv", required=True)
    p_report.add_argument("--out-svg", required=True)
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, dataio.DatasetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TrainingDiverged, OSError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
