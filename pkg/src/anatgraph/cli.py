"""Command-line entry point.

Commands: ``generate`` (synthetic dataset to CSV), ``train`` (one split),
``loso`` (full leave-one-subject-out protocol), ``report`` (re-render
artifacts from a saved run), ``gradcheck`` (finite-difference suite).

Exit codes: 0 success, 2 malformed configuration (message names the field
path), 3 training aborted on a non-finite loss (message names the term),
1 anything else. Errors print as a single ``error: ...`` line on stderr.
Set ``ANATGRAPH_LOG`` to a level name (e.g. DEBUG) for verbose logging.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import RunConfig, apply_overrides, load_config, write_resolved
from .data import (build_dataset, export_csv, generate_synthetic, ingest_csv, load_manifest,
                   make_synthetic_dataset, save_manifest, synthetic_manifest)
from .errors import ConfigError, TrainingAborted
from .experiments import (load_records, make_folds, report, run_fold, run_loso, save_records,
                          summarize)
from .gradcheck import run_suite
from .layers import save_checkpoint


def _setup_logging() -> None:
    level = os.environ.get("ANATGRAPH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def dataset_from_config(cfg: RunConfig):
    if cfg.data.source == "synthetic":
        return make_synthetic_dataset(cfg.data.synthetic)
    manifest = load_manifest(cfg.data.manifest_path)
    recordings = ingest_csv(cfg.data.csv_path, manifest)
    return build_dataset(recordings, manifest, cfg.data.window_len, cfg.data.window_stride)


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    return apply_overrides(cfg, args.set or [])


def _cmd_generate(args) -> int:
    cfg = _load_run_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out)
    recordings = generate_synthetic(cfg.data.synthetic)
    manifest = synthetic_manifest(cfg.data.synthetic)
    export_csv(recordings, manifest, out / "dataset.csv")
    save_manifest(manifest, out / "manifest.json")
    print(f"wrote {out / 'dataset.csv'} and manifest for {len(recordings)} recordings")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_run_config(args)
    dataset = dataset_from_config(cfg)
    write_resolved(cfg, cfg.out_dir)
    folds = make_folds(dataset.clusters)
    held_out = cfg.held_out or folds[0].held_out
    matching = [(i, f) for i, f in enumerate(folds) if f.held_out == held_out]
    if not matching:
        raise ConfigError(f"held_out cluster {held_out!r} not in dataset clusters {sorted(dataset.clusters)}")
    index, spec = matching[0]
    record = run_fold(dataset, spec, cfg, index)
    report([record], cfg.out_dir, dataset.class_names, cfg.pearson_prefix_step)
    save_records([record], dataset.class_names, cfg.out_dir)
    print(f"fold {spec.held_out}: accuracy {record.final_accuracy:.4f}")
    return 0


def _cmd_loso(args) -> int:
    cfg = _load_run_config(args)
    dataset = dataset_from_config(cfg)
    write_resolved(cfg, cfg.out_dir)
    records = run_loso(dataset, cfg, parallel_folds=args.parallel_folds)
    report(records, cfg.out_dir, dataset.class_names, cfg.pearson_prefix_step)
    save_records(records, dataset.class_names, cfg.out_dir)
    summary = summarize(records)
    for record in records:
        print(f"fold {record.fold}: accuracy {record.final_accuracy:.4f}")
    print(f"mean {summary['mean_accuracy']:.4f} std {summary['std_accuracy']:.4f}")
    return 0


def _cmd_report(args) -> int:
    run_dir = Path(args.run)
    records_path = run_dir / "records.json"
    if not records_path.is_file():
        raise ConfigError(f"{records_path} not found; point --run at a completed run directory")
    records, class_names = load_records(records_path)
    out_dir = args.out or str(run_dir)
    written = report(records, out_dir, class_names, args.prefix_step)
    print(f"re-rendered {len(written)} artifacts into {out_dir}")
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_suite(trials=args.trials)
    width = max(len(name) for name in results)
    print(f"{'operation':<{width}}  max_rel_error")
    failed = False
    for name, err in results.items():
        status = "ok" if err < 1e-4 else "FAIL"
        print(f"{name:<{width}}  {err:.3e}  {status}")
        failed |= err >= 1e-4
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anatgraph", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", default="synth_default",
                       help="config file path or bundled profile name (default: synth_default)")
        p.add_argument("--out", default=None, help="output directory (overrides config out_dir)")
        p.add_argument("--seed", type=int, default=None, help="run seed (overrides config seed)")
        p.add_argument("--set", action="append", metavar="KEY.PATH=VALUE",
                       help="override a config field; value parses as a JSON literal")

    p_gen = sub.add_parser("generate", help="write a synthetic dataset as CSV plus manifest")
    add_common(p_gen)
    p_gen.set_defaults(fn=_cmd_generate)

    p_train = sub.add_parser("train", help="train and evaluate a single held-out split")
    add_common(p_train)
    p_train.set_defaults(fn=_cmd_train)

    p_loso = sub.add_parser("loso", help="run the full leave-one-subject-out protocol")
    add_common(p_loso)
    p_loso.add_argument("--parallel-folds", type=int, default=1,
                        help="run folds in up to N worker processes")
    p_loso.set_defaults(fn=_cmd_loso)

    p_report = sub.add_parser("report", help="re-render report files from a saved run")
    p_report.add_argument("--run", required=True, help="directory of a completed run (records.json)")
    p_report.add_argument("--out", default=None, help="where to write artifacts (default: the run dir)")
    p_report.add_argument("--prefix-step", type=int, default=10)
    p_report.set_defaults(fn=_cmd_report)

    p_gc = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p_gc.add_argument("--trials", type=int, default=100)
    p_gc.set_defaults(fn=_cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as err:
        print(f"error: config: {err}", file=sys.stderr)
        return 2
    except TrainingAborted as err:
        print(f"error: nan: {err.term}", file=sys.stderr)
        return 3
    except Exception as err:  # noqa: BLE001 - single-line machine-parsable failure
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
