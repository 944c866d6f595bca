"""Command-line entry point.

Subcommands: ingest, stratify, train, evaluate, experiment, synthgen, report.
The data root comes from --data or the DAMFLOW_DATA environment variable.
Exit codes: 0 success, 1 usage error, 2 data error, 3 run failure.
All outputs are written atomically (temp file + rename), so re-running a
command with identical inputs and seeds reproduces identical files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import date
from pathlib import Path

from .data import DataError, Dataset, ingest_dataset, write_dataset
from .experiments import (
    COMPOSITIONS,
    ExperimentError,
    ExperimentPlan,
    build_plan,
    evaluate_ensemble,
    plan_from_json,
    read_metrics_csv,
    run_experiment,
    write_csv_atomic,
    write_metrics_csv,
)
from .lstm import load_checkpoint
from .metrics import METRIC_NAMES, summarize
from .reservoirs import AttributionError, stratify
from .synthetic import generate_suite
from .training import DEFAULT_SEEDS, EnsembleModel, TrainingConfig, TrainingError
from .data import fit_normalization

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUN = 3


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the documented contract is 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_date(text: str) -> date:
    try:
        return date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date: {text!r}")


def _parse_seeds(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.split(",") if s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers: {text!r}")


def build_parser() -> _Parser:
    parser = _Parser(prog="damflow", description=__doc__)
    parser.add_argument(
        "--data",
        default=os.environ.get("DAMFLOW_DATA"),
        help="data root directory (default: $DAMFLOW_DATA)",
    )
    parser.add_argument("--out", default="runs", help="output root directory")
    parser.add_argument("--workers", type=int, default=1, help="parallel worker count")
    parser.add_argument("--seed", type=int, default=None,
                        help="override random seed (synthgen master seed / single training seed)")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("ingest", help="validate and load the data root, print a report")

    sub.add_parser("stratify", help="write stratification.csv (dor, category, purposes, diversion)")

    p_train = sub.add_parser("train", help="train an ensemble on a basin composition")
    p_train.add_argument("--composition", default="CONUS", choices=sorted(COMPOSITIONS),
                         help="training basin composition")
    p_train.add_argument("--name", default=None, help="run name (default: lstm-<composition>)")
    p_train.add_argument("--epochs", type=int, default=300)
    p_train.add_argument("--hidden", type=int, default=256)
    p_train.add_argument("--batch", type=int, default=100)
    p_train.add_argument("--sequence", type=int, default=365)
    p_train.add_argument("--dropout", type=float, default=0.5)
    p_train.add_argument("--seeds", type=_parse_seeds, default=DEFAULT_SEEDS,
                         help="comma-separated training seeds")
    p_train.add_argument("--train-start", type=_parse_date, default=date(1990, 1, 1))
    p_train.add_argument("--train-end", type=_parse_date, default=date(1999, 12, 31))
    p_train.add_argument("--test-start", type=_parse_date, default=date(2000, 1, 1))
    p_train.add_argument("--test-end", type=_parse_date, default=date(2009, 12, 31))
    p_train.add_argument("--no-eval", action="store_true",
                         help="train and checkpoint only; skip test-set evaluation")

    p_eval = sub.add_parser("evaluate", help="re-evaluate a trained run's checkpoints")
    p_eval.add_argument("--run", required=True, help="run directory (with manifest.json)")

    p_exp = sub.add_parser("experiment", help="experiment plan operations")
    exp_sub = p_exp.add_subparsers(dest="experiment_command", required=True)
    p_exp_run = exp_sub.add_parser("run", help="run a plan file")
    p_exp_run.add_argument("plan", help="path to plan JSON")

    p_syn = sub.add_parser("synthgen", help="generate a synthetic dataset in ingestion format")
    p_syn.add_argument("--n-per-regime", type=int, default=8)
    p_syn.add_argument("--days", type=int, default=3652)
    p_syn.add_argument("--master-seed", type=int, default=20240501)
    p_syn.add_argument("--start", type=_parse_date, default=date(1990, 1, 1))

    p_rep = sub.add_parser("report", help="emit per-basin table and CDF/boxplot files for a run")
    p_rep.add_argument("--run", required=True, help="run directory (with metrics CSVs)")
    p_rep.add_argument("--test-set", default=None,
                       help="which test set to report (default: 'all' when present)")

    return parser


def _load_dataset(args) -> Dataset:
    if not args.data:
        raise DataError("no data root: pass --data or set DAMFLOW_DATA")
    dataset, report = ingest_dataset(args.data)
    if report.issues:
        for issue in report.issues:
            print(f"rejected {issue}", file=sys.stderr)
    if not dataset.basins:
        raise DataError(f"{args.data}: no valid basins")
    return dataset


def cmd_ingest(args) -> int:
    if not args.data:
        raise DataError("no data root: pass --data or set DAMFLOW_DATA")
    dataset, report = ingest_dataset(args.data)
    print(f"loaded {report.n_loaded} basins from {args.data}")
    for issue in report.issues:
        print(f"rejected {issue}")
    if report.issues:
        print(f"{len(report.rejected_ids)} basins rejected")
        return EXIT_DATA
    return EXIT_OK


def cmd_stratify(args) -> int:
    dataset = _load_dataset(args)
    result = stratify(dataset)
    rows = []
    for row in result.rows:
        rows.append([
            row.gauge_id,
            "" if row.dor is None else repr(row.dor),
            row.category or "",
            "|".join(row.major_purposes),
            str(row.diversion).lower(),
            row.excluded_reason or "",
        ])
    out = Path(args.out)
    write_csv_atomic(
        out / "stratification.csv",
        ["gauge_id", "dor", "category", "major_purposes", "diversion", "excluded_reason"],
        rows,
    )
    part = result.partition
    print(f"zero={len(part['zero'])} small={len(part['small'])} large={len(part['large'])} "
          f"excluded_from_purpose_stats={len(result.purpose_excluded)}")
    print(f"wrote {out / 'stratification.csv'}")
    return EXIT_OK


def _config_from_args(args) -> TrainingConfig:
    seeds = (args.seed,) if args.seed is not None else tuple(args.seeds)
    return TrainingConfig(
        batch_size=args.batch,
        sequence_length=args.sequence,
        hidden_size=args.hidden,
        dropout_p=args.dropout,
        epochs=args.epochs,
        seeds=seeds,
    )


def cmd_train(args) -> int:
    dataset = _load_dataset(args)
    strat = stratify(dataset)
    config = _config_from_args(args)
    plan = build_plan(
        name=args.name or f"lstm-{args.composition.lower()}",
        stratification=strat,
        composition=args.composition,
        config=config,
        train_window=(args.train_start, args.train_end),
        test_window=(args.test_start, args.test_end),
    )
    if args.no_eval:
        plan = ExperimentPlan(
            name=plan.name, train_ids=plan.train_ids, test_sets={},
            train_window=plan.train_window, test_window=plan.test_window,
            config=plan.config, seeds=plan.seeds,
        )
    result = run_experiment(plan, dataset, out_dir=args.out, workers=args.workers)
    print(f"run complete: {result.out_dir}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    run_dir = Path(args.run)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.is_file():
        raise ExperimentError(f"missing upstream artifact: {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    plan = plan_from_json(json.dumps(manifest["plan"]))
    dataset = _load_dataset(args)

    members = {}
    for seed in plan.effective_seeds:
        ckpt = run_dir / "checkpoints" / str(seed) / f"epoch{plan.config.epochs}.json"
        if not ckpt.is_file():
            raise ExperimentError(f"missing upstream artifact: {ckpt}")
        weights, _ = load_checkpoint(ckpt)
        members[seed] = weights
    spec = fit_normalization(dataset, plan.train_window, gauge_ids=list(plan.train_ids))
    ensemble = EnsembleModel(members=members, spec=spec)

    for set_name, ids in plan.test_sets.items():
        records = evaluate_ensemble(ensemble, dataset, ids, plan.test_window,
                                    plan.config.warmup_days)
        write_metrics_csv(run_dir / f"metrics_{set_name}.csv", records)
        print(f"wrote {run_dir / f'metrics_{set_name}.csv'}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    plan_path = Path(args.plan)
    if not plan_path.is_file():
        raise ExperimentError(f"missing upstream artifact: {plan_path}")
    plan = plan_from_json(plan_path.read_text(encoding="utf-8"))
    dataset = _load_dataset(args)
    result = run_experiment(plan, dataset, out_dir=args.out, workers=args.workers)
    print(f"run complete: {result.out_dir}")
    return EXIT_OK


def cmd_synthgen(args) -> int:
    master_seed = args.seed if args.seed is not None else args.master_seed
    dataset, _ = generate_suite(
        args.n_per_regime, args.days, master_seed, start_date=args.start
    )
    out = Path(args.out)
    write_dataset(dataset, out)
    print(f"wrote {len(dataset)} synthetic basins to {out}")
    return EXIT_OK


def _write_annotated_csv(path: Path, comment: str, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# {comment}", ",".join(header)]
    lines.extend(",".join(str(c) for c in row) for row in rows)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    tmp.replace(path)


def cmd_report(args) -> int:
    run_dir = Path(args.run)
    if args.test_set is None:
        candidates = sorted(run_dir.glob("metrics_*.csv"))
        if not candidates:
            raise ExperimentError(f"missing upstream artifact: {run_dir}/metrics_*.csv")
        names = [p.stem.removeprefix("metrics_") for p in candidates]
        set_name = "all" if "all" in names else names[0]
    else:
        set_name = args.test_set
    metrics_path = run_dir / f"metrics_{set_name}.csv"
    if not metrics_path.is_file():
        raise ExperimentError(f"missing upstream artifact: {metrics_path}")
    records = read_metrics_csv(metrics_path)

    dataset = _load_dataset(args)
    strat = {row.gauge_id: row for row in stratify(dataset).rows}
    out = Path(args.out)

    join_rows = []
    for rec in sorted(records, key=lambda r: r.gauge_id):
        srow = strat.get(rec.gauge_id)
        join_rows.append([
            rec.gauge_id,
            "" if srow is None or srow.dor is None else repr(srow.dor),
            (srow.category or "") if srow else "",
            "|".join(srow.major_purposes) if srow else "",
            str(srow.diversion).lower() if srow else "",
            (srow.excluded_reason or "") if srow else "",
            *(repr(getattr(rec, m)) for m in METRIC_NAMES),
        ])
    write_csv_atomic(
        out / "basin_report.csv",
        ["gauge_id", "dor", "category", "major_purposes", "diversion", "excluded_reason",
         *METRIC_NAMES],
        join_rows,
    )

    for metric in METRIC_NAMES:
        summary = summarize([getattr(r, metric) for r in records])
        comment = (f"metric={metric} n_total={summary.n_total} "
                   f"n_infinite_excluded={summary.n_infinite} n_undefined={summary.n_undefined}")
        _write_annotated_csv(
            out / f"cdf_{metric}.csv", comment, ["value", "cum_fraction"],
            [[repr(v), repr(fr)] for v, fr in summary.cdf],
        )
        five = summary.five_number or (float("nan"),) * 5
        _write_annotated_csv(
            out / f"boxplot_{metric}.csv", comment,
            ["min", "q1", "median", "q3", "max"],
            [[repr(v) for v in five]],
        )
    print(f"wrote {out / 'basin_report.csv'} and per-metric cdf_/boxplot_ files")
    return EXIT_OK


_COMMANDS = {
    "ingest": cmd_ingest,
    "stratify": cmd_stratify,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "experiment": cmd_experiment,
    "synthgen": cmd_synthgen,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (DataError, AttributionError, FileNotFoundError) as err:
        print(f"damflow: data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except ExperimentError as err:
        print(f"damflow: error: {err}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as err:
        print(f"damflow: run failure: {err}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
