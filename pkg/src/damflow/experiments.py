"""Declarative experiment plans: stratified compositions, PUB splits, runs.

A plan names its training basins, one or more test sets, the train/test
windows and the training configuration.  run_experiment fits normalization on
the training basins/window only, trains one model per seed, evaluates the
ensemble on every test set, and persists metrics, summaries, checkpoints,
a training log, and a manifest sufficient to reproduce the run bit-for-bit.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .data import Dataset, apply_normalization, fit_normalization
from .lstm import save_checkpoint
from .metrics import METRIC_NAMES, MetricsRecord, Summary, evaluate_pair, summarize
from .reservoirs import CATEGORIES, StratificationResult
from .training import (
    EnsembleModel,
    EpochLogRow,
    ModelTensors,
    TrainingConfig,
    predict_ensemble,
    train,
)

COMPOSITIONS = {
    "Z": ("zero",),
    "S": ("small",),
    "L": ("large",),
    "ZS": ("zero", "small"),
    "ZL": ("zero", "large"),
    "SL": ("small", "large"),
    "CONUS": ("zero", "small", "large"),
}

DEFAULT_TRAIN_WINDOW = (date(1990, 1, 1), date(1999, 12, 31))
DEFAULT_TEST_WINDOW = (date(2000, 1, 1), date(2009, 12, 31))


class ExperimentError(Exception):
    pass


@dataclass(frozen=True)
class ExperimentPlan:
    name: str
    train_ids: tuple[str, ...]
    test_sets: dict[str, tuple[str, ...]]
    train_window: tuple[date, date] = DEFAULT_TRAIN_WINDOW
    test_window: tuple[date, date] = DEFAULT_TEST_WINDOW
    config: TrainingConfig = field(default_factory=TrainingConfig)
    seeds: tuple[int, ...] | None = None  # None = config.seeds

    def __post_init__(self):
        if not self.train_ids:
            raise ExperimentError("plan has no training basins")
        if self.train_window[1] >= self.test_window[0]:
            raise ExperimentError("train window must precede the test window (disjoint)")

    @property
    def effective_seeds(self) -> tuple[int, ...]:
        return self.seeds if self.seeds is not None else self.config.seeds


def validate_plan(plan: ExperimentPlan, dataset: Dataset) -> None:
    referenced = set(plan.train_ids)
    for ids in plan.test_sets.values():
        referenced.update(ids)
    unknown = sorted(referenced - set(dataset.basins))
    if unknown:
        raise ExperimentError(f"plan references unknown basins: {unknown[:5]}")


def plan_to_json(plan: ExperimentPlan) -> str:
    doc = {
        "name": plan.name,
        "train_ids": list(plan.train_ids),
        "test_sets": {k: list(v) for k, v in plan.test_sets.items()},
        "train_window": [d.isoformat() for d in plan.train_window],
        "test_window": [d.isoformat() for d in plan.test_window],
        "config": {
            "batch_size": plan.config.batch_size,
            "sequence_length": plan.config.sequence_length,
            "hidden_size": plan.config.hidden_size,
            "dropout_p": plan.config.dropout_p,
            "epochs": plan.config.epochs,
            "adadelta_decay": plan.config.adadelta_decay,
            "adadelta_eps": plan.config.adadelta_eps,
            "d_in": plan.config.d_in,
            "iterations_per_epoch": plan.config.iterations_per_epoch,
            "warmup_days": plan.config.warmup_days,
        },
        "seeds": list(plan.effective_seeds),
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def plan_from_json(text: str) -> ExperimentPlan:
    doc = json.loads(text)
    cfg_doc = dict(doc.get("config", {}))
    seeds = tuple(doc["seeds"]) if "seeds" in doc else None
    if seeds:
        cfg_doc["seeds"] = seeds
    config = TrainingConfig(**cfg_doc)
    return ExperimentPlan(
        name=doc["name"],
        train_ids=tuple(doc["train_ids"]),
        test_sets={k: tuple(v) for k, v in doc["test_sets"].items()},
        train_window=tuple(date.fromisoformat(d) for d in doc["train_window"]),
        test_window=tuple(date.fromisoformat(d) for d in doc["test_window"]),
        config=config,
        seeds=seeds,
    )


def build_plan(
    name: str,
    stratification: StratificationResult,
    composition: str,
    config: TrainingConfig | None = None,
    seeds: tuple[int, ...] | None = None,
    train_window: tuple[date, date] = DEFAULT_TRAIN_WINDOW,
    test_window: tuple[date, date] = DEFAULT_TEST_WINDOW,
) -> ExperimentPlan:
    """Resolve a named composition (Z, S, L, ZS, ZL, SL, CONUS) into id lists.

    Test sets are recorded per category so results can be reported per group,
    plus an "all" set covering the whole training composition.
    """
    if composition not in COMPOSITIONS:
        raise ExperimentError(
            f"unknown composition {composition!r}; expected one of {sorted(COMPOSITIONS)}"
        )
    partition = stratification.partition
    categories = COMPOSITIONS[composition]
    train_ids: list[str] = []
    test_sets: dict[str, tuple[str, ...]] = {}
    for cat in categories:
        ids = sorted(partition[cat])
        train_ids.extend(ids)
        test_sets[cat] = tuple(ids)
    test_sets["all"] = tuple(sorted(train_ids))
    return ExperimentPlan(
        name=name,
        train_ids=tuple(sorted(train_ids)),
        test_sets=test_sets,
        train_window=train_window,
        test_window=test_window,
        config=config or TrainingConfig(),
        seeds=seeds,
    )


# ---------------------------------------------------------------------------
# PUB splits (prediction in ungauged basins)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PubSplit:
    category: str
    train_ids: tuple[str, ...]
    pub_ids: tuple[str, ...]


def split_pub(
    basins: list[tuple[str, str]],
    rng_seed: int,
    category: str = "",
) -> PubSplit:
    """Halve a basin set 1:1, stratified so each ecoregion lands in both sides.

    basins: (gauge_id, ecoregion) pairs.  Within each ecoregion the ids are
    shuffled and halved; an odd remainder alternates sides round-robin by
    ecoregion order so the global sizes stay balanced.
    """
    if not basins:
        raise ExperimentError("cannot split an empty basin set")
    rng = np.random.default_rng(rng_seed)
    by_eco: dict[str, list[str]] = {}
    for gid, eco in basins:
        by_eco.setdefault(eco, []).append(gid)
    train_ids: list[str] = []
    pub_ids: list[str] = []
    extra_to_train = True
    for eco in sorted(by_eco):
        ids = sorted(by_eco[eco])
        order = rng.permutation(len(ids))
        shuffled = [ids[k] for k in order]
        half = len(shuffled) // 2
        if len(shuffled) % 2 == 1:
            if extra_to_train:
                train_ids.extend(shuffled[:half + 1])
                pub_ids.extend(shuffled[half + 1:])
            else:
                train_ids.extend(shuffled[:half])
                pub_ids.extend(shuffled[half:])
            extra_to_train = not extra_to_train
        else:
            train_ids.extend(shuffled[:half])
            pub_ids.extend(shuffled[half:])
    return PubSplit(
        category=category,
        train_ids=tuple(sorted(train_ids)),
        pub_ids=tuple(sorted(pub_ids)),
    )


def _category_pairs(dataset: Dataset, ids) -> list[tuple[str, str]]:
    return [(gid, dataset.basins[gid].ecoregion) for gid in sorted(ids)]


def pub_transfer_plans(
    primary: str,
    secondary: str,
    stratification: StratificationResult,
    dataset: Dataset,
    split_seed: int,
    config: TrainingConfig | None = None,
    seeds: tuple[int, ...] = (123,),
    train_window: tuple[date, date] = DEFAULT_TRAIN_WINDOW,
    test_window: tuple[date, date] = DEFAULT_TEST_WINDOW,
) -> list[ExperimentPlan]:
    """One PUB sub-experiment: a single-category run and its mixed companion.

    Plan 1 trains on half of the primary category and tests on that half
    (temporal generalization), the held-out primary half (spatial
    extrapolation) and the secondary PUB half (extrapolation + regime shift).
    Plan 2 trains on the merged train halves and tests on both PUB halves.
    """
    for cat in (primary, secondary):
        if cat not in CATEGORIES:
            raise ExperimentError(f"unknown category {cat!r}")
    partition = stratification.partition
    split_a = split_pub(_category_pairs(dataset, partition[primary]), split_seed, primary)
    split_b = split_pub(_category_pairs(dataset, partition[secondary]), split_seed + 1, secondary)
    cfg = config or TrainingConfig()
    single = ExperimentPlan(
        name=f"pub-{primary}-{secondary}-single",
        train_ids=split_a.train_ids,
        test_sets={
            f"train-{primary}": split_a.train_ids,
            f"pub-{primary}": split_a.pub_ids,
            f"pub-{secondary}": split_b.pub_ids,
        },
        train_window=train_window,
        test_window=test_window,
        config=cfg,
        seeds=seeds,
    )
    mixed = ExperimentPlan(
        name=f"pub-{primary}-{secondary}-mixed",
        train_ids=tuple(sorted(split_a.train_ids + split_b.train_ids)),
        test_sets={
            f"pub-{primary}": split_a.pub_ids,
            f"pub-{secondary}": split_b.pub_ids,
        },
        train_window=train_window,
        test_window=test_window,
        config=cfg,
        seeds=seeds,
    )
    return [single, mixed]


def reference_transfer_plan(
    reference_ids,
    stratification: StratificationResult,
    dataset: Dataset,
    split_seed: int,
    config: TrainingConfig | None = None,
    seeds: tuple[int, ...] = (123,),
    train_window: tuple[date, date] = DEFAULT_TRAIN_WINDOW,
    test_window: tuple[date, date] = DEFAULT_TEST_WINDOW,
) -> ExperimentPlan:
    """Transferability of a model trained on half of a reference basin list,
    tested on the other half and on each dor category outside the reference set."""
    reference = set(reference_ids)
    unknown = sorted(reference - set(dataset.basins))
    if unknown:
        raise ExperimentError(f"unknown reference basins: {unknown[:5]}")
    split_c = split_pub(_category_pairs(dataset, reference), split_seed, "reference")
    test_sets: dict[str, tuple[str, ...]] = {
        "train-ref": split_c.train_ids,
        "pub-ref": split_c.pub_ids,
    }
    partition = stratification.partition
    for cat in CATEGORIES:
        outside = tuple(sorted(set(partition[cat]) - reference))
        if outside:
            test_sets[f"pub-{cat}"] = outside
    return ExperimentPlan(
        name="pub-reference",
        train_ids=split_c.train_ids,
        test_sets=test_sets,
        train_window=train_window,
        test_window=test_window,
        config=config or TrainingConfig(),
        seeds=seeds,
    )


# ---------------------------------------------------------------------------
# Running a plan
# ---------------------------------------------------------------------------


def dataset_content_hash(dataset: Dataset) -> str:
    """Stable sha256 over every basin's record and series bytes."""
    digest = hashlib.sha256()
    for gid in dataset.gauge_ids:
        basin = dataset.basins[gid]
        digest.update(gid.encode())
        digest.update(np.float64(basin.area_km2).tobytes())
        digest.update(np.float64(basin.mean_annual_runoff).tobytes())
        digest.update(basin.ecoregion.encode())
        digest.update(basin.attributes.tobytes())
        for dam in basin.dams:
            digest.update(np.float64(dam.normal_storage).tobytes())
            digest.update(dam.purpose_code.encode())
        for text in basin.remarks:
            digest.update(text.encode())
        forcing = dataset.forcings[gid]
        digest.update(forcing.start_date.isoformat().encode())
        digest.update(forcing.values.tobytes())
        flow = dataset.flows[gid]
        digest.update(flow.values.tobytes())
    return digest.hexdigest()


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv_atomic(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    tmp.replace(path)


def write_metrics_csv(path: Path, records: list[MetricsRecord]) -> None:
    rows = [
        [r.gauge_id, r.bias, r.corr, r.nse, r.kge, r.fhv, r.flv]
        for r in sorted(records, key=lambda r: r.gauge_id)
    ]
    write_csv_atomic(path, ["gauge_id", *METRIC_NAMES], rows)


def read_metrics_csv(path: Path) -> list[MetricsRecord]:
    records = []
    lines = path.read_text(encoding="utf-8").splitlines()
    header = lines[0].split(",")
    expected = ["gauge_id", *METRIC_NAMES]
    if header != expected:
        raise ExperimentError(f"{path}: unexpected header {header}")
    for line in lines[1:]:
        cells = line.split(",")
        records.append(
            MetricsRecord(
                gauge_id=cells[0],
                **{name: float(cells[k + 1]) for k, name in enumerate(METRIC_NAMES)},
            )
        )
    return records


def write_summary_csv(path: Path, summaries: dict[str, Summary]) -> None:
    rows = []
    for metric in METRIC_NAMES:
        s = summaries[metric]
        five = s.five_number or (float("nan"),) * 5
        rows.append([metric, s.n_total, s.n_infinite, s.n_undefined,
                     five[0], five[1], five[2], five[3], five[4]])
    write_csv_atomic(
        path,
        ["metric", "n_total", "n_infinite", "n_undefined", "min", "q1", "median", "q3", "max"],
        rows,
    )


@dataclass
class ExperimentResult:
    plan: ExperimentPlan
    ensemble: EnsembleModel
    metrics: dict[str, list[MetricsRecord]]
    summaries: dict[str, dict[str, Summary]]
    log: list[EpochLogRow]
    out_dir: Path | None


def _train_one_seed(args):
    tensors, config, seed = args
    result = train(tensors, config, seed)
    return seed, result


def evaluate_ensemble(
    ensemble: EnsembleModel,
    dataset: Dataset,
    gauge_ids,
    test_window: tuple[date, date],
    warmup_days: int,
) -> list[MetricsRecord]:
    """Per-basin metrics of ensemble predictions over the test window."""
    records = []
    warm_start = test_window[0] - timedelta(days=warmup_days)
    for gid in sorted(gauge_ids):
        tensors = apply_normalization(
            ensemble.spec, dataset, (warm_start, test_window[1]), gauge_ids=[gid]
        )
        x, _ = tensors[gid]
        pred = predict_ensemble(ensemble, dataset, gid, x, warmup_days=warmup_days)
        flow = dataset.flows[gid]
        i0 = (test_window[0] - flow.start_date).days
        obs = flow.values[i0:i0 + pred.shape[0]]
        records.append(evaluate_pair(gid, obs, pred))
    return records


def run_experiment(
    plan: ExperimentPlan,
    dataset: Dataset,
    out_dir: str | Path | None = None,
    workers: int = 1,
) -> ExperimentResult:
    """Train, evaluate and persist one experiment.

    Training is deterministic per seed; seeds may run in parallel worker
    processes.  If any seed fails, partial artifacts are kept, the manifest is
    marked failed, and the error propagates.
    """
    validate_plan(plan, dataset)
    out_path = Path(out_dir) / plan.name if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    spec = fit_normalization(dataset, plan.train_window, gauge_ids=list(plan.train_ids))
    tensors = ModelTensors.from_normalized(
        apply_normalization(spec, dataset, plan.train_window, gauge_ids=list(plan.train_ids))
    )

    seeds = plan.effective_seeds
    members = {}
    log: list[EpochLogRow] = []
    manifest = {
        "plan": json.loads(plan_to_json(plan)),
        "dataset_hash": dataset_content_hash(dataset),
        "status": "running",
        "seeds_completed": [],
    }
    try:
        jobs = [(tensors, plan.config, seed) for seed in seeds]
        if workers > 1 and len(seeds) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(_train_one_seed, jobs))
        else:
            outcomes = [_train_one_seed(job) for job in jobs]
        for seed, result in outcomes:
            members[seed] = result.weights
            log.extend(result.log)
            if out_path is not None:
                save_checkpoint(
                    result.weights,
                    out_path / "checkpoints" / str(seed) / f"epoch{plan.config.epochs}.json",
                    seed=seed,
                )
                manifest["seeds_completed"].append(seed)
    except Exception:
        if out_path is not None:
            manifest["status"] = "failed"
            _write_manifest(out_path, manifest)
        raise

    ensemble = EnsembleModel(members=members, spec=spec)
    metrics: dict[str, list[MetricsRecord]] = {}
    summaries: dict[str, dict[str, Summary]] = {}
    for set_name in plan.test_sets:
        records = evaluate_ensemble(
            ensemble, dataset, plan.test_sets[set_name], plan.test_window,
            plan.config.warmup_days,
        )
        metrics[set_name] = records
        summaries[set_name] = {
            m: summarize([getattr(r, m) for r in records]) for m in METRIC_NAMES
        }
        if out_path is not None:
            write_metrics_csv(out_path / f"metrics_{set_name}.csv", records)
            write_summary_csv(out_path / f"summary_{set_name}.csv", summaries[set_name])

    if out_path is not None:
        write_csv_atomic(
            out_path / "training_log.csv",
            ["seed", "epoch", "mean_minibatch_loss", "wall_time_s"],
            [[row.seed, row.epoch, row.mean_loss, row.wall_time_s] for row in log],
        )
        manifest["status"] = "completed"
        _write_manifest(out_path, manifest)

    return ExperimentResult(
        plan=plan, ensemble=ensemble, metrics=metrics,
        summaries=summaries, log=log, out_dir=out_path,
    )


def _write_manifest(out_path: Path, manifest: dict) -> None:
    tmp = out_path / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    tmp.replace(out_path / "manifest.json")
