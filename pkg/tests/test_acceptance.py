"""Acceptance suite: one test per criterion, each at its stated tolerance.

The synthetic end-to-end criteria share one session-scoped set of training
runs (full-suite, zero-only, and zero+large compositions, two seeds each);
that fixture is the expensive part of this module.
"""

import functools
import json
import math
import os
import time
from datetime import date
from pathlib import Path

import numpy as np
import pytest

from damflow.data import (
    BasinRecord,
    discharge_from_depth,
    degaussianize,
    depth_mm_per_day,
    gaussianize,
    ingest_dataset,
    NormalizationSpec,
)
from damflow.experiments import ExperimentPlan, build_plan, run_experiment
from damflow.lstm import DropoutMasks, LstmDims, backward, forward, init_weights
from damflow.metrics import bias_and_corr, fhv, flv, kge, nse
from damflow.reservoirs import (
    REASON_DEBRIS_NAV,
    aggregate_purposes,
    compute_dor,
    detect_diversion,
    stratify,
)
from damflow.synthetic import generate_suite
from damflow.training import AdadeltaState, TrainingConfig, adadelta_step

from conftest import ACCEPTANCE_RESULTS, make_attributes
from test_lstm import finite_difference_grad, relative_errors, scalar_reference_forward
from test_metrics import ref_bias, ref_corr, ref_fhv, ref_flv, ref_kge, ref_nse
from test_training import scalar_adadelta_reference

TRAIN_WINDOW = (date(1990, 1, 1), date(1997, 12, 31))  # 8 simulated years
TEST_WINDOW = (date(1998, 1, 1), date(1999, 12, 31))   # 2 held-out years
SUITE_DAYS = 3652
SUITE_SEED = 20240501

ACCEPT_CONFIG = TrainingConfig(
    batch_size=16,
    sequence_length=365,
    hidden_size=32,
    dropout_p=0.5,
    epochs=150,
    seeds=(123, 1234),
)


def criterion(number: int, label: str):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                result = fn(*args, **kwargs)
            except pytest.skip.Exception:
                ACCEPTANCE_RESULTS.append((number, label, "SKIP"))
                raise
            except BaseException:
                ACCEPTANCE_RESULTS.append((number, label, "FAIL"))
                raise
            ACCEPTANCE_RESULTS.append((number, label, "PASS"))
            return result

        return wrapper

    return deco


# ---------------------------------------------------------------------------
# 1. Gradient correctness
# ---------------------------------------------------------------------------


@criterion(1, "gradient vs finite differences")
def test_criterion_1_gradients():
    started = time.monotonic()
    rng = np.random.default_rng(1001)
    dims = LstmDims(d_in_raw=5, hidden=4)
    for case in range(20):
        w = init_weights(dims, rng_seed=2000 + case)
        x = rng.normal(size=(8, 5))
        target = rng.normal(size=8)
        for use_masks in (True, False):
            masks = (
                DropoutMasks.sample(rng, 0.5, 1, dims.d_in, dims.hidden)
                if use_masks else None
            )

            def loss(weights):
                y, _ = forward(weights, masks, x)
                return 0.5 * float(np.sum((y - target) ** 2))

            y, trace = forward(w, masks, x)
            analytic = backward(trace, w, masks, y - target).flat()
            numeric = finite_difference_grad(w, masks, x, loss, eps=1e-5)
            worst = relative_errors(analytic, numeric).max()
            assert worst < 1e-6, f"case {case} masks={use_masks}: rel err {worst:.2e}"
    assert time.monotonic() - started < 30.0


# ---------------------------------------------------------------------------
# 2. Forward-equation fidelity
# ---------------------------------------------------------------------------


@criterion(2, "forward matches transcription oracle")
def test_criterion_2_forward_fidelity():
    rng = np.random.default_rng(1002)
    for case in range(10):
        dims = LstmDims(d_in_raw=int(rng.integers(2, 7)), hidden=int(rng.integers(2, 7)))
        w = init_weights(dims, rng_seed=3000 + case)
        x = rng.normal(size=(int(rng.integers(2, 10)), dims.d_in_raw))
        masks = DropoutMasks.sample(rng, 0.5, 1, dims.d_in, dims.hidden)
        y, _ = forward(w, masks, x)
        ref = scalar_reference_forward(w, masks.mask_x[0], masks.mask_h[0], x)
        np.testing.assert_allclose(y, ref, rtol=1e-12, atol=1e-12)


# ---------------------------------------------------------------------------
# 3. Metric oracle equivalence
# ---------------------------------------------------------------------------


def _close(a, b, rel=1e-10, abs_tol=1e-12):
    if math.isinf(a) or math.isinf(b):
        return a == b
    return abs(a - b) <= max(abs_tol, rel * max(abs(a), abs(b)))


@criterion(3, "metrics vs brute-force references")
def test_criterion_3_metric_oracles():
    rng = np.random.default_rng(1003)
    for _ in range(1000):
        n = int(rng.integers(50, 150))
        obs = rng.gamma(2.0, 5.0, n) + 0.01
        sim = np.abs(obs * rng.normal(1.0, 0.25) + rng.normal(0.0, 2.0, n)) + 0.01
        o, s = obs.tolist(), sim.tolist()
        assert _close(nse(obs, sim), ref_nse(o, s))
        assert _close(kge(obs, sim), ref_kge(o, s))
        b, r = bias_and_corr(obs, sim)
        assert _close(b, ref_bias(o, s)) and _close(r, ref_corr(o, s))
        assert _close(fhv(obs, sim), ref_fhv(o, s))
        assert _close(flv(obs, sim), ref_flv(o, s))

    # worked examples
    assert nse([1.0, 2.0, 3.0], [1.0, 2.0, 4.0]) == 0.5
    assert kge([1.0, 2.0, 3.0], [2.0, 4.0, 6.0]) == pytest.approx(
        1 - math.sqrt(2), abs=1e-12
    )
    obs = np.concatenate([[1.0, 2.0, 4.0], np.full(7, 50.0)])
    sim = np.concatenate([[1.0, 2.0, 8.0], np.full(7, 50.0)])
    assert flv(obs, sim) == pytest.approx(-100 * math.log(2) / math.log(8), abs=1e-9)


# ---------------------------------------------------------------------------
# 4. Normalization round-trip
# ---------------------------------------------------------------------------


@criterion(4, "normalization round-trip")
def test_criterion_4_normalization_roundtrip():
    assert gaussianize(0.0) == -1.0
    assert gaussianize(0.81) == 0.0

    rng = np.random.default_rng(1004)
    discharge = rng.gamma(1.5, 20.0, 10_000) * 10.0 ** rng.uniform(-2, 2, 10_000)
    area, precip = 321.0, 2.7
    mu, sigma = -0.35, 0.8
    basin = BasinRecord(
        gauge_id="rt", area_km2=area, mean_annual_runoff=1.0, ecoregion="x",
        attributes=make_attributes(0),
    )
    spec = NormalizationSpec(
        input_mean=np.zeros(37), input_std=np.ones(37),
        target_mean=mu, target_std=sigma,
        train_window=TRAIN_WINDOW, precip_mm_per_day={"rt": precip},
    )
    ratio = depth_mm_per_day(discharge, area) / precip
    z = (gaussianize(ratio) - mu) / sigma
    back = spec.invert_target(z, basin, precip)
    np.testing.assert_allclose(back, discharge, rtol=1e-8)


# ---------------------------------------------------------------------------
# 5. Adadelta update
# ---------------------------------------------------------------------------


@criterion(5, "adadelta matches scalar reference")
def test_criterion_5_adadelta():
    rng = np.random.default_rng(1005)
    gs = rng.normal(size=100)
    ref = scalar_adadelta_reference(gs, 0.95, 1e-6)

    dims = LstmDims(d_in_raw=1, hidden=1)
    w = init_weights(dims, 0).zeros_like()
    state = AdadeltaState.zeros(w)
    for step, g_val in enumerate(gs):
        g = w.zeros_like()
        g.b_y[:] = g_val
        w = adadelta_step(w, g, state, 0.95, 1e-6)
        assert _close(w.b_y[0], ref[step], rel=1e-12, abs_tol=1e-15)

    # zero gradient is a fixpoint
    frozen = w.b_y[0]
    w = adadelta_step(w, w.zeros_like(), state, 0.95, 1e-6)
    assert w.b_y[0] == frozen


# ---------------------------------------------------------------------------
# 6. Attribution fixtures
# ---------------------------------------------------------------------------


@criterion(6, "reservoir attribution fixtures")
def test_criterion_6_attribution():
    from damflow.data import DamRecord

    boundary = compute_dor(100.0, 5000.0)
    assert boundary.dor == 0.02 and boundary.category == "large"

    sc = aggregate_purposes([DamRecord(100.0, "SC")])
    assert sc.major_purposes == ("S",)

    multi = aggregate_purposes([DamRecord(100.0, "S"), DamRecord(100.0, "C")])
    assert multi.major_purposes == ("C", "S") and not multi.excluded

    debris = aggregate_purposes([DamRecord(100.0, "D")])
    assert debris.excluded and debris.excluded_reason == REASON_DEBRIS_NAV
    nav = aggregate_purposes([DamRecord(50.0, "N"), DamRecord(50.0, "D")])
    assert nav.excluded and nav.excluded_reason == REASON_DEBRIS_NAV

    assert detect_diversion(("water diverted for irrigation",)).matched_text == "divert"
    assert not detect_diversion(("", "no regulation")).present
    assert detect_diversion(("Major DIVERSION upstream",)).present


# ---------------------------------------------------------------------------
# 7-9. Synthetic end-to-end suite
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def synthetic_runs(tmp_path_factory):
    """Generate the 24-basin suite and train the three compositions.

    Every run is evaluated on all three regime categories so the
    cross-regime transfer comparisons have the off-composition test sets.
    """
    out = tmp_path_factory.mktemp("acceptance-runs")
    dataset, _ = generate_suite(8, SUITE_DAYS, master_seed=SUITE_SEED)
    categories = {
        cat: tuple(sorted(ids)) for cat, ids in stratify(dataset).partition.items()
    }
    train_sets = {
        "CONUS": categories["zero"] + categories["small"] + categories["large"],
        "Z": categories["zero"],
        "ZL": categories["zero"] + categories["large"],
    }
    workers = min(2, os.cpu_count() or 1)
    results = {}
    for comp, train_ids in train_sets.items():
        plan = ExperimentPlan(
            name=f"accept-{comp.lower()}",
            train_ids=tuple(sorted(train_ids)),
            test_sets=categories,
            train_window=TRAIN_WINDOW,
            test_window=TEST_WINDOW,
            config=ACCEPT_CONFIG,
        )
        started = time.monotonic()
        results[comp] = run_experiment(plan, dataset, out_dir=out, workers=workers)
        results[comp].wall_minutes = (time.monotonic() - started) / 60.0
    return dataset, results, out


def _median_nse(result, set_name):
    return float(np.median([rec.nse for rec in result.metrics[set_name]]))


@criterion(7, "synthetic end-to-end learnability")
def test_criterion_7_learnability(synthetic_runs):
    _, results, _ = synthetic_runs
    conus = results["CONUS"]
    median_zero = _median_nse(conus, "zero")
    assert median_zero >= 0.70, f"median NSE on zero-dor basins {median_zero:.3f}"

    # training made clear progress: final epoch loss under half the first
    for seed in ACCEPT_CONFIG.seeds:
        rows = [r for r in conus.log if r.seed == seed]
        assert rows[-1].mean_loss < 0.5 * rows[0].mean_loss

    print(f"[acceptance] CONUS median NSE zero-dor = {median_zero:.3f}, "
          f"wall {conus.wall_minutes:.1f} min")


@criterion(8, "regime-transfer effect")
def test_criterion_8_regime_transfer(synthetic_runs):
    _, results, _ = synthetic_runs
    z_run = results["Z"]
    zl_run = results["ZL"]
    in_regime = _median_nse(z_run, "zero")
    transferred = _median_nse(z_run, "large")
    gap = in_regime - transferred
    assert gap >= 0.15, f"transfer gap {gap:.3f} below 0.15"

    pooled = _median_nse(zl_run, "large")
    recovered = pooled - transferred
    assert recovered >= gap / 2, (
        f"pooled training recovered {recovered:.3f}, needs at least {gap / 2:.3f}"
    )
    print(f"[acceptance] Z on zero {in_regime:.3f}, Z on large {transferred:.3f}, "
          f"ZL on large {pooled:.3f}")


@criterion(9, "deterministic reruns")
def test_criterion_9_determinism(tmp_path):
    dataset, _ = generate_suite(8, SUITE_DAYS, master_seed=SUITE_SEED)
    strat = stratify(dataset)
    tiny = TrainingConfig(
        batch_size=4, sequence_length=90, hidden_size=4, dropout_p=0.5,
        epochs=2, seeds=(123, 1234), iterations_per_epoch=3, warmup_days=120,
    )
    plan = build_plan("accept-determinism", strat, "Z", config=tiny,
                      train_window=TRAIN_WINDOW, test_window=TEST_WINDOW)
    run_experiment(plan, dataset, out_dir=tmp_path / "a")
    run_experiment(plan, dataset, out_dir=tmp_path / "b")

    run_a = tmp_path / "a" / plan.name
    run_b = tmp_path / "b" / plan.name
    manifest_a = json.loads((run_a / "manifest.json").read_text())
    manifest_b = json.loads((run_b / "manifest.json").read_text())
    assert manifest_a == manifest_b
    for set_name in plan.test_sets:
        assert (run_a / f"metrics_{set_name}.csv").read_bytes() == \
            (run_b / f"metrics_{set_name}.csv").read_bytes()
    for seed in tiny.seeds:
        ckpt = Path("checkpoints") / str(seed) / "epoch2.json"
        assert (run_a / ckpt).read_bytes() == (run_b / ckpt).read_bytes()


# ---------------------------------------------------------------------------
# 10. Optional integration against real GAGES-II-derived data
# ---------------------------------------------------------------------------


@criterion(10, "GAGES-II integration counts")
def test_criterion_10_real_data_counts():
    if not os.environ.get("DAMFLOW_GAGES2_ROOT"):
        pytest.skip("real GAGES-II-derived data not mounted (set DAMFLOW_GAGES2_ROOT)")
    dataset, report = ingest_dataset(os.environ["DAMFLOW_GAGES2_ROOT"])
    assert report.ok
    result = stratify(dataset)
    part = result.partition
    assert (len(part["zero"]), len(part["small"]), len(part["large"])) == (610, 1075, 1872)
    recreation = sum(
        1 for row in result.rows
        if row.excluded_reason is None and row.major_purposes == ("R",)
    )
    assert recreation == 1207
