"""Synthetic basin generator tests: conservation, regimes, determinism."""

import numpy as np
import pytest

from damflow.data import depth_mm_per_day
from damflow.reservoirs import compute_dor, stratify
from damflow.synthetic import (
    SyntheticBasinSpec,
    generate_basin,
    generate_suite,
)


def _basin_dor(basin):
    return compute_dor(basin.storage_m3 / basin.area_km2, basin.mean_annual_runoff)


def test_zero_capacity_classifies_zero():
    spec = SyntheticBasinSpec(rng_seed=1, capacity_m3_per_km2=0.0)
    _, _, basin, _ = generate_basin(spec, 900)
    assert _basin_dor(basin).category == "zero"
    assert basin.dams == ()


def test_half_year_capacity_classifies_large():
    base = SyntheticBasinSpec(rng_seed=2)
    _, flow0, basin0, _ = generate_basin(base, 1100)
    capacity = 0.5 * basin0.mean_annual_runoff  # capacity/q_bar ~ 0.5
    spec = SyntheticBasinSpec(rng_seed=2, capacity_m3_per_km2=capacity)
    _, _, basin, _ = generate_basin(spec, 1100)
    result = _basin_dor(basin)
    assert result.category == "large"
    assert result.dor == pytest.approx(0.5, rel=0.1)


def test_water_balance_closes():
    for seed, cap in ((3, 0.0), (4, 150_000.0)):
        spec = SyntheticBasinSpec(rng_seed=seed, capacity_m3_per_km2=cap)
        forcing, flow, basin, diag = generate_basin(spec, 1500)
        assert abs(diag.imbalance) <= 1e-6 * diag.total_precip
        # the emitted series reproduce the bookkeeping totals
        assert diag.total_precip == pytest.approx(float(np.sum(forcing.values[:, 1])))
        out_mm = depth_mm_per_day(flow.values, basin.area_km2)
        assert float(np.sum(out_mm)) == pytest.approx(diag.total_outflow, rel=1e-12)


def test_minimum_horizon_enforced():
    with pytest.raises(ValueError, match="two simulated years"):
        generate_basin(SyntheticBasinSpec(rng_seed=1), 365)


def test_fractional_release_rule_also_conserves():
    spec = SyntheticBasinSpec(
        rng_seed=5, capacity_m3_per_km2=120_000.0, release_rule="fractional"
    )
    _, flow, _, diag = generate_basin(spec, 1200)
    assert abs(diag.imbalance) <= 1e-6 * diag.total_precip
    assert np.all(flow.values >= 0.0)


def test_unknown_release_rule_rejected():
    with pytest.raises(ValueError, match="release rule"):
        SyntheticBasinSpec(rng_seed=1, release_rule="dump")


def test_suite_counts_and_stratification():
    ds, diags = generate_suite(8, 730, master_seed=7)
    assert len(ds) == 24
    part = stratify(ds).partition
    assert (len(part["zero"]), len(part["small"]), len(part["large"])) == (8, 8, 8)
    assert len(diags) == 24


def test_suite_deterministic():
    a, _ = generate_suite(2, 800, master_seed=11)
    b, _ = generate_suite(2, 800, master_seed=11)
    assert a.gauge_ids == b.gauge_ids
    for gid in a.gauge_ids:
        np.testing.assert_array_equal(a.forcings[gid].values, b.forcings[gid].values)
        np.testing.assert_array_equal(a.flows[gid].values, b.flows[gid].values)
        np.testing.assert_array_equal(a.basins[gid].attributes, b.basins[gid].attributes)


def test_suite_regime_labels_recovered_everywhere():
    ds, _ = generate_suite(4, 800, master_seed=13)
    for gid in ds.gauge_ids:
        regime = gid.split("-")[1]
        assert _basin_dor(ds.basins[gid]).category == regime


def test_reservoir_attenuates_peaks():
    # same precipitation seed, with and without a large reservoir: the
    # regulated hydrograph has a smaller peak-to-mean ratio
    ratios_zero, ratios_large = [], []
    for seed in range(6):
        base = SyntheticBasinSpec(rng_seed=100 + seed)
        _, flow0, basin0, _ = generate_basin(base, 1100)
        spec = SyntheticBasinSpec(
            rng_seed=100 + seed, capacity_m3_per_km2=0.2 * basin0.mean_annual_runoff
        )
        _, flow1, _, _ = generate_basin(spec, 1100)
        ratios_zero.append(flow0.values.max() / flow0.values.mean())
        ratios_large.append(flow1.values.max() / flow1.values.mean())
    assert np.median(ratios_large) < np.median(ratios_zero)


def test_attributes_carry_regime_information():
    ds, _ = generate_suite(2, 800, master_seed=17)
    from damflow.data import ATTRIBUTE_NAMES

    stor_idx = ATTRIBUTE_NAMES.index("STOR_NOR_2009")
    for gid in ds.gauge_ids:
        basin = ds.basins[gid]
        attr_m3_per_km2 = basin.attributes[stor_idx] * 1000.0
        nor = basin.storage_m3 / basin.area_km2
        assert attr_m3_per_km2 == pytest.approx(nor, rel=1e-9, abs=1e-9)
