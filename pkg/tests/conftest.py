"""Shared fixtures: tiny in-memory datasets and on-disk data roots."""

from __future__ import annotations

from datetime import date

import numpy as np
import pytest

# Filled by tests/test_acceptance.py; printed one line per criterion at the
# end of the session.
ACCEPTANCE_RESULTS: list[tuple[int, str, str]] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, label, status in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"criterion {number:2d} [{label}]: {status}")

from damflow.data import (
    ATTRIBUTE_NAMES,
    BasinRecord,
    DamRecord,
    Dataset,
    FlowSeries,
    ForcingSeries,
    N_ATTRIBUTES,
    write_dataset,
)

START = date(1990, 1, 1)


def make_attributes(seed: int = 0, **named) -> np.ndarray:
    rng = np.random.default_rng(seed)
    attrs = rng.uniform(0.1, 2.0, size=N_ATTRIBUTES)
    for name, value in named.items():
        attrs[ATTRIBUTE_NAMES.index(name)] = value
    return attrs


def make_forcing(n_days: int, seed: int = 0, start: date = START) -> ForcingSeries:
    rng = np.random.default_rng(seed)
    doy = np.arange(n_days) % 365
    vals = np.column_stack([
        43200 + 10000 * np.sin(2 * np.pi * doy / 365),          # dayl
        np.maximum(0.0, rng.gamma(1.5, 3.0, n_days) - 1.0),     # prcp
        200 + 50 * rng.random(n_days),                           # srad
        np.maximum(0.0, rng.normal(5, 4, n_days)),               # swe
        15 + 10 * np.sin(2 * np.pi * doy / 365),                 # tmax
        5 + 10 * np.sin(2 * np.pi * doy / 365),                  # tmin
        800 + 100 * rng.random(n_days),                          # vp
    ])
    return ForcingSeries(start_date=start, values=vals)


def make_flow(n_days: int, seed: int = 0, start: date = START,
              missing_at: tuple[int, ...] = ()) -> FlowSeries:
    rng = np.random.default_rng(seed + 1000)
    vals = rng.gamma(2.0, 3.0, n_days)
    for idx in missing_at:
        vals[idx] = np.nan
    return FlowSeries(start_date=start, values=vals)


def make_basin(
    gid: str,
    area: float = 100.0,
    runoff: float = 250_000.0,
    ecoregion: str = "8.1",
    dams: tuple[DamRecord, ...] = (),
    remarks: tuple[str, str] = ("", ""),
    attr_seed: int = 0,
    **attr_overrides,
) -> BasinRecord:
    named = dict(attr_overrides)
    named.setdefault("NDAMS_2009", float(len(dams)))
    named.setdefault(
        "STOR_NOR_2009",
        sum(d.normal_storage for d in dams) / area / 1000.0,
    )
    return BasinRecord(
        gauge_id=gid,
        area_km2=area,
        mean_annual_runoff=runoff,
        ecoregion=ecoregion,
        attributes=make_attributes(attr_seed, **named),
        dams=dams,
        remarks=remarks,
    )


def make_dataset(n_basins: int = 3, n_days: int = 400) -> Dataset:
    basins, forcings, flows = {}, {}, {}
    for k in range(n_basins):
        gid = f"g{k:03d}"
        basins[gid] = make_basin(gid, area=80.0 + 40.0 * k, attr_seed=k)
        forcings[gid] = make_forcing(n_days, seed=k)
        flows[gid] = make_flow(n_days, seed=k)
    return Dataset(basins=basins, forcings=forcings, flows=flows)


@pytest.fixture
def tiny_dataset() -> Dataset:
    return make_dataset()


@pytest.fixture
def data_root(tmp_path, tiny_dataset):
    root = tmp_path / "data"
    write_dataset(tiny_dataset, root)
    return root
