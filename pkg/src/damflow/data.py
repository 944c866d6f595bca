"""Basin data model, CSV ingestion, and the normalization pipeline.

The on-disk layout of a data root is:

    basins.csv            one row per gauge (identity, area, runoff, ecoregion,
                          30 static attributes, remark text)
    dams/<gauge_id>.csv   optional; one row per dam (storage, purpose code)
    forcing/<gauge_id>.csv  daily meteorology, 7 channels, gapless
    flow/<gauge_id>.csv   daily mean discharge in m3/s, empty cell = missing

All files are UTF-8 CSV with '.' decimal separator.  Discharge is expected in
m3/s (upstream preparation converts USGS cfs by 0.0283168).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np

# Daily forcing channels, fixed column order.
FORCING_CHANNELS = ("dayl", "prcp", "srad", "swe", "tmax", "tmin", "vp")

# Canonical order of the 30 static basin attributes.  This order is frozen:
# it defines the attribute slots in BasinRecord.attributes and the layout of
# model input tensors.
ATTRIBUTE_NAMES = (
    "DRAIN_SQKM",
    "ELEV_MEAN_M_BASIN",
    "SLOPE_PCT",
    "STREAMS_KM_SQ_KM",
    "DEVNLCD06",
    "FORESTNLCD06",
    "PLANTNLCD06",
    "WATERNLCD06",
    "SNOWICENLCD06",
    "BARRENNLCD06",
    "SHRUBNLCD06",
    "GRASSNLCD06",
    "WOODYWETNLCD06",
    "EMERGWETNLCD06",
    "AWCAVE",
    "PERMAVE",
    "BDAVE",
    "ROCKDEPAVE",
    "GEOL_REEDBUSH_DOM",
    "GEOL_REEDBUSH_DOM_PCT",
    "NDAMS_2009",
    "STOR_NOR_2009",
    "RAW_DIS_NEAREST_MAJ_DAM",
    "CANALS_PCT",
    "RAW_DIS_NEAREST_CANAL",
    "FRESHW_WITHDRAWAL",
    "POWER_SUM_MW",
    "PDEN_2000_BLOCK",
    "ROADS_KM_SQ_KM",
    "IMPNLCD06",
)

N_ATTRIBUTES = len(ATTRIBUTE_NAMES)
N_FORCING = len(FORCING_CHANNELS)
N_INPUTS = N_FORCING + N_ATTRIBUTES

# Dam purpose letters accepted in purpose codes.
PURPOSE_ALPHABET = frozenset("CFHIOPRSTXDN")

# Index of the attribute slots consulted elsewhere in the pipeline.
NDAMS_ATTR_INDEX = ATTRIBUTE_NAMES.index("NDAMS_2009")
STOR_NOR_ATTR_INDEX = ATTRIBUTE_NAMES.index("STOR_NOR_2009")

PRCP_CHANNEL = FORCING_CHANNELS.index("prcp")

MEGALITERS_TO_M3 = 1000.0
# depth(Q) = Q * 86400 s/day * 1000 mm/m / (area_km2 * 1e6 m2/km2)
#          = Q * 86.4 / area_km2   [mm/day]
_M3S_TO_MM_DAY = 86.4


class DataError(Exception):
    """Raised for invalid data files or unusable basin records."""


@dataclass(frozen=True)
class DamRecord:
    """One dam: normal storage in m3 and its purpose-code letters."""

    normal_storage: float
    purpose_code: str

    def __post_init__(self):
        if self.normal_storage < 0:
            raise ValueError(f"normal_storage must be >= 0, got {self.normal_storage}")
        if not self.purpose_code:
            raise ValueError("purpose_code must be non-empty")
        bad = set(self.purpose_code) - PURPOSE_ALPHABET
        if bad:
            raise ValueError(f"purpose_code contains unknown letters {sorted(bad)}")


@dataclass(frozen=True)
class BasinRecord:
    """Static description of one gauged basin."""

    gauge_id: str
    area_km2: float
    mean_annual_runoff: float  # m3 per km2 per year
    ecoregion: str
    attributes: np.ndarray  # shape (30,), canonical ATTRIBUTE_NAMES order
    dams: tuple[DamRecord, ...] = ()
    remarks: tuple[str, str] = ("", "")

    def __post_init__(self):
        if self.area_km2 <= 0:
            raise ValueError(f"area_km2 must be > 0, got {self.area_km2}")
        if self.mean_annual_runoff < 0:
            raise ValueError("mean_annual_runoff must be >= 0")
        attrs = np.asarray(self.attributes, dtype=np.float64)
        if attrs.shape != (N_ATTRIBUTES,):
            raise ValueError(f"attributes must have exactly {N_ATTRIBUTES} entries")
        object.__setattr__(self, "attributes", attrs)

    @property
    def storage_m3(self) -> float:
        return float(sum(d.normal_storage for d in self.dams))


@dataclass(frozen=True)
class ForcingSeries:
    """Daily forcing matrix, row t = start_date + t days, columns FORCING_CHANNELS."""

    start_date: date
    values: np.ndarray  # (T, 7)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[1] != N_FORCING:
            raise ValueError(f"forcing values must be (T, {N_FORCING})")
        if not np.all(np.isfinite(vals)):
            raise ValueError("forcing values must be finite")
        if np.any(vals[:, FORCING_CHANNELS.index("prcp")] < 0):
            raise ValueError("prcp must be >= 0")
        if np.any(vals[:, FORCING_CHANNELS.index("swe")] < 0):
            raise ValueError("swe must be >= 0")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def end_date(self) -> date:
        return self.start_date + timedelta(days=len(self) - 1)


@dataclass(frozen=True)
class FlowSeries:
    """Daily mean discharge in m3/s; NaN marks a missing observation."""

    start_date: date
    values: np.ndarray  # (T,)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1:
            raise ValueError("flow values must be one-dimensional")
        finite = vals[np.isfinite(vals)]
        if np.any(finite < 0):
            raise ValueError("non-missing discharge must be >= 0")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def end_date(self) -> date:
        return self.start_date + timedelta(days=len(self) - 1)


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of basins with their forcing and flow series."""

    basins: dict[str, BasinRecord]
    forcings: dict[str, ForcingSeries]
    flows: dict[str, FlowSeries]

    @property
    def gauge_ids(self) -> list[str]:
        return sorted(self.basins)

    def __len__(self) -> int:
        return len(self.basins)


@dataclass
class IngestionIssue:
    gauge_id: str
    file: str
    line: int | None
    message: str

    def __str__(self) -> str:
        loc = f"{self.file}:{self.line}" if self.line is not None else self.file
        return f"{self.gauge_id}: {loc}: {self.message}"


@dataclass
class IngestionReport:
    """Outcome of ingest_dataset: accepted basins plus per-basin rejections."""

    n_loaded: int = 0
    issues: list[IngestionIssue] = field(default_factory=list)

    @property
    def rejected_ids(self) -> list[str]:
        return sorted({i.gauge_id for i in self.issues})

    @property
    def ok(self) -> bool:
        return not self.issues


def _parse_float(text: str, *, file: str, line: int, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataError(f"{file}:{line}: column {column!r}: not a number: {text!r}") from None


def _parse_date(text: str, *, file: str, line: int) -> date:
    try:
        return date.fromisoformat(text.strip())
    except ValueError:
        raise DataError(f"{file}:{line}: bad date {text!r} (expected ISO-8601)") from None


def _read_daily_csv(
    path: Path,
    value_columns: tuple[str, ...],
    allow_missing: bool,
    nonneg_columns: frozenset[str] = frozenset(),
):
    """Read a gapless daily CSV; returns (start_date, (T, k) array).

    Raises DataError naming file and line on any malformed, out-of-order, or
    sign-violating row.
    """
    fname = path.name
    rows: list[list[float]] = []
    start: date | None = None
    expected: date | None = None
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{fname}: empty file")
        missing_cols = {"date", *value_columns} - set(reader.fieldnames)
        if missing_cols:
            raise DataError(f"{fname}: missing columns {sorted(missing_cols)}")
        for lineno, row in enumerate(reader, start=2):
            d = _parse_date(row["date"], file=fname, line=lineno)
            if start is None:
                start = d
                expected = d
            if d != expected:
                raise DataError(
                    f"{fname}:{lineno}: date {d.isoformat()} breaks daily continuity "
                    f"(expected {expected.isoformat()})"
                )
            expected = expected + timedelta(days=1)
            vals = []
            for col in value_columns:
                cell = row[col].strip() if row[col] is not None else ""
                if cell == "":
                    if allow_missing:
                        vals.append(math.nan)
                        continue
                    raise DataError(f"{fname}:{lineno}: column {col!r} is empty")
                value = _parse_float(cell, file=fname, line=lineno, column=col)
                if col in nonneg_columns and value < 0:
                    raise DataError(
                        f"{fname}:{lineno}: column {col!r}: negative value {value}"
                    )
                vals.append(value)
            rows.append(vals)
    if start is None:
        raise DataError(f"{fname}: no data rows")
    return start, np.array(rows, dtype=np.float64)


def _read_basins_csv(path: Path) -> dict[str, dict]:
    fname = path.name
    required = (
        ["gauge_id", "area_km2", "mean_annual_runoff_m3_per_km2", "ecoregion"]
        + list(ATTRIBUTE_NAMES)
        + ["wr_report_remarks", "screening_comments"]
    )
    out: dict[str, dict] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{fname}: empty file")
        missing = set(required) - set(reader.fieldnames)
        if missing:
            raise DataError(f"{fname}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            gid = row["gauge_id"].strip()
            if not gid:
                raise DataError(f"{fname}:{lineno}: empty gauge_id")
            if gid in out:
                raise DataError(f"{fname}:{lineno}: duplicate gauge_id {gid!r}")
            attrs = [
                _parse_float(row[name], file=fname, line=lineno, column=name)
                for name in ATTRIBUTE_NAMES
            ]
            out[gid] = {
                "line": lineno,
                "area_km2": _parse_float(row["area_km2"], file=fname, line=lineno, column="area_km2"),
                "mean_annual_runoff": _parse_float(
                    row["mean_annual_runoff_m3_per_km2"],
                    file=fname,
                    line=lineno,
                    column="mean_annual_runoff_m3_per_km2",
                ),
                "ecoregion": row["ecoregion"].strip(),
                "attributes": np.array(attrs, dtype=np.float64),
                "remarks": (row["wr_report_remarks"], row["screening_comments"]),
            }
    return out


def _read_dams_csv(path: Path) -> tuple[DamRecord, ...]:
    fname = path.name
    dams: list[DamRecord] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return ()
        missing = {"normal_storage_megaliters", "purpose_code"} - set(reader.fieldnames)
        if missing:
            raise DataError(f"{fname}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            storage_ml = _parse_float(
                row["normal_storage_megaliters"], file=fname, line=lineno,
                column="normal_storage_megaliters",
            )
            try:
                dams.append(
                    DamRecord(
                        normal_storage=storage_ml * MEGALITERS_TO_M3,
                        purpose_code=row["purpose_code"].strip(),
                    )
                )
            except ValueError as exc:
                raise DataError(f"{fname}:{lineno}: {exc}") from None
    return tuple(dams)


def ingest_dataset(root_path: str | Path) -> tuple[Dataset, IngestionReport]:
    """Load a data root directory into a Dataset.

    Basins failing validation are omitted from the Dataset but reported in the
    IngestionReport; a missing forcing or flow file is a fatal per-basin error.
    A missing dams file simply means the basin has no dams.
    """
    root = Path(root_path)
    report = IngestionReport()
    basins_path = root / "basins.csv"
    if not basins_path.is_file():
        raise DataError(f"{basins_path}: file not found")
    basin_rows = _read_basins_csv(basins_path)

    basins: dict[str, BasinRecord] = {}
    forcings: dict[str, ForcingSeries] = {}
    flows: dict[str, FlowSeries] = {}

    for gid in sorted(basin_rows):
        row = basin_rows[gid]
        issues_before = len(report.issues)

        dams: tuple[DamRecord, ...] = ()
        dams_path = root / "dams" / f"{gid}.csv"
        if dams_path.is_file():
            try:
                dams = _read_dams_csv(dams_path)
            except DataError as exc:
                report.issues.append(IngestionIssue(gid, f"dams/{gid}.csv", None, str(exc)))

        forcing = None
        forcing_path = root / "forcing" / f"{gid}.csv"
        if not forcing_path.is_file():
            report.issues.append(IngestionIssue(gid, f"forcing/{gid}.csv", None, "file not found"))
        else:
            try:
                start, vals = _read_daily_csv(
                    forcing_path, FORCING_CHANNELS, allow_missing=False,
                    nonneg_columns=frozenset({"prcp", "swe"}),
                )
                forcing = ForcingSeries(start_date=start, values=vals)
            except (DataError, ValueError) as exc:
                report.issues.append(IngestionIssue(gid, f"forcing/{gid}.csv", None, str(exc)))

        flow = None
        flow_path = root / "flow" / f"{gid}.csv"
        if not flow_path.is_file():
            report.issues.append(IngestionIssue(gid, f"flow/{gid}.csv", None, "file not found"))
        else:
            try:
                start, vals = _read_daily_csv(
                    flow_path, ("discharge_m3s",), allow_missing=True,
                    nonneg_columns=frozenset({"discharge_m3s"}),
                )
                flow = FlowSeries(start_date=start, values=vals[:, 0])
            except (DataError, ValueError) as exc:
                report.issues.append(IngestionIssue(gid, f"flow/{gid}.csv", None, str(exc)))

        if forcing is not None and flow is not None:
            if (forcing.start_date, forcing.end_date) != (flow.start_date, flow.end_date):
                report.issues.append(
                    IngestionIssue(
                        gid, f"flow/{gid}.csv", None,
                        "flow coverage "
                        f"{flow.start_date.isoformat()}..{flow.end_date.isoformat()} does not "
                        f"match forcing {forcing.start_date.isoformat()}..{forcing.end_date.isoformat()}",
                    )
                )

        try:
            record = BasinRecord(
                gauge_id=gid,
                area_km2=row["area_km2"],
                mean_annual_runoff=row["mean_annual_runoff"],
                ecoregion=row["ecoregion"],
                attributes=row["attributes"],
                dams=dams,
                remarks=row["remarks"],
            )
        except ValueError as exc:
            report.issues.append(IngestionIssue(gid, "basins.csv", row["line"], str(exc)))
            continue

        if len(report.issues) > issues_before:
            continue
        basins[gid] = record
        forcings[gid] = forcing
        flows[gid] = flow

    report.n_loaded = len(basins)
    return Dataset(basins=basins, forcings=forcings, flows=flows), report


# ---------------------------------------------------------------------------
# Target construction and the Gaussianizing transform
# ---------------------------------------------------------------------------


def depth_mm_per_day(discharge_m3s, area_km2: float):
    """Convert discharge (m3/s) to areal depth (mm/day)."""
    return np.asarray(discharge_m3s, dtype=np.float64) * (_M3S_TO_MM_DAY / area_km2)


def discharge_from_depth(depth, area_km2: float):
    """Inverse of depth_mm_per_day."""
    return np.asarray(depth, dtype=np.float64) * (area_km2 / _M3S_TO_MM_DAY)


def to_runoff_ratio(flow: FlowSeries, area_km2: float, mean_annual_precip: float) -> np.ndarray:
    """Dimensionless runoff ratio: daily flow depth over mean daily precipitation.

    Missing flow entries stay NaN.  mean_annual_precip is in mm/day; a basin
    with non-positive precipitation cannot serve as a target.
    """
    if area_km2 <= 0:
        raise DataError(f"area must be > 0, got {area_km2}")
    if mean_annual_precip <= 0:
        raise DataError(
            f"mean annual precipitation must be > 0 to form a runoff ratio, got {mean_annual_precip}"
        )
    return depth_mm_per_day(flow.values, area_km2) / mean_annual_precip


def gaussianize(v):
    """log10(sqrt(v) + 0.1); maps [0, inf) to [-1, inf), shrinking the right tail."""
    arr = np.asarray(v, dtype=np.float64)
    if np.any(arr[np.isfinite(arr)] < 0):
        raise DataError("gaussianize is defined for v >= 0 only")
    return np.log10(np.sqrt(arr) + 0.1)


def degaussianize(v_star):
    """Exact left-inverse of gaussianize on v >= 0; values below range clamp to 0."""
    arr = np.asarray(v_star, dtype=np.float64)
    return np.square(np.maximum(np.power(10.0, arr) - 0.1, 0.0))


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

STD_FLOOR = 1e-12


@dataclass(frozen=True)
class NormalizationSpec:
    """Training-period transform statistics, applied identically at test time.

    input_mean/input_std cover the 37 model input channels (7 forcing then 30
    attributes, canonical order).  The precipitation channel and the target are
    Gaussianized before z-scoring.  precip_mm_per_day caches each training
    basin's mean daily precipitation over the training window; unseen basins
    get the same quantity computed from their own forcing over that window.
    """

    input_mean: np.ndarray  # (37,)
    input_std: np.ndarray  # (37,)
    target_mean: float
    target_std: float
    train_window: tuple[date, date]
    precip_mm_per_day: dict[str, float]
    gaussianized_inputs: tuple[int, ...] = (PRCP_CHANNEL,)
    gaussianized_target: bool = True

    def basin_precip(self, dataset: Dataset, gauge_id: str) -> float:
        """Mean daily precipitation over the training window (mm/day)."""
        if gauge_id in self.precip_mm_per_day:
            return self.precip_mm_per_day[gauge_id]
        forcing = dataset.forcings[gauge_id]
        block = _window_slice(forcing.values, forcing.start_date, self.train_window)
        return float(np.mean(block[:, PRCP_CHANNEL]))

    def invert_target(self, y_norm: np.ndarray, basin: BasinRecord, precip: float) -> np.ndarray:
        """Map normalized model outputs back to discharge in m3/s."""
        v_star = np.asarray(y_norm, dtype=np.float64) * self.target_std + self.target_mean
        ratio = degaussianize(v_star) if self.gaussianized_target else v_star
        return discharge_from_depth(ratio * precip, basin.area_km2)


def _window_slice(values: np.ndarray, series_start: date, window: tuple[date, date]) -> np.ndarray:
    start, end = window
    if end < start:
        raise DataError(f"window {start.isoformat()}..{end.isoformat()} is empty")
    i0 = (start - series_start).days
    i1 = (end - series_start).days + 1
    if i0 < 0 or i1 > len(values):
        raise DataError(
            f"window {start.isoformat()}..{end.isoformat()} outside series coverage"
        )
    return values[i0:i1]


def _floored_std(values: np.ndarray, label: str) -> float:
    std = float(np.std(values))
    if std < STD_FLOOR:
        warnings.warn(
            f"channel {label!r} has zero variance over the training set; std floored to 1.0",
            stacklevel=3,
        )
        return 1.0
    return std


def fit_normalization(
    dataset: Dataset,
    training_window: tuple[date, date],
    gauge_ids: list[str] | None = None,
) -> NormalizationSpec:
    """Pool per-channel statistics over the training basins and window.

    The precipitation channel and the runoff-ratio target pass through
    gaussianize before their mean/std are taken.  Basins are always scanned in
    sorted gauge order so results do not depend on presentation order.
    """
    ids = sorted(gauge_ids) if gauge_ids is not None else dataset.gauge_ids
    if not ids:
        raise DataError("cannot fit normalization on an empty basin set")

    forcing_blocks: list[np.ndarray] = []
    attr_rows: list[np.ndarray] = []
    target_blocks: list[np.ndarray] = []
    precip: dict[str, float] = {}

    for gid in ids:
        basin = dataset.basins[gid]
        forcing = dataset.forcings[gid]
        flow = dataset.flows[gid]
        fblock = _window_slice(forcing.values, forcing.start_date, training_window)
        if fblock.shape[0] == 0:
            raise DataError(f"basin {gid}: empty training window")
        p = float(np.mean(fblock[:, PRCP_CHANNEL]))
        precip[gid] = p

        fblock = fblock.copy()
        fblock[:, PRCP_CHANNEL] = gaussianize(fblock[:, PRCP_CHANNEL])
        forcing_blocks.append(fblock)
        attr_rows.append(basin.attributes)

        flow_block = _window_slice(flow.values, flow.start_date, training_window)
        ratio = to_runoff_ratio(
            FlowSeries(start_date=training_window[0], values=flow_block), basin.area_km2, p
        )
        target_blocks.append(gaussianize(ratio[np.isfinite(ratio)]))

    forcing_all = np.concatenate(forcing_blocks, axis=0)
    attrs_all = np.stack(attr_rows, axis=0)
    target_all = np.concatenate(target_blocks)
    if target_all.size == 0:
        raise DataError("no non-missing target values in the training window")

    mean = np.empty(N_INPUTS)
    std = np.empty(N_INPUTS)
    for c in range(N_FORCING):
        mean[c] = float(np.mean(forcing_all[:, c]))
        std[c] = _floored_std(forcing_all[:, c], FORCING_CHANNELS[c])
    for a in range(N_ATTRIBUTES):
        mean[N_FORCING + a] = float(np.mean(attrs_all[:, a]))
        std[N_FORCING + a] = _floored_std(attrs_all[:, a], ATTRIBUTE_NAMES[a])

    return NormalizationSpec(
        input_mean=mean,
        input_std=std,
        target_mean=float(np.mean(target_all)),
        target_std=_floored_std(target_all, "target"),
        train_window=training_window,
        precip_mm_per_day=precip,
    )


def apply_normalization(
    spec: NormalizationSpec,
    dataset: Dataset,
    window: tuple[date, date],
    gauge_ids: list[str] | None = None,
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Build model-ready tensors for each basin over the window.

    Returns {gauge_id: (inputs (T, 37), target (T,))}; the target keeps NaN
    where discharge is missing.
    """
    ids = sorted(gauge_ids) if gauge_ids is not None else dataset.gauge_ids
    out: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for gid in ids:
        basin = dataset.basins[gid]
        forcing = dataset.forcings[gid]
        flow = dataset.flows[gid]

        fblock = _window_slice(forcing.values, forcing.start_date, window).copy()
        fblock[:, PRCP_CHANNEL] = gaussianize(fblock[:, PRCP_CHANNEL])
        t_len = fblock.shape[0]

        x = np.empty((t_len, N_INPUTS))
        x[:, :N_FORCING] = fblock
        x[:, N_FORCING:] = basin.attributes[None, :]
        x -= spec.input_mean
        x /= spec.input_std

        p = spec.basin_precip(dataset, gid)
        flow_block = _window_slice(flow.values, flow.start_date, window)
        ratio = to_runoff_ratio(
            FlowSeries(start_date=window[0], values=flow_block), basin.area_km2, p
        )
        y = np.full(t_len, np.nan)
        ok = np.isfinite(ratio)
        y[ok] = (gaussianize(ratio[ok]) - spec.target_mean) / spec.target_std
        out[gid] = (x, y)
    return out


def invert_normalized_target(
    spec: NormalizationSpec,
    dataset: Dataset,
    gauge_id: str,
    y_norm: np.ndarray,
) -> np.ndarray:
    """Convenience wrapper: normalized target values back to discharge (m3/s)."""
    basin = dataset.basins[gauge_id]
    precip = spec.basin_precip(dataset, gauge_id)
    return spec.invert_target(y_norm, basin, precip)


# ---------------------------------------------------------------------------
# Writing a dataset back to the on-disk format (used by synthgen and tests)
# ---------------------------------------------------------------------------


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def write_dataset(dataset: Dataset, root_path: str | Path) -> None:
    """Write a dataset in the exact layout ingest_dataset expects."""
    root = Path(root_path)
    header = (
        ["gauge_id", "area_km2", "mean_annual_runoff_m3_per_km2", "ecoregion"]
        + list(ATTRIBUTE_NAMES)
        + ["wr_report_remarks", "screening_comments"]
    )
    lines = [",".join(header)]
    for gid in dataset.gauge_ids:
        b = dataset.basins[gid]
        cells = [gid, repr(b.area_km2), repr(b.mean_annual_runoff), b.ecoregion]
        cells.extend(repr(float(v)) for v in b.attributes)
        cells.extend(_csv_escape(t) for t in b.remarks)
        lines.append(",".join(cells))
    _atomic_write(root / "basins.csv", "\n".join(lines) + "\n")

    for gid in dataset.gauge_ids:
        b = dataset.basins[gid]
        if b.dams:
            rows = ["normal_storage_megaliters,purpose_code"]
            rows.extend(
                f"{repr(d.normal_storage / MEGALITERS_TO_M3)},{d.purpose_code}" for d in b.dams
            )
            _atomic_write(root / "dams" / f"{gid}.csv", "\n".join(rows) + "\n")

        forcing = dataset.forcings[gid]
        rows = ["date," + ",".join(FORCING_CHANNELS)]
        for t in range(len(forcing)):
            day = forcing.start_date + timedelta(days=t)
            rows.append(day.isoformat() + "," + ",".join(repr(float(v)) for v in forcing.values[t]))
        _atomic_write(root / "forcing" / f"{gid}.csv", "\n".join(rows) + "\n")

        flow = dataset.flows[gid]
        rows = ["date,discharge_m3s"]
        for t in range(len(flow)):
            day = flow.start_date + timedelta(days=t)
            v = flow.values[t]
            rows.append(f"{day.isoformat()},{'' if math.isnan(v) else repr(float(v))}")
        _atomic_write(root / "flow" / f"{gid}.csv", "\n".join(rows) + "\n")


def _csv_escape(text: str) -> str:
    if any(ch in text for ch in ",\"\n"):
        return '"' + text.replace('"', '""') + '"'
    return text
