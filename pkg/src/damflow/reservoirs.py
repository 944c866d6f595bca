"""Degree-of-regulation classification, dam-purpose aggregation, diversion flags.

dor = nor / q_bar, where nor is the summed normal dam capacity per unit area
(m3/km2) and q_bar the mean annual runoff (m3/km2/year).  Basins split into
zero (dor = 0), small (0 < dor < 0.02) and large (dor >= 0.02); the boundary
value 0.02 itself is large.  Purpose statistics exclude basins with no dams,
with a dam-count mismatch between the attribute table and the dam list, or
whose major purpose is only Debris Control (D) and/or Navigation (N).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

from .data import (
    BasinRecord,
    DamRecord,
    Dataset,
    MEGALITERS_TO_M3,
    NDAMS_ATTR_INDEX,
    STOR_NOR_ATTR_INDEX,
)

DOR_CUTOFF = 0.02

CATEGORY_ZERO = "zero"
CATEGORY_SMALL = "small"
CATEGORY_LARGE = "large"
CATEGORIES = (CATEGORY_ZERO, CATEGORY_SMALL, CATEGORY_LARGE)

EXCLUDED_PURPOSES = frozenset("DN")

REASON_NO_DAMS = "no dams"
REASON_MISMATCH = "dataset mismatch"
REASON_DEBRIS_NAV = "Debris-Control-or-Navigation major purpose"


class AttributionError(Exception):
    """Raised when a reservoir attribute cannot be computed."""


@dataclass(frozen=True)
class DorResult:
    nor: float  # m3 per km2
    dor: float
    category: str


@dataclass(frozen=True)
class PurposeAssignment:
    major_purposes: tuple[str, ...]  # sorted; usually one letter
    per_purpose_capacity: dict[str, float]
    excluded: bool = False
    excluded_reason: str | None = None


@dataclass(frozen=True)
class DiversionFlag:
    present: bool
    matched_text: str | None = None


def compute_dor(nor: float, q_bar: float) -> DorResult:
    """Classify by capacity-to-runoff ratio; boundary 0.02 goes to large."""
    if nor < 0:
        raise AttributionError(f"nor must be >= 0, got {nor}")
    if nor == 0.0:
        if q_bar < 0:
            raise AttributionError(f"q_bar must be >= 0, got {q_bar}")
        return DorResult(nor=0.0, dor=0.0, category=CATEGORY_ZERO)
    if q_bar <= 0:
        raise AttributionError(f"dor undefined: nor={nor} with q_bar={q_bar}")
    dor = nor / q_bar
    if dor < DOR_CUTOFF:
        category = CATEGORY_SMALL
    else:
        category = CATEGORY_LARGE
    return DorResult(nor=nor, dor=dor, category=category)


def aggregate_purposes(dams: tuple[DamRecord, ...] | list[DamRecord]) -> PurposeAssignment:
    """Sum storage per purpose letter; the purpose with the largest sum wins.

    Ties break by capacity-weighted letter position (earlier letters in a
    dam's code count for more); a tie that survives that too yields multiple
    major purposes.  A basin whose major purposes are all Debris Control or
    Navigation is excluded from purpose statistics.
    """
    if not dams:
        return PurposeAssignment(
            major_purposes=(), per_purpose_capacity={},
            excluded=True, excluded_reason=REASON_NO_DAMS,
        )
    capacity: dict[str, float] = {}
    importance: dict[str, float] = {}
    for dam in dams:
        seen: set[str] = set()
        for idx, letter in enumerate(dam.purpose_code):
            if letter in seen:
                continue
            seen.add(letter)
            capacity[letter] = capacity.get(letter, 0.0) + dam.normal_storage
            importance[letter] = importance.get(letter, 0.0) + dam.normal_storage / (1 + idx)

    max_cap = max(capacity.values())
    candidates = sorted(p for p, c in capacity.items() if c == max_cap)
    if len(candidates) > 1:
        best = max(importance[p] for p in candidates)
        candidates = sorted(p for p in candidates if importance[p] == best)

    majors = tuple(candidates)
    if set(majors) <= EXCLUDED_PURPOSES:
        return PurposeAssignment(
            major_purposes=majors, per_purpose_capacity=capacity,
            excluded=True, excluded_reason=REASON_DEBRIS_NAV,
        )
    return PurposeAssignment(major_purposes=majors, per_purpose_capacity=capacity)


def purpose_assignment_for_basin(basin: BasinRecord) -> PurposeAssignment:
    """aggregate_purposes plus the attribute-vs-dam-list consistency check.

    A basin whose NDAMS attribute disagrees with the presence of dam records
    (dams listed in only one of the two sources) is excluded as a dataset
    mismatch, mirroring how unmatched dam joins are dropped from statistics.
    """
    ndams_attr = basin.attributes[NDAMS_ATTR_INDEX]
    has_dams = len(basin.dams) > 0
    if has_dams != (ndams_attr > 0):
        return PurposeAssignment(
            major_purposes=(), per_purpose_capacity={},
            excluded=True, excluded_reason=REASON_MISMATCH,
        )
    return aggregate_purposes(basin.dams)


def detect_diversion(remarks) -> DiversionFlag:
    """Case-insensitive plain-substring search for "diversion" or "divert"."""
    for text in remarks:
        if not text:
            continue
        lowered = text.lower()
        for needle in ("diversion", "divert"):
            pos = lowered.find(needle)
            if pos >= 0:
                return DiversionFlag(present=True, matched_text=text[pos:pos + len(needle)])
    return DiversionFlag(present=False)


def basin_nor(basin: BasinRecord) -> float:
    """Summed normal capacity per unit area (m3/km2), from the dam list.

    The dam-list value is authoritative; if the precomputed STOR_NOR attribute
    (megaliters/km2) disagrees by more than 1%, a warning is emitted.
    """
    nor = basin.storage_m3 / basin.area_km2
    stor_attr = basin.attributes[STOR_NOR_ATTR_INDEX] * MEGALITERS_TO_M3
    if stor_attr > 0 and abs(stor_attr - nor) > 0.01 * stor_attr:
        warnings.warn(
            f"basin {basin.gauge_id}: dam-list nor {nor:.1f} m3/km2 differs from "
            f"STOR_NOR attribute {stor_attr:.1f} by more than 1%",
            stacklevel=2,
        )
    return nor


@dataclass(frozen=True)
class BasinStratification:
    gauge_id: str
    dor: float | None  # None when undefined (positive storage, zero runoff)
    category: str | None
    major_purposes: tuple[str, ...]
    diversion: bool
    excluded_reason: str | None


@dataclass
class StratificationResult:
    rows: list[BasinStratification]

    @property
    def partition(self) -> dict[str, list[str]]:
        part: dict[str, list[str]] = {c: [] for c in CATEGORIES}
        for row in self.rows:
            if row.category is not None:
                part[row.category].append(row.gauge_id)
        return part

    @property
    def purpose_excluded(self) -> list[tuple[str, str]]:
        return [
            (r.gauge_id, r.excluded_reason) for r in self.rows if r.excluded_reason
        ]

    def category_of(self, gauge_id: str) -> str | None:
        for row in self.rows:
            if row.gauge_id == gauge_id:
                return row.category
        raise KeyError(gauge_id)


def stratify(dataset: Dataset) -> StratificationResult:
    """Classify every basin by dor regime and attach purpose/diversion flags.

    The zero/small/large partition covers every basin whose dor is defined;
    excluded_reason marks basins left out of purpose-conditioned statistics
    (it does not remove them from the dor partition).
    """
    rows: list[BasinStratification] = []
    for gid in dataset.gauge_ids:
        basin = dataset.basins[gid]
        nor = basin_nor(basin)
        purposes = purpose_assignment_for_basin(basin)
        flag = detect_diversion(basin.remarks)
        try:
            dor_result = compute_dor(nor, basin.mean_annual_runoff)
            dor_value, category = dor_result.dor, dor_result.category
            reason = purposes.excluded_reason
        except AttributionError as err:
            dor_value, category = None, None
            reason = str(err)
        rows.append(
            BasinStratification(
                gauge_id=gid,
                dor=dor_value,
                category=category,
                major_purposes=purposes.major_purposes,
                diversion=flag.present,
                excluded_reason=reason,
            )
        )
    return StratificationResult(rows=rows)
