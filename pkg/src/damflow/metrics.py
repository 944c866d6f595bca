"""Per-basin evaluation metrics and cross-basin distribution summaries.

All metrics operate on discharge in m3/s after the inverse transform chain
and drop missing (NaN) pairs pairwise first.  FHV and FLV compare flow
duration curves (each series sorted descending independently); FLV works on
log flows over the bottom 30% segment and returns +inf when that segment
touches a zero flow, so zero-flow basins surface as an explicit sentinel
rather than a crash.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

INFINITE = math.inf

FHV_FRACTION = 0.02  # top segment, size ceil(0.02*T)
FLV_FRACTION = 0.30  # bottom segment, size floor(0.3*T)

METRIC_NAMES = ("bias", "corr", "nse", "kge", "fhv", "flv")


class UndefinedMetricError(Exception):
    """The metric is mathematically undefined for these inputs."""


def _paired(obs, sim) -> tuple[np.ndarray, np.ndarray]:
    o = np.asarray(obs, dtype=np.float64)
    s = np.asarray(sim, dtype=np.float64)
    if o.shape != s.shape or o.ndim != 1:
        raise ValueError(f"obs and sim must be equal-length 1-D, got {o.shape} vs {s.shape}")
    keep = np.isfinite(o) & np.isfinite(s)
    return o[keep], s[keep]


def nse(obs, sim) -> float:
    """Nash-Sutcliffe efficiency: 1 - residual variance over observed variance."""
    o, s = _paired(obs, sim)
    if o.size < 2:
        raise UndefinedMetricError("need at least 2 paired values")
    denom = float(np.sum((o - o.mean()) ** 2))
    if denom == 0.0:
        raise UndefinedMetricError("observed series is constant")
    return 1.0 - float(np.sum((s - o) ** 2)) / denom


def bias_and_corr(obs, sim) -> tuple[float, float]:
    """(mean(sim - obs), Pearson correlation).

    A constant series makes the correlation undefined; the error carries the
    still-valid bias as its .bias attribute.
    """
    o, s = _paired(obs, sim)
    if o.size < 2:
        raise UndefinedMetricError("need at least 2 paired values")
    b = float(np.mean(s - o))
    so = float(np.std(o))
    ss = float(np.std(s))
    if so == 0.0 or ss == 0.0:
        err = UndefinedMetricError("correlation undefined for a constant series")
        err.bias = b
        raise err
    r = float(np.mean((o - o.mean()) * (s - s.mean())) / (so * ss))
    return b, r


def kge(obs, sim) -> float:
    """Kling-Gupta efficiency, original formulation, population std."""
    o, s = _paired(obs, sim)
    if o.size < 2:
        raise UndefinedMetricError("need at least 2 paired values")
    so = float(np.std(o))
    ss = float(np.std(s))
    mo = float(np.mean(o))
    if so == 0.0 or ss == 0.0:
        raise UndefinedMetricError("KGE undefined for a constant series")
    if mo == 0.0:
        raise UndefinedMetricError("KGE undefined for zero-mean observations")
    r = float(np.mean((o - mo) * (s - s.mean())) / (so * ss))
    alpha = ss / so
    beta = float(np.mean(s)) / mo
    return 1.0 - math.sqrt((r - 1.0) ** 2 + (alpha - 1.0) ** 2 + (beta - 1.0) ** 2)


def fhv(obs, sim) -> float:
    """Percent bias over the top-2% of the flow duration curves."""
    o, s = _paired(obs, sim)
    if o.size < 50:
        raise UndefinedMetricError("need at least 50 paired values for the 2% segment")
    n_top = math.ceil(FHV_FRACTION * o.size)
    o_top = np.sort(o)[::-1][:n_top]
    s_top = np.sort(s)[::-1][:n_top]
    denom = float(np.sum(o_top))
    if denom == 0.0:
        raise UndefinedMetricError("observed high-flow segment sums to zero")
    return 100.0 * float(np.sum(s_top) - np.sum(o_top)) / denom


def flv(obs, sim) -> float:
    """Percent bias of log flows over the bottom-30% of the flow duration curves.

    Returns the +inf sentinel when a zero flow appears in either bottom
    segment (log undefined there).
    """
    o, s = _paired(obs, sim)
    if o.size < 4:
        raise UndefinedMetricError("need at least 4 paired values for the 30% segment")
    n_low = math.floor(FLV_FRACTION * o.size)
    o_low = np.sort(o)[:n_low]
    s_low = np.sort(s)[:n_low]
    if np.any(o_low <= 0.0) or np.any(s_low <= 0.0):
        return INFINITE
    lo = np.log(o_low)
    ls = np.log(s_low)
    denom = float(np.sum(lo - lo[0]))  # lo[0] is the minimum observed log flow
    if denom == 0.0:
        raise UndefinedMetricError("observed low-flow segment has zero log range")
    return -100.0 * (float(np.sum(ls - ls[0])) - float(np.sum(lo - lo[0]))) / denom


@dataclass
class MetricsRecord:
    """One basin's evaluation; NaN marks an undefined metric, +inf the FLV sentinel."""

    gauge_id: str
    bias: float
    corr: float
    nse: float
    kge: float
    fhv: float
    flv: float

    def values(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def evaluate_pair(gauge_id: str, obs, sim) -> MetricsRecord:
    """Compute all six metrics, mapping undefined ones to NaN instead of raising."""
    out: dict[str, float] = {}
    try:
        b, r = bias_and_corr(obs, sim)
        out["bias"], out["corr"] = b, r
    except UndefinedMetricError as err:
        out["bias"] = getattr(err, "bias", math.nan)
        out["corr"] = math.nan
    for name, fn in (("nse", nse), ("kge", kge), ("fhv", fhv), ("flv", flv)):
        try:
            out[name] = fn(obs, sim)
        except UndefinedMetricError:
            out[name] = math.nan
    return MetricsRecord(gauge_id=gauge_id, **out)


@dataclass
class Summary:
    """Distribution of one metric across basins.

    The CDF covers finite values only but its denominator keeps the infinite
    sentinels, so a population with sentinels tops out below 1.0; NaN
    (undefined) entries are excluded entirely and only counted.
    """

    n_total: int
    n_infinite: int
    n_undefined: int
    cdf: list[tuple[float, float]]
    five_number: tuple[float, float, float, float, float] | None
    median: float | None


def summarize(values) -> Summary:
    vals = np.asarray(list(values), dtype=np.float64)
    if vals.size == 0:
        raise ValueError("cannot summarize an empty collection")
    n_undefined = int(np.isnan(vals).sum())
    n_infinite = int(np.isinf(vals).sum())
    finite = np.sort(vals[np.isfinite(vals)])
    denom = vals.size - n_undefined
    cdf = [(float(v), (i + 1) / denom) for i, v in enumerate(finite)]
    if finite.size == 0:
        return Summary(vals.size, n_infinite, n_undefined, [], None, None)
    q1, med, q3 = (float(q) for q in np.percentile(finite, [25, 50, 75]))
    five = (float(finite[0]), q1, med, q3, float(finite[-1]))
    return Summary(
        n_total=vals.size,
        n_infinite=n_infinite,
        n_undefined=n_undefined,
        cdf=cdf,
        five_number=five,
        median=med,
    )
