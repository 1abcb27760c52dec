"""Post-processing of run outputs: summaries, Welch tests, time series and heatmaps."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .engine import TripRecord
from .network import RoadNetwork
from .state import LinkStateReport

METRICS = ("tt", "vkt", "mean_speed", "ghg", "nox")


class MetricsError(Exception):
    pass


def quartiles(values: Sequence[float]) -> tuple[float, float, float]:
    """Q1, median, Q3 by linear interpolation between order statistics (position (n-1)p)."""
    xs = sorted(values)
    if not xs:
        raise MetricsError("no values")
    out = []
    for p in (0.25, 0.5, 0.75):
        h = (len(xs) - 1) * p
        lo = math.floor(h)
        hi = min(lo + 1, len(xs) - 1)
        out.append(xs[lo] + (h - lo) * (xs[hi] - xs[lo]))
    return out[0], out[1], out[2]


@dataclass(frozen=True)
class ScenarioSummary:
    scenario_id: str
    n_trips: int
    total_tt: float  # s
    mean_tt: float
    total_vkt: float  # km
    mean_vkt: float
    total_ghg_kg: float
    total_nox_g: float
    mean_speed: float  # km/h
    quartiles: dict  # metric -> (q1, median, q3)
    total_ghg_ug: int = 0
    total_nox_ug: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["quartiles"] = {k: list(v) for k, v in self.quartiles.items()}
        return d


def summarize(trips: Sequence[TripRecord], scenario_id: str = "", include_warmup: bool = False) -> ScenarioSummary:
    """Network totals and per-trip distributions over the non-warm-up trips."""
    ts = [t for t in trips if include_warmup or not t.warmup]
    if not ts:
        raise MetricsError("no trips to summarize")
    n = len(ts)
    tt = [t.tt for t in ts]
    vkt = [t.vkt for t in ts]
    ghg_ug = sum(t.ghg_ug for t in ts)
    nox_ug = sum(t.nox_ug for t in ts)
    q = {m: quartiles([getattr(t, m) for t in ts]) for m in METRICS}
    return ScenarioSummary(
        scenario_id, n, math.fsum(tt), math.fsum(tt) / n, math.fsum(vkt), math.fsum(vkt) / n,
        ghg_ug / 1e9, nox_ug / 1e6, math.fsum(t.mean_speed for t in ts) / n, q, ghg_ug, nox_ug)


# --- Welch t-test ----------------------------------------------------------------

def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, 10000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_reg(a: float, b: float, x: float, y: Optional[float] = None) -> float:
    """Regularized incomplete beta I_x(a, b).

    ``y`` may carry ``1 - x`` computed without cancellation by the caller.
    """
    if not (a > 0 and b > 0):
        raise ValueError("a and b must be positive")
    if y is None:
        y = 1.0 - x
    if x <= 0.0:
        return 0.0
    if y <= 0.0:
        return 1.0
    lbt = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log(y)
    front = math.exp(lbt)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, y) / b


def student_t_sf2(t: float, df: float) -> float:
    """Two-sided tail probability P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    t2 = t * t
    x, y = df / (df + t2), t2 / (df + t2)
    if x > 0.5:
        # small |t|: work from the complement to keep precision near p = 1
        return 1.0 - betainc_reg(0.5, df / 2.0, y, x)
    return betainc_reg(df / 2.0, 0.5, x, y)


def welch_t(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Welch's unequal-variance t statistic and two-sided p-value."""
    xa = np.asarray(a, dtype=float)
    xb = np.asarray(b, dtype=float)
    if xa.size < 2 or xb.size < 2:
        raise MetricsError("each sample needs at least 2 values")
    va = float(xa.var(ddof=1)) / xa.size
    vb = float(xb.var(ddof=1)) / xb.size
    diff = float(xa.mean() - xb.mean())
    if va + vb == 0:
        if diff == 0:
            return 0.0, 1.0
        raise MetricsError("both samples have zero variance")
    t = diff / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (va * va / (xa.size - 1) + vb * vb / (xb.size - 1))
    return t, min(1.0, student_t_sf2(t, df))


# --- interval products -----------------------------------------------------------------

def time_series(reports: Sequence[LinkStateReport], metric: str, measured_only: bool = False) -> list[tuple[int, float]]:
    """Per-interval network series: ``ghg`` (g), ``nox`` (g) or ``speed`` (m/s, vehicle-weighted)."""
    by: dict[int, list[LinkStateReport]] = {}
    for r in reports:
        by.setdefault(r.interval_index, []).append(r)
    out = []
    for k in sorted(by):
        rs = by[k]
        if metric in ("ghg", "nox"):
            attr = f"{metric}_measured_ug" if measured_only else f"{metric}_ug"
            out.append((k, sum(getattr(r, attr) for r in rs) / 1e6))
        elif metric == "speed":
            dist = math.fsum(r.distance for r in rs)
            vs = math.fsum(r.vehicle_seconds for r in rs)
            out.append((k, dist / vs if vs > 0 else 0.0))
        else:
            raise MetricsError(f"unknown series metric {metric!r}")
    return out


HEATMAP_FIELDS = {"speed": "space_mean_speed", "density_ratio": "density_ratio", "ghg": "ghg_rate"}


def heatmap_grid(reports: Sequence[LinkStateReport], interval: int, field: str,
                 net: Optional[RoadNetwork] = None, resolution: int = 0):
    """Per-link values at one interval, plus a raster when node coordinates are known.

    Returns ``(values, raster)``; ``raster`` is None without coordinates, else a
    2-D array holding the mean value of the links whose midpoints fall in each cell.
    """
    if field not in HEATMAP_FIELDS:
        raise MetricsError(f"unknown heatmap field {field!r}")
    attr = HEATMAP_FIELDS[field]
    values = {r.link_id: getattr(r, attr) for r in reports if r.interval_index == interval}
    if not values:
        raise MetricsError(f"no reports for interval {interval}")
    if net is None or not net.coords:
        return values, None
    mids = {}
    for lid in values:
        l = net.links[lid]
        (x1, y1), (x2, y2) = net.coords[l.from_node], net.coords[l.to_node]
        mids[lid] = ((x1 + x2) / 2, (y1 + y2) / 2)
    xs = [m[0] for m in mids.values()]
    ys = [m[1] for m in mids.values()]
    n = resolution or max(2, int(math.sqrt(len(values))) * 2)
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    sums = np.zeros((n, n))
    counts = np.zeros((n, n))
    for lid, (mx, my) in mids.items():
        i = min(n - 1, int((my - y0) / ((y1 - y0) or 1.0) * n))
        j = min(n - 1, int((mx - x0) / ((x1 - x0) or 1.0) * n))
        sums[i, j] += values[lid]
        counts[i, j] += 1
    with np.errstate(invalid="ignore"):
        raster = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return values, raster


# --- comparison ------------------------------------------------------------------------

@dataclass(frozen=True)
class Comparison:
    a: str
    b: str
    metric: str
    t: float
    p: float


@dataclass
class ComparisonTable:
    baseline: str
    tests: list[Comparison]
    pct_change: dict  # scenario -> metric -> % change of the mean vs baseline

    def write(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario_a", "scenario_b", "metric", "t_statistic", "p_value", "pct_change_b_vs_a"])
            for c in self.tests:
                pct = self.pct_change.get(c.b, {}).get(c.metric, "") if c.a == self.baseline else ""
                w.writerow([c.a, c.b, c.metric, repr(c.t), repr(c.p), pct if pct == "" else repr(pct)])


def pct_change(baseline: float, other: float) -> float:
    if baseline == 0:
        raise MetricsError("baseline mean is zero")
    return 100.0 * (other - baseline) / baseline


def compare_scenarios(samples: Mapping[str, Mapping[str, Sequence[float]]], baseline: str,
                      fingerprints: Optional[Mapping[str, object]] = None) -> ComparisonTable:
    """Pairwise Welch tests per metric and % change of means vs ``baseline``.

    ``samples[scenario][metric]`` holds the observations (per trip or per seed).
    ``fingerprints`` identify each scenario's network/demand; mismatches are refused.
    """
    if len(samples) < 2:
        raise MetricsError("need at least two scenarios")
    if baseline not in samples:
        raise MetricsError(f"baseline {baseline!r} not among scenarios {sorted(samples)}")
    if fingerprints is not None and len({repr(fingerprints[s]) for s in samples}) > 1:
        raise MetricsError("scenarios were run on different networks or demand; refusing to compare")
    ids = sorted(samples)
    tests = []
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            for m in sorted(set(samples[a]) & set(samples[b])):
                t, p = welch_t(samples[a][m], samples[b][m])
                tests.append(Comparison(a, b, m, t, p))
    # put baseline-first orientation for the baseline rows
    tests = [Comparison(baseline, c.a, c.metric, -c.t, c.p) if c.b == baseline else c for c in tests]
    pct = {}
    for s in ids:
        pct[s] = {m: pct_change(float(np.mean(samples[baseline][m])), float(np.mean(samples[s][m])))
                  for m in samples[s] if m in samples[baseline]}
    return ComparisonTable(baseline, tests, pct)


def trip_samples(trips: Sequence[TripRecord]) -> dict[str, list[float]]:
    ts = [t for t in trips if not t.warmup]
    return {m: [getattr(t, m) for t in ts] for m in METRICS}


def seed_samples(runs: Sequence[Sequence[TripRecord]]) -> dict[str, list[float]]:
    """One observation per run: mean tt/vkt/speed and total ghg (kg) / nox (g)."""
    out: dict[str, list[float]] = {m: [] for m in METRICS}
    for trips in runs:
        s = summarize(trips)
        out["tt"].append(s.mean_tt)
        out["vkt"].append(s.mean_vkt)
        out["mean_speed"].append(s.mean_speed)
        out["ghg"].append(s.total_ghg_kg)
        out["nox"].append(s.total_nox_g)
    return out


def write_series(series: Sequence[tuple[int, float]], path: str | Path, name: str = "value") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["interval", name])
        for k, v in series:
            w.writerow([k, repr(v)])


def write_heatmap(values: Mapping[str, float], path: str | Path, name: str = "value") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["link_id", name])
        for lid in sorted(values):
            w.writerow([lid, repr(values[lid])])
