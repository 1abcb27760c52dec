"""Operating-mode emission model and the space-mean link aggregations.

Rates are held internally as integer micrograms per second so that every
network total (per sample, per trip, per interval) reconciles exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

POLLUTANTS = ("GHG", "NOx")
VEHICLE_CLASSES = ("passenger_car", "truck")

BRAKING_ACCEL = -0.894  # m/s^2
IDLE_SPEED = 0.45  # m/s
SPEED_BANDS = (11.2, 22.3)  # m/s
VSP_EDGES = (0.0, 3.0, 6.0, 9.0, 12.0)  # kW/ton

BRAKING = 0
IDLE = 1


@dataclass(frozen=True)
class OpMode:
    id: int
    description: str


def _build_opmodes() -> dict[int, OpMode]:
    modes = {BRAKING: OpMode(BRAKING, "braking"), IDLE: OpMode(IDLE, "idle")}
    speed_names = ("v<11.2", "11.2<=v<22.3", "v>=22.3")
    vsp_names = ("vsp<0", "0<=vsp<3", "3<=vsp<6", "6<=vsp<9", "9<=vsp<12", "vsp>=12")
    for s, sname in enumerate(speed_names, start=1):
        for k, vname in enumerate(vsp_names, start=1):
            oid = 10 * s + k
            modes[oid] = OpMode(oid, f"{sname} m/s, {vname} kW/t")
    return modes


OPMODES: dict[int, OpMode] = _build_opmodes()
OPMODE_IDS: tuple[int, ...] = tuple(sorted(OPMODES))


def vsp(speed: float, accel: float) -> float:
    """Light-duty vehicle-specific power in kW/ton (flat road)."""
    return speed * (1.1 * accel + 0.132) + 0.000302 * speed ** 3


def classify_opmode(speed: float, accel: float) -> int:
    if speed < 0:
        raise ValueError("speed must be >= 0")
    if accel <= BRAKING_ACCEL:
        return BRAKING
    if speed < IDLE_SPEED:
        return IDLE
    band = 1 if speed < SPEED_BANDS[0] else (2 if speed < SPEED_BANDS[1] else 3)
    p = vsp(speed, accel)
    k = 1
    for edge in VSP_EDGES:
        if p < edge:
            break
        k += 1
    return 10 * band + k


class RateTableError(Exception):
    pass


@dataclass(frozen=True)
class YearBin:
    lo: int
    hi: int

    @property
    def label(self) -> str:
        return f"{self.lo}-{self.hi}"

    @classmethod
    def parse(cls, text: str) -> "YearBin":
        lo, _, hi = text.strip().partition("-")
        return cls(int(lo), int(hi or lo))


class EmissionRateTable:
    """(vehicle class, model-year bin, opmode, pollutant) -> rate.

    Coverage is checked at construction, so lookups never fail at query time
    for a configured class and an in-range model year.
    """

    def __init__(self, rates: dict[tuple[str, str, int, str], float]):
        self._ug: dict[tuple[str, str, int, str], int] = {}
        bins: dict[str, YearBin] = {}
        classes: set[str] = set()
        for (cls_, bin_label, op, pol), g in rates.items():
            if g < 0 or not math.isfinite(g):
                raise RateTableError(f"negative or non-finite rate for {(cls_, bin_label, op, pol)}")
            if op not in OPMODES:
                raise RateTableError(f"unknown opmode {op}")
            if pol not in POLLUTANTS:
                raise RateTableError(f"unknown pollutant {pol!r}")
            yb = YearBin.parse(bin_label)
            bins[yb.label] = yb
            classes.add(cls_)
            self._ug[(cls_, yb.label, op, pol)] = round(g * 1e6)
        if not self._ug:
            raise RateTableError("empty rate table")
        self.classes = tuple(sorted(classes))
        self.year_bins = tuple(sorted(bins.values(), key=lambda b: b.lo))
        for a, b in zip(self.year_bins, self.year_bins[1:]):
            if b.lo <= a.hi:
                raise RateTableError(f"overlapping year bins {a.label} and {b.label}")
        missing = [
            (c, yb.label, op, pol)
            for c in self.classes for yb in self.year_bins for op in OPMODE_IDS for pol in POLLUTANTS
            if (c, yb.label, op, pol) not in self._ug
        ]
        if missing:
            c, yb, op, pol = missing[0]
            raise RateTableError(
                f"rate table missing {len(missing)} entries, e.g. class={c} years={yb} "
                f"opmode={op} ({OPMODES[op].description}) pollutant={pol}")
        self._cache: dict[tuple[str, int], tuple[dict[int, int], dict[int, int]]] = {}

    def year_bin(self, model_year: int) -> YearBin:
        for yb in self.year_bins:
            if yb.lo <= model_year <= yb.hi:
                return yb
        raise RateTableError(f"model year {model_year} outside table bins")

    def rate_ug(self, vehicle_class: str, model_year: int, opmode: int, pollutant: str) -> int:
        return self._ug[(vehicle_class, self.year_bin(model_year).label, opmode, pollutant)]

    def rate(self, vehicle_class: str, model_year: int, opmode: int, pollutant: str) -> float:
        """Rate in g/s."""
        return self.rate_ug(vehicle_class, model_year, opmode, pollutant) / 1e6

    def lookup(self, vehicle_class: str, model_year: int) -> tuple[dict[int, int], dict[int, int]]:
        """Per-opmode (GHG, NOx) microgram/s maps for one vehicle identity."""
        key = (vehicle_class, model_year)
        hit = self._cache.get(key)
        if hit is None:
            label = self.year_bin(model_year).label
            hit = tuple(
                {op: self._ug[(vehicle_class, label, op, pol)] for op in OPMODE_IDS} for pol in POLLUTANTS
            )
            self._cache[key] = hit
        return hit

    def rows(self) -> list[tuple[str, str, int, str, float]]:
        return [(c, b, op, pol, ug / 1e6) for (c, b, op, pol), ug in sorted(self._ug.items())]

    def save(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["vehicle_class", "year_bin", "opmode_id", "pollutant", "g_per_s"])
            for row in self.rows():
                w.writerow([row[0], row[1], row[2], row[3], f"{row[4]:.6f}"])


def emission_rate(table: EmissionRateTable, spec, opmode: int, pollutant: str) -> float:
    return table.rate(spec.vehicle_class, spec.model_year, opmode, pollutant)


def load_rate_table(source: str | Path) -> EmissionRateTable:
    rates = {}
    with open(source, newline="") as fh:
        reader = csv.DictReader(fh)
        for line, row in enumerate(reader, start=2):
            try:
                key = (row["vehicle_class"].strip(), row["year_bin"].strip(),
                       int(row["opmode_id"]), row["pollutant"].strip())
                rates[key] = float(row["g_per_s"])
            except (KeyError, TypeError, ValueError, AttributeError) as exc:
                raise RateTableError(f"line {line}: malformed row ({exc})") from None
    return EmissionRateTable(rates)


def bundled_rate_table() -> EmissionRateTable:
    with resources.as_file(resources.files("ecoroute") / "data" / "rates_synthetic.csv") as p:
        return load_rate_table(p)


# Synthetic surrogate for a MOVES export: light-duty gasoline base rates (g/s)
# per speed band x VSP band, scaled by class and model-year bin.
_BASE = {
    "GHG": {
        "braking": 0.60, "idle": 1.00,
        1: (0.90, 1.60, 2.60, 3.60, 4.60, 5.80),
        2: (1.00, 1.85, 2.15, 3.00, 3.90, 5.20),
        3: (1.20, 2.20, 2.80, 3.60, 4.60, 6.00),
    },
    "NOx": {
        "braking": 0.0005, "idle": 0.0010,
        1: (0.0010, 0.0030, 0.0060, 0.0100, 0.0140, 0.0200),
        2: (0.0015, 0.0040, 0.0080, 0.0130, 0.0190, 0.0280),
        3: (0.0020, 0.0060, 0.0110, 0.0180, 0.0270, 0.0400),
    },
}
_CLASS_FACTOR = {"passenger_car": {"GHG": 1.0, "NOx": 1.0}, "truck": {"GHG": 1.9, "NOx": 2.5}}
_YEAR_FACTOR = {
    "1988-1995": {"GHG": 1.25, "NOx": 8.0},
    "1996-2003": {"GHG": 1.15, "NOx": 4.0},
    "2004-2010": {"GHG": 1.07, "NOx": 2.0},
    "2011-2018": {"GHG": 1.00, "NOx": 1.0},
}


def synthetic_rate_table() -> EmissionRateTable:
    rates = {}
    for cls_, cf in _CLASS_FACTOR.items():
        for yb, yf in _YEAR_FACTOR.items():
            for pol in POLLUTANTS:
                base = _BASE[pol]
                for op in OPMODE_IDS:
                    r = base["braking"] if op == BRAKING else base["idle"] if op == IDLE else base[op // 10][op % 10 - 1]
                    rates[(cls_, yb, op, pol)] = round(r * cf[pol] * yf[pol], 6)
    return EmissionRateTable(rates)


def steady_speed_factor(table: EmissionRateTable, speed_kmh: float, pollutant: str = "GHG",
                        vehicle_class: str = "passenger_car", model_year: int = 2018) -> float:
    """Grams per km at a constant speed (zero acceleration)."""
    v = speed_kmh / 3.6
    op = classify_opmode(v, 0.0)
    return table.rate(vehicle_class, model_year, op, pollutant) / v * 1000.0


# --- space-mean aggregation ---------------------------------------------------------

def section_mean_rate(vehicle_rates: Sequence[float]) -> tuple[float, bool]:
    """Mean per-vehicle rate (g/veh/s) over vehicles present in one section-interval.

    Returns ``(rate, empty)``; an empty section is reported as 0 with the flag set.
    """
    if len(vehicle_rates) == 0:
        return 0.0, True
    return math.fsum(vehicle_rates) / len(vehicle_rates), False


EMPTY_ZERO = "zero"
EMPTY_SKIP = "skip"


def link_mean_rate(section_interval_means: Sequence[Sequence[float]],
                   filled: Sequence[Sequence[bool]] | None = None) -> float:
    """Average over the intermediate intervals of each section, then over sections.

    ``section_interval_means[p][w]`` is the section-``p`` mean during intermediate
    interval ``w``.  With ``filled`` given, empty cells are left out of both
    averages instead of counting as 0 (sections with no filled cell drop out).
    """
    if filled is None:
        per_section = [math.fsum(row) / len(row) for row in section_interval_means]
        return math.fsum(per_section) / len(per_section)
    per_section = []
    for row, mask in zip(section_interval_means, filled):
        vals = [x for x, f in zip(row, mask) if f]
        if vals:
            per_section.append(math.fsum(vals) / len(vals))
    if not per_section:
        raise ValueError("no filled section-interval cell")
    return math.fsum(per_section) / len(per_section)


def link_mean_emission(rate: float, travel_time: float) -> float:
    """Expected grams per vehicle on a link: rate (g/veh/s) times travel time (s)."""
    if travel_time < 0:
        raise ValueError("travel time must be >= 0")
    return rate * travel_time


def per_vehicle_rates(samples: Iterable[tuple[str, float]]) -> list[float]:
    """Collapse (vehicle_id, g/s) second samples into one mean rate per vehicle."""
    acc: dict[str, list[float]] = {}
    for vid, g in samples:
        acc.setdefault(vid, []).append(g)
    return [math.fsum(v) / len(v) for _, v in sorted(acc.items())]
