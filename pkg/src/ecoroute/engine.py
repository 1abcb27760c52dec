"""Scenario runs: demand, fleet sampling, and the tick loop wiring every module."""

from __future__ import annotations

import csv
import json
import zlib
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dynamics import CAV, CAV_IDM, HDV, HDV_IDM, GridlockError, IdmParams, TickObserver, Vehicle, VehicleSpec, World
from .emissions import EMPTY_SKIP, EMPTY_ZERO, IDLE, EmissionRateTable, bundled_rate_table, classify_opmode
from .network import VEHICLE_LENGTH_M, Link, RoadNetwork, link_id_for, reachable
from .routing import OBJECTIVES, ObjectiveSpec, PathCache, next_hop, pretrip_route
from .state import (HOP_GOSSIP, IDEALIZED, Disseminator, LinkAccumulator, LinkStateReport, V2IRegistry,
                    build_report, free_flow_report)

PRETRIP = "pretrip_dynamic"
E2ECAV = "e2ecav"

# scenario -> (fleet kind, routing mode, objective)
SCENARIOS = {
    "S1": (HDV, PRETRIP, "TT"),
    "S2": (CAV, E2ECAV, "TT"),
    "S3": (CAV, E2ECAV, "R1"),
    "S4": (CAV, E2ECAV, "TT*"),
    "S5": (CAV, E2ECAV, "R2"),
}

RNG_STREAMS = {"arrivals": 1, "fleet": 2}


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent PCG64 stream per named subsystem."""
    return np.random.default_rng(np.random.SeedSequence([seed, RNG_STREAMS[name]]))


class ConfigError(Exception):
    pass


# --- demand and fleet ------------------------------------------------------------

@dataclass(frozen=True)
class DemandRow:
    origin: str
    dest: str
    interval_start: float
    interval_length: float = 300.0
    expected_count: float = 0.0


@dataclass
class DemandProfile:
    rows: list[DemandRow]

    def validate(self, net: RoadNetwork) -> list[str]:
        problems = []
        for r in self.rows:
            if r.expected_count < 0:
                problems.append(f"negative count for {r.origin}->{r.dest}")
            if r.origin == r.dest:
                problems.append(f"origin equals destination ({r.origin})")
            unknown = [n for n in (r.origin, r.dest) if n not in net.intersections]
            if unknown:
                problems.append(f"unknown node(s) {unknown} in pair {r.origin}->{r.dest}")
        pairs = sorted({(r.origin, r.dest) for r in self.rows
                        if r.origin in net.intersections and r.dest in net.intersections and r.origin != r.dest})
        for o, d in pairs:
            if not reachable(net, o, d):
                problems.append(f"unreachable OD pair {o}->{d}")
        return problems

    @property
    def expected_total(self) -> float:
        return sum(r.expected_count for r in self.rows)


DEMAND_COLUMNS = ("origin", "dest", "interval_start", "interval_length", "expected_count")


def load_demand(path: str | Path) -> DemandProfile:
    rows = []
    with open(path, newline="") as fh:
        for line, rec in enumerate(csv.DictReader(fh), start=2):
            try:
                rows.append(DemandRow(rec["origin"].strip(), rec["dest"].strip(), float(rec["interval_start"]),
                                      float(rec.get("interval_length") or 300.0), float(rec["expected_count"])))
            except (KeyError, TypeError, ValueError, AttributeError) as exc:
                raise ConfigError(f"{path}: line {line}: {exc}") from None
    return DemandProfile(rows)


def save_demand(profile: DemandProfile, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DEMAND_COLUMNS)
        for r in profile.rows:
            w.writerow([r.origin, r.dest, r.interval_start, r.interval_length, r.expected_count])


@dataclass(frozen=True)
class FleetShare:
    vehicle_class: str
    year_lo: int
    year_hi: int
    share: float


DEFAULT_FLEET = (
    FleetShare("passenger_car", 1988, 1995, 0.92 * 0.05),
    FleetShare("passenger_car", 1996, 2003, 0.92 * 0.15),
    FleetShare("passenger_car", 2004, 2010, 0.92 * 0.35),
    FleetShare("passenger_car", 2011, 2018, 0.92 * 0.45),
    FleetShare("truck", 1988, 1995, 0.08 * 0.10),
    FleetShare("truck", 1996, 2003, 0.08 * 0.20),
    FleetShare("truck", 2004, 2010, 0.08 * 0.35),
    FleetShare("truck", 2011, 2018, 0.08 * 0.35),
)


def load_fleet(path: str | Path) -> tuple[FleetShare, ...]:
    out = []
    with open(path, newline="") as fh:
        for line, rec in enumerate(csv.DictReader(fh), start=2):
            try:
                out.append(FleetShare(rec["vehicle_class"].strip(), int(rec["year_lo"]), int(rec["year_hi"]),
                                      float(rec["share"])))
            except (KeyError, TypeError, ValueError, AttributeError) as exc:
                raise ConfigError(f"{path}: line {line}: {exc}") from None
    if not out or any(f.share < 0 for f in out) or sum(f.share for f in out) <= 0:
        raise ConfigError(f"{path}: fleet shares must be non-negative with a positive total")
    return tuple(out)


def save_fleet(fleet: Sequence[FleetShare], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vehicle_class", "year_lo", "year_hi", "share"])
        for f in fleet:
            w.writerow([f.vehicle_class, f.year_lo, f.year_hi, f.share])


# --- scenario configuration --------------------------------------------------------

@dataclass(frozen=True)
class ScenarioConfig:
    scenario_id: str
    fleet: str
    routing: str
    objective: ObjectiveSpec
    seed: int = 0
    update_interval: int = 60
    sub_interval: int = 20
    warmup: int = 300
    dissemination: str = IDEALIZED
    gossip_k: int = 1
    service_rate: int = 1
    gridlock_horizon: int = 1800
    max_time: int = 6 * 3600
    hdv_idm: IdmParams = HDV_IDM
    cav_idm: IdmParams = CAV_IDM
    reannounce_waiting: bool = True
    empty_section_policy: str = EMPTY_ZERO

    def __post_init__(self):
        expected = SCENARIOS.get(self.scenario_id)
        if expected is not None:
            kind, mode, obj = expected
            if (self.fleet, self.routing, self.objective.name) != (kind, mode, obj):
                raise ConfigError(f"{self.scenario_id} requires fleet={kind}, routing={mode}, objective={obj}")
        if self.fleet not in (HDV, CAV) or self.routing not in (PRETRIP, E2ECAV):
            raise ConfigError("bad fleet or routing mode")
        if self.fleet == HDV and self.routing != PRETRIP:
            raise ConfigError("human-driven vehicles cannot take en-route instructions")
        if self.update_interval % self.sub_interval:
            raise ConfigError("update interval must be a multiple of the intermediate interval")
        if self.dissemination not in (IDEALIZED, HOP_GOSSIP):
            raise ConfigError(f"unknown dissemination mode {self.dissemination!r}")
        if self.empty_section_policy not in (EMPTY_ZERO, EMPTY_SKIP):
            raise ConfigError(f"unknown empty-section policy {self.empty_section_policy!r}")

    @property
    def idm(self) -> IdmParams:
        return self.hdv_idm if self.fleet == HDV else self.cav_idm

    def to_dict(self) -> dict:
        d = asdict(self)
        d["objective"] = asdict(self.objective)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        obj = d.get("objective")
        if isinstance(obj, str):
            d["objective"] = OBJECTIVES[obj]
        elif isinstance(obj, dict):
            d["objective"] = ObjectiveSpec(**obj)
        for key in ("hdv_idm", "cav_idm"):
            if isinstance(d.get(key), dict):
                d[key] = IdmParams(**d[key])
        return cls(**d)


def make_scenario(scenario_id: str, seed: int = 0, **overrides) -> ScenarioConfig:
    if scenario_id not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario_id!r}; expected one of {sorted(SCENARIOS)}")
    kind, mode, obj = SCENARIOS[scenario_id]
    return ScenarioConfig(scenario_id, kind, mode, OBJECTIVES[obj], seed=seed, **overrides)


# --- arrivals ----------------------------------------------------------------------

@dataclass(frozen=True)
class Arrival:
    spec: VehicleSpec
    depart: int
    origin: str
    dest: str


def generate_arrivals(profile: DemandProfile, seed: int, fleet: Sequence[FleetShare] = DEFAULT_FLEET,
                      kind: str = CAV, idm: Optional[IdmParams] = None) -> list[Arrival]:
    """Poisson counts per (OD, interval), departures uniform within the interval."""
    rng = rng_stream(seed, "arrivals")
    raw = []
    for r in profile.rows:
        n = int(rng.poisson(r.expected_count)) if r.expected_count > 0 else 0
        if n:
            offs = np.floor(rng.uniform(0.0, r.interval_length, size=n)).astype(int)
            for o in offs:
                raw.append((int(r.interval_start) + int(o), r.origin, r.dest))
    raw.sort()
    shares = np.array([f.share for f in fleet], dtype=float)
    shares /= shares.sum()
    frng = rng_stream(seed, "fleet")
    idm = idm or (HDV_IDM if kind == HDV else CAV_IDM)
    out = []
    for i, (t, o, d) in enumerate(raw):
        f = fleet[int(frng.choice(len(fleet), p=shares))]
        year = int(frng.integers(f.year_lo, f.year_hi + 1))
        spec = VehicleSpec(f"v{i:05d}", kind, f.vehicle_class, year, idm)
        out.append(Arrival(spec, t, o, d))
    return out


# --- run outputs -------------------------------------------------------------------

@dataclass(frozen=True)
class TripRecord:
    vehicle_id: str
    origin: str
    dest: str
    depart: float
    arrive: float
    tt: float  # s
    vkt: float  # km
    ghg: float  # g
    nox: float  # g
    mean_speed: float  # km/h
    kind: str = CAV
    warmup: bool = False
    ghg_ug: int = 0
    nox_ug: int = 0
    entered: float = 0.0

    @classmethod
    def columns(cls) -> list[str]:
        return list(cls.__dataclass_fields__)


@dataclass(frozen=True)
class Decision:
    vehicle_id: str
    t: int
    intersection: str
    chosen_link: str
    objective: str


@dataclass
class RunResult:
    config: ScenarioConfig
    trips: list[TripRecord]
    reports: list[LinkStateReport]
    decisions: list[Decision]
    end_time: int
    sample_ghg_ug: int = 0
    sample_nox_ug: int = 0
    sample_ghg_measured_ug: int = 0
    sample_nox_measured_ug: int = 0
    emergency_events: int = 0
    idle_samples: list[tuple[str, int, float]] = field(default_factory=list)

    @property
    def measured_trips(self) -> list[TripRecord]:
        return [t for t in self.trips if not t.warmup]


# --- the engine --------------------------------------------------------------------

def fleet_reference_rates(rates: EmissionRateTable, link: Link) -> tuple[float, float]:
    """Steady cruise rates at the speed limit, used before a link has been observed."""
    v = link.free_speed
    op = classify_opmode(v, 0.0)
    year = rates.year_bins[-1].lo
    cls_ = "passenger_car" if "passenger_car" in rates.classes else rates.classes[0]
    return rates.rate(cls_, year, op, "GHG"), rates.rate(cls_, year, op, "NOx")


class Simulation(TickObserver):
    def __init__(self, net: RoadNetwork, demand: DemandProfile, rates: EmissionRateTable, cfg: ScenarioConfig,
                 fleet: Sequence[FleetShare] = DEFAULT_FLEET, trajectory: Optional[list] = None,
                 dump_dir: Optional[str | Path] = None):
        self.net = net
        self.rates = rates
        self.cfg = cfg
        self.trajectory = trajectory
        self.dump_dir = Path(dump_dir) if dump_dir is not None else None
        problems = demand.validate(net)
        if problems:
            raise ConfigError("; ".join(problems))
        jam_spacing = cfg.idm.min_gap + VEHICLE_LENGTH_M
        self.world = World(net, cfg.service_rate, jam_spacing)
        self.arrivals = deque(generate_arrivals(demand, cfg.seed, fleet, cfg.fleet, cfg.idm))
        self.n_expected = len(self.arrivals)
        self.origin_queues: dict[str, deque[Vehicle]] = {}
        self.n_sub = cfg.update_interval // cfg.sub_interval
        self.acc = {lid: LinkAccumulator(l, self.n_sub, cfg.sub_interval) for lid, l in net.links.items()}
        initial = {}
        for lid, l in net.links.items():
            g, n = fleet_reference_rates(rates, l)
            initial[lid] = free_flow_report(l, g, n)
        self.last_report = dict(initial)
        self.dissem = Disseminator(net, cfg.dissemination, cfg.gossip_k, initial)
        self.central = Disseminator(net, IDEALIZED, 1, initial) if cfg.dissemination != IDEALIZED else self.dissem
        self.cache = PathCache(net)
        self.registry = V2IRegistry()
        self.trips: list[TripRecord] = []
        self.reports: list[LinkStateReport] = []
        self.decisions: list[Decision] = []
        self.idle_log: list[tuple[str, int, float]] = []
        self.sample_ghg_ug = self.sample_nox_ug = 0
        self.sample_ghg_measured_ug = self.sample_nox_measured_ug = 0
        self._interval = 0
        self._sub = 0

    # -- observer hooks -------------------------------------------------------
    def on_move(self, v, start_link, start_pos, dist_start, end_link, end_pos, dist_next, t_end):
        acc = self.acc[start_link.id]
        acc.veh_seconds += 1.0
        acc.distance += dist_start
        end_acc = self.acc[end_link.id] if end_link is not start_link else acc
        if dist_next:
            end_acc.distance += dist_next
        op = classify_opmode(v.speed, v.accel)
        g = v.ghg_map[op]
        n = v.nox_map[op]
        v.ghg_ug += g
        v.nox_ug += n
        self.sample_ghg_ug += g
        self.sample_nox_ug += n
        if v.measured:
            self.sample_ghg_measured_ug += g
            self.sample_nox_measured_ug += n
        end_acc.add_emission(end_link.section_of(end_pos), self._sub, v.spec.id, g, n, v.measured)
        if self.trajectory is not None:
            self.trajectory.append((v.spec.id, t_end, end_link.id, end_pos, v.speed, v.accel, op, g, n))

    def on_grant(self, v, incoming, wait, t):
        self.acc[incoming.id].idle.append(wait)
        self.idle_log.append((incoming.id, t, wait))

    def on_exit(self, v, t):
        tt = t - v.depart
        vkt = v.odometer / 1000.0
        self.trips.append(TripRecord(
            v.spec.id, v.origin, v.dest, float(v.depart), float(t), float(tt), vkt,
            v.ghg_ug / 1e6, v.nox_ug / 1e6, vkt / (tt / 3600.0) if tt > 0 else 0.0,
            v.spec.kind, not v.measured, v.ghg_ug, v.nox_ug, float(v.entered_network_at)))

    # -- routing ----------------------------------------------------------------
    def _decide(self, v: Vehicle, node: str, t: int) -> str:
        obj = self.cfg.objective
        if v.path is not None:
            lid = v.path[v.path_idx + 1]
        else:
            self.registry.announce(v, node)
            dec = next_hop(self.net, self.dissem.view(node), obj, node, v.dest, v.spec.id, t, self.cache)
            lid = dec.next_link
        self.decisions.append(Decision(v.spec.id, t, node, lid, obj.name))
        return lid

    def _first_link(self, v: Vehicle, t: int) -> str:
        if self.cfg.routing == PRETRIP:
            dec = pretrip_route(self.net, self.central.view(v.origin), v.origin, v.dest, v.spec.id, t,
                                self.cfg.objective, self.cache)
            v.path = list(dec.path)
            v.path_idx = 0
            self.decisions.append(Decision(v.spec.id, t, v.origin, dec.next_link, self.cfg.objective.name))
            return dec.next_link
        return self._decide(v, v.origin, t)

    # -- loop -----------------------------------------------------------------
    def _release_departures(self, t: int) -> None:
        while self.arrivals and self.arrivals[0].depart <= t:
            a = self.arrivals.popleft()
            v = Vehicle(a.spec, a.origin, a.dest, a.depart)
            v.measured = a.depart >= self.cfg.warmup
            v.ghg_map, v.nox_map = self.rates.lookup(a.spec.vehicle_class, a.spec.model_year)
            self.origin_queues.setdefault(a.origin, deque()).append(v)
        for origin in sorted(self.origin_queues):
            q = self.origin_queues[origin]
            while q:
                v = q[0]
                lid = self._first_link(v, t)
                if not self.world.inject(v, lid):
                    if v.path is not None and self.cfg.routing == PRETRIP:
                        v.path = None  # re-plan at the actual entry time
                        self.decisions.pop()
                    elif self.decisions and self.decisions[-1].vehicle_id == v.spec.id:
                        self.decisions.pop()
                    break
                q.popleft()
                if self.trajectory is not None:
                    self.trajectory.append((v.spec.id, t, lid, 0.0, v.speed, 0.0, IDLE, 0, 0))
        for origin in [o for o, q in self.origin_queues.items() if not q]:
            del self.origin_queues[origin]

    def _close_interval(self, t: int) -> None:
        cfg = self.cfg
        k = self._interval
        length = t - k * cfg.update_interval
        pending: dict[str, list[float]] = {}
        for v in self.world.waiting():
            if v.stopline_at is not None and not v.granted:
                pending.setdefault(v.link.id, []).append(float(t - v.stopline_at))
        batch = {}
        for lid, l in self.net.links.items():
            acc = self.acc[lid]
            rep = build_report(l, k, acc, float(length), self.world.capacity[lid], self.last_report[lid],
                               pending.get(lid, ()), cfg.empty_section_policy)
            batch[lid] = rep
            self.reports.append(rep)
            acc.reset()
        self.last_report.update(batch)
        self.dissem.publish(batch, k)
        if self.central is not self.dissem:
            self.central.publish(batch, k)
        self._interval += 1
        if cfg.reannounce_waiting and cfg.routing == E2ECAV:
            for v in self.world.waiting():
                if v.granted:
                    continue
                node = v.link.to_node
                lid = self._decide(v, node, t)
                if lid != v.next_link:
                    self.world.retarget(v, lid)

    def _dump(self, reason: str) -> Optional[str]:
        if self.dump_dir is None:
            return None
        self.dump_dir.mkdir(parents=True, exist_ok=True)
        path = self.dump_dir / "gridlock_dump.json"
        state = {
            "reason": reason, "t": self.world.t, "scenario": self.cfg.scenario_id, "seed": self.cfg.seed,
            "vehicles": [
                {"id": v.spec.id, "link": v.link.id, "pos": v.pos, "speed": v.speed, "granted": v.granted,
                 "next_link": v.next_link, "requested_at": v.requested_at}
                for v in self.world.vehicles.values()
            ],
            "queues": {n: [e.vehicle_id for e in q.entries] for n, q in self.world.queues.items() if q.entries},
        }
        path.write_text(json.dumps(state, indent=1))
        return str(path)

    def run(self) -> RunResult:
        cfg = self.cfg
        w = self.world
        router = self._decide
        while True:
            t = w.t
            self._release_departures(t)
            self._sub = (t % cfg.update_interval) // cfg.sub_interval
            w.advance_tick(router, self)
            t = w.t
            if w.injected != w.in_network() + w.arrived:
                raise AssertionError(f"vehicle conservation violated at t={t}")
            if t % cfg.update_interval == 0:
                self._close_interval(t)
            done = not self.arrivals and not self.origin_queues and not w.vehicles
            if done:
                if t % cfg.update_interval:
                    self._close_interval(t)
                break
            if (w.vehicles or self.origin_queues) and t - w.last_progress > cfg.gridlock_horizon:
                raise GridlockError(f"no vehicle moved for {cfg.gridlock_horizon} s (t={t})", self._dump("gridlock"))
            if t > cfg.max_time:
                raise GridlockError(f"simulation exceeded max_time={cfg.max_time} s", self._dump("max_time"))
        return RunResult(cfg, self.trips, self.reports, self.decisions, w.t, self.sample_ghg_ug,
                         self.sample_nox_ug, self.sample_ghg_measured_ug, self.sample_nox_measured_ug,
                         w.emergency_events, self.idle_log)


def run_scenario(net: RoadNetwork, demand: DemandProfile, rates: EmissionRateTable, cfg: ScenarioConfig,
                 fleet: Sequence[FleetShare] = DEFAULT_FLEET, trajectory: Optional[list] = None,
                 dump_dir: Optional[str | Path] = None) -> RunResult:
    return Simulation(net, demand, rates, cfg, fleet, trajectory, dump_dir).run()


# --- synthetic grid -----------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Geometry and demand of a synthetic downtown-style grid.

    Rows run east-west, columns north-south.  Row 0 is a fast two-lane arterial;
    the optional bottleneck drops one eastbound arterial link to a single slow lane.
    """

    spacing_x: float = 300.0
    spacing_y: float = 200.0
    arterial_speed: float = 80.0
    arterial_lanes: int = 2
    street_speed: float = 60.0
    street_lanes: int = 1
    avenue_speed: float = 40.0
    avenue_lanes: int = 1
    bottleneck: bool = False
    bottleneck_col: Optional[int] = None
    bottleneck_speed: float = 40.0
    bottleneck_lanes: int = 1
    section_count: int = 3
    demand_total: float = 600.0
    demand_start: float = 300.0
    demand_duration: float = 900.0
    warmup_total: float = 100.0
    interval_length: float = 300.0
    crosstown_share: float = 0.85
    corridor_weight: float = 1.0  # relative weight of the arterial row as origin and destination


def grid_node(r: int, c: int) -> str:
    return f"r{r}c{c}"


def generate_grid_network(rows: int, cols: int, spec: GridSpec = GridSpec()) -> tuple[RoadNetwork, DemandProfile]:
    if rows < 2 or cols < 2:
        raise ValueError("grid needs at least 2 rows and 2 columns")
    links = []
    coords = {}
    for r in range(rows):
        for c in range(cols):
            coords[grid_node(r, c)] = (c * spec.spacing_x, r * spec.spacing_y)
    bcol = spec.bottleneck_col if spec.bottleneck_col is not None else (cols - 1) // 2
    for r in range(rows):
        speed, lanes = (spec.arterial_speed, spec.arterial_lanes) if r == 0 else (spec.street_speed, spec.street_lanes)
        for c in range(cols - 1):
            a, b = grid_node(r, c), grid_node(r, c + 1)
            for u, v in ((a, b), (b, a)):
                sp, ln = speed, lanes
                if spec.bottleneck and r == 0 and c == bcol and (u, v) == (a, b):
                    sp, ln = spec.bottleneck_speed, spec.bottleneck_lanes
                name = "bottleneck" if sp != speed or ln != lanes else ("arterial" if r == 0 else "street")
                links.append(Link(link_id_for(u, v), u, v, spec.spacing_x, sp, ln, spec.section_count, name))
    for c in range(cols):
        for r in range(rows - 1):
            a, b = grid_node(r, c), grid_node(r + 1, c)
            for u, v in ((a, b), (b, a)):
                links.append(Link(link_id_for(u, v), u, v, spec.spacing_y, spec.avenue_speed, spec.avenue_lanes,
                                  spec.section_count, "avenue"))
    net = RoadNetwork.from_links(links, coords=coords)
    net.validate(strongly_connected=True)
    return net, grid_demand(rows, cols, spec)


def grid_demand(rows: int, cols: int, spec: GridSpec) -> DemandProfile:
    """West-to-east commuter pattern plus a thin layer of crosstown background trips."""
    row_w = [spec.corridor_weight if r == 0 else 1.0 for r in range(rows)]
    main = [(grid_node(r, 0), grid_node(r2, cols - 1), row_w[r] * row_w[r2]) for r in range(rows) for r2 in range(rows)]
    main_total = sum(w for _, _, w in main)
    background = []
    for c in range(1, cols - 1):
        background.append((grid_node(0, c), grid_node(rows - 1, c)))
        background.append((grid_node(rows - 1, c), grid_node(0, c)))
    out = []

    def emit(start: float, duration: float, total: float):
        n_int = max(1, int(round(duration / spec.interval_length)))
        per = total / n_int
        for i in range(n_int):
            s = start + i * spec.interval_length
            for o, d, wt in main:
                out.append(DemandRow(o, d, s, spec.interval_length, per * spec.crosstown_share * wt / main_total))
            for o, d in background:
                out.append(DemandRow(o, d, s, spec.interval_length, per * (1 - spec.crosstown_share) / len(background)))

    if spec.demand_start > 0 and spec.warmup_total > 0:
        emit(0.0, spec.demand_start, spec.warmup_total)
    emit(spec.demand_start, spec.demand_duration, spec.demand_total)
    return DemandProfile(out)


# --- persistence -------------------------------------------------------------------

def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, bool):
        return int(x)
    return x


def write_trips(trips: Sequence[TripRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TripRecord.columns())
        for t in trips:
            w.writerow([_fmt(getattr(t, c)) for c in TripRecord.columns()])


def read_trips(path: str | Path) -> list[TripRecord]:
    out = []
    types = {f.name: f.type for f in TripRecord.__dataclass_fields__.values()}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            kw = {}
            for k, v in rec.items():
                ty = types[k]
                if ty in ("float",):
                    kw[k] = float(v)
                elif ty == "int":
                    kw[k] = int(v)
                elif ty == "bool":
                    kw[k] = v in ("1", "True", "true")
                else:
                    kw[k] = v
            out.append(TripRecord(**kw))
    return out


def write_reports(reports: Sequence[LinkStateReport], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LinkStateReport.columns())
        for r in reports:
            w.writerow([_fmt(x) for x in r.as_row()])


def read_reports(path: str | Path) -> list[LinkStateReport]:
    out = []
    types = {f.name: f.type for f in LinkStateReport.__dataclass_fields__.values()}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            kw = {}
            for k, v in rec.items():
                ty = types[k]
                kw[k] = float(v) if ty == "float" else int(v) if ty == "int" else (v in ("1", "True")) if ty == "bool" else v
            out.append(LinkStateReport(**kw))
    return out


def write_decisions(decisions: Sequence[Decision], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vehicle_id", "t", "intersection", "chosen_link", "objective"])
        for d in decisions:
            w.writerow([d.vehicle_id, d.t, d.intersection, d.chosen_link, d.objective])


def write_trajectory(rows: Sequence[tuple], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vehicle_id", "t", "link", "position", "speed", "accel", "opmode", "ghg_ug", "nox_ug"])
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def run_fingerprint(result: RunResult) -> int:
    """CRC of the run's trip table; cheap equality check between runs."""
    h = 0
    for t in result.trips:
        h = zlib.crc32(repr(tuple(getattr(t, c) for c in TripRecord.columns())).encode(), h)
    return h


# --- desk-scale fixture ----------------------------------------------------------------

DESK_ROWS, DESK_COLS = 4, 6
DESK_GRID = GridSpec(bottleneck=True, demand_total=900.0)
DESK_OVERRIDES = {"empty_section_policy": EMPTY_SKIP}


def desk_fixture() -> tuple[RoadNetwork, DemandProfile]:
    """Congested bottleneck grid used by the scenario experiments."""
    return generate_grid_network(DESK_ROWS, DESK_COLS, DESK_GRID)


def desk_scenario(scenario_id: str, seed: int = 0, **overrides) -> ScenarioConfig:
    kw = dict(DESK_OVERRIDES)
    kw.update(overrides)
    return make_scenario(scenario_id, seed=seed, **kw)


def _desk_job(job: tuple[str, int]) -> tuple[str, int, list[TripRecord]]:
    sid, seed = job
    net, demand = desk_fixture()
    res = run_scenario(net, demand, bundled_rate_table(), desk_scenario(sid, seed))
    return sid, seed, res.trips


def run_desk_batch(scenarios: Sequence[str], seeds: Sequence[int], workers: int = 1) -> dict[str, list[list[TripRecord]]]:
    """Trips of every (scenario, seed) desk run, grouped per scenario in seed order."""
    jobs = [(s, k) for s in scenarios for k in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            out = list(ex.map(_desk_job, jobs))
    else:
        out = [_desk_job(j) for j in jobs]
    runs: dict[str, list[list[TripRecord]]] = {}
    for sid, _, trips in out:
        runs.setdefault(sid, []).append(trips)
    return runs
