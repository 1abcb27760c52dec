"""Car-following kinematics, lane pipes and FIFO intersection service.

Each link carries ``lanes`` parallel single-file pipes.  A vehicle nearing the
end of its link requests right of way from the downstream intersection; until
the request is granted the stopline acts as a standing obstacle.  Intersections
grant requests strictly in request order, at most ``service_rate`` per tick, and
never toward a link without physical room at its entrance (spillback).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from .network import VEHICLE_LENGTH_M, Link, RoadNetwork

HDV = "HDV"
CAV = "CAV"

EMERGENCY_DECEL = 6.0  # m/s^2
STOPLINE_TOLERANCE = 1.0  # m
GAP_EPS = 0.01  # m


@dataclass(frozen=True)
class IdmParams:
    """Intelligent Driver Model parameters.

    ``desired_speed=None`` means "drive at the current link's speed limit".
    """

    desired_speed: Optional[float] = None  # m/s
    max_accel: float = 1.5
    comfortable_decel: float = 2.0
    time_headway: float = 1.6
    min_gap: float = 4.0
    accel_exponent: float = 4.0

    def __post_init__(self):
        vals = [self.max_accel, self.comfortable_decel, self.time_headway, self.min_gap, self.accel_exponent]
        if self.desired_speed is not None:
            vals.append(self.desired_speed)
        if any(not v > 0 for v in vals):
            raise ValueError(f"IDM parameters must be strictly positive: {self}")


HDV_IDM = IdmParams()
CAV_IDM = replace(HDV_IDM, time_headway=HDV_IDM.time_headway / 2, min_gap=HDV_IDM.min_gap / 2)


@dataclass(frozen=True)
class VehicleSpec:
    id: str
    kind: str = CAV
    vehicle_class: str = "passenger_car"
    model_year: int = 2018
    idm: IdmParams = CAV_IDM

    def __post_init__(self):
        if self.kind not in (HDV, CAV):
            raise ValueError(f"unknown vehicle kind {self.kind!r}")


def idm_accel(speed: float, gap: Optional[float], leader_speed: Optional[float], p: IdmParams,
              desired_speed: Optional[float] = None, emergency_decel: float = EMERGENCY_DECEL) -> float:
    """IDM acceleration, bounded below by ``-emergency_decel``.

    ``gap`` is bumper-to-bumper distance to the leader (None on a free road).
    A non-positive gap is answered with full emergency braking.
    """
    v0 = desired_speed if desired_speed is not None else p.desired_speed
    if v0 is None:
        raise ValueError("no desired speed given")
    free = 1.0 - (speed / v0) ** p.accel_exponent
    if gap is None:
        return max(p.max_accel * free, -emergency_decel)
    if gap <= 0:
        return -emergency_decel
    dv = speed - leader_speed
    s_star = p.min_gap + max(0.0, speed * p.time_headway + speed * dv / (2.0 * math.sqrt(p.max_accel * p.comfortable_decel)))
    ratio = s_star / gap
    if ratio > 1e6:  # interaction term dwarfs everything; avoid float overflow
        return -emergency_decel
    a = p.max_accel * (free - ratio * ratio)
    return max(a, -emergency_decel)


def equilibrium_gap(speed: float, p: IdmParams, desired_speed: float) -> float:
    """Gap at which a follower matching its leader's speed has zero acceleration."""
    s_star = p.min_gap + speed * p.time_headway
    return s_star / math.sqrt(1.0 - (speed / desired_speed) ** p.accel_exponent)


class Vehicle:
    """Mutable per-vehicle state (one instance per injected vehicle)."""

    __slots__ = ("spec", "dest", "origin", "depart", "link", "lane", "pos", "speed", "accel",
                 "path", "path_idx", "next_link", "next_lane", "granted", "requested_at",
                 "stopline_at", "entered_network_at", "entered_link_at", "odometer",
                 "ghg_ug", "nox_ug", "ghg_map", "nox_map", "measured", "links_traveled")

    def __init__(self, spec: VehicleSpec, origin: str, dest: str, depart: float):
        self.spec = spec
        self.origin = origin
        self.dest = dest
        self.depart = depart
        self.link: Optional[Link] = None
        self.lane = 0
        self.pos = 0.0
        self.speed = 0.0
        self.accel = 0.0
        self.path: Optional[list[str]] = None  # fixed route (pre-trip), else None
        self.path_idx = 0
        self.next_link: Optional[str] = None
        self.next_lane = 0
        self.granted = False
        self.requested_at: Optional[int] = None
        self.stopline_at: Optional[int] = None
        self.entered_network_at: Optional[int] = None
        self.entered_link_at: Optional[int] = None
        self.odometer = 0.0
        self.ghg_ug = 0
        self.nox_ug = 0
        self.ghg_map: dict[int, int] = {}
        self.nox_map: dict[int, int] = {}
        self.measured = True
        self.links_traveled: list[str] = []

    @property
    def id(self) -> str:
        return self.spec.id

    def __repr__(self):
        lid = self.link.id if self.link else None
        return f"Vehicle({self.id}, link={lid}, pos={self.pos:.2f}, v={self.speed:.2f})"


@dataclass(order=True)
class QueueEntry:
    requested_at: int
    seq: int
    vehicle_id: str = field(compare=False)
    incoming: str = field(compare=False)
    target: Optional[str] = field(compare=False)


class IntersectionQueue:
    """Per-approach FIFO queues of crossing requests at one intersection."""

    def __init__(self, node: str, service_rate: int = 1):
        self.node = node
        self.service_rate = service_rate
        self.entries: list[QueueEntry] = []

    def push(self, entry: QueueEntry) -> None:
        if any(e.vehicle_id == entry.vehicle_id for e in self.entries):
            raise ValueError(f"vehicle {entry.vehicle_id} already queued at {self.node}")
        self.entries.append(entry)

    def approaches(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for e in sorted(self.entries):
            out.setdefault(e.incoming, []).append(e.vehicle_id)
        return out

    def retarget(self, vehicle_id: str, target: str) -> None:
        for e in self.entries:
            if e.vehicle_id == vehicle_id:
                e.target = target
                return
        raise KeyError(vehicle_id)

    def __len__(self):
        return len(self.entries)


def serve_intersection(ix: IntersectionQueue, tick: int,
                       space_left: Optional[dict[str, int]] = None) -> list[QueueEntry]:
    """Grant up to ``service_rate`` of the earliest requests made before ``tick``.

    Requests whose receiving link has no room left are skipped (they keep their
    place); each grant consumes one unit of the receiving link's room.
    Exits (``target is None``) need no room.
    """
    granted: list[QueueEntry] = []
    if not ix.entries:
        return granted
    ix.entries.sort()
    keep: list[QueueEntry] = []
    for e in ix.entries:
        if len(granted) >= ix.service_rate or e.requested_at >= tick:
            keep.append(e)
            continue
        if e.target is not None and space_left is not None:
            if space_left.get(e.target, 0) <= 0:
                keep.append(e)
                continue
            space_left[e.target] -= 1
        granted.append(e)
    ix.entries = keep
    return granted


def record_idling(vehicle: Vehicle, granted_at: int) -> float:
    """Seconds spent at the stopline before right of way was granted."""
    if vehicle.stopline_at is None:
        raise RuntimeError(f"vehicle {vehicle.id} granted without a stopline timestamp")
    wait = granted_at - vehicle.stopline_at
    if wait < 0:
        raise RuntimeError(f"vehicle {vehicle.id}: negative idling {wait}")
    return float(wait)


class GridlockError(RuntimeError):
    def __init__(self, message: str, dump_path: Optional[str] = None):
        super().__init__(message if dump_path is None else f"{message} (dump: {dump_path})")
        self.dump_path = dump_path


class TickObserver:
    """Hooks the world calls while advancing; the engine subclasses this."""

    def on_move(self, v: Vehicle, start_link: Link, start_pos: float, dist_start: float,
                end_link: Link, end_pos: float, dist_next: float, t_end: int) -> None:
        pass

    def on_grant(self, v: Vehicle, incoming: Link, wait: float, t: int) -> None:
        pass

    def on_exit(self, v: Vehicle, t: int) -> None:
        pass


Router = Callable[[Vehicle, str, int], str]


class World:
    """All mutable traffic state of one simulation run."""

    def __init__(self, net: RoadNetwork, service_rate: int = 1, jam_spacing: float = 9.0,
                 emergency_decel: float = EMERGENCY_DECEL):
        self.net = net
        self.t = 0
        self.service_rate = service_rate
        self.jam_spacing = jam_spacing
        self.emergency_decel = emergency_decel
        self.pipes: dict[str, list[list[Vehicle]]] = {lid: [[] for _ in range(l.lanes)] for lid, l in net.links.items()}
        self.occupancy: dict[str, int] = {lid: 0 for lid in net.links}
        # granted crossings not yet completed, per receiving lane
        self.reserved: dict[str, list[int]] = {lid: [0] * l.lanes for lid, l in net.links.items()}
        self.capacity: dict[str, int] = {
            lid: max(1, l.lanes * int(l.length // jam_spacing)) for lid, l in net.links.items()
        }
        self.queues: dict[str, IntersectionQueue] = {n: IntersectionQueue(n, service_rate) for n in net.intersections}
        self.vehicles: dict[str, Vehicle] = {}
        self.injected = 0
        self.arrived = 0
        self.emergency_events = 0
        self.last_progress = 0
        self._seq = 0

    # -- occupancy ----------------------------------------------------------------
    def in_network(self) -> int:
        return len(self.vehicles)

    def physical_count(self, lid: str) -> int:
        return sum(len(p) for p in self.pipes[lid])

    def density_ratio(self, lid: str) -> float:
        return min(1.0, self.physical_count(lid) / self.capacity[lid])

    def lane_room(self, lid: str, lane: int) -> float:
        """Free length at the start of a lane, net of space promised to granted vehicles."""
        p = self.pipes[lid][lane]
        front = p[-1].pos - VEHICLE_LENGTH_M if p else self.net.links[lid].length
        return front - self.reserved[lid][lane] * self.jam_spacing

    def _pick_lane(self, lid: str) -> int:
        best, key = 0, None
        for i, p in enumerate(self.pipes[lid]):
            k = (len(p) + self.reserved[lid][i], -self.lane_room(lid, i), i)
            if key is None or k < key:
                best, key = i, k
        return best

    def entry_slots(self, lid: str) -> int:
        """Vehicles the link can physically accept right now (spillback gate)."""
        free = self.capacity[lid] - self.occupancy[lid]
        if free <= 0:
            return 0
        s0 = self.jam_spacing - VEHICLE_LENGTH_M
        slots = 0
        for i in range(len(self.pipes[lid])):
            room = self.lane_room(lid, i)
            if room >= s0:
                slots += int((room - s0) // self.jam_spacing) + 1
        return min(free, slots)

    def can_enter(self, lid: str, spec: VehicleSpec) -> bool:
        if self.occupancy[lid] >= self.capacity[lid]:
            return False
        return self.lane_room(lid, self._pick_lane(lid)) >= spec.idm.min_gap

    def inject(self, v: Vehicle, lid: str) -> bool:
        """Place a departing vehicle at the start of ``lid`` if there is room."""
        if not self.can_enter(lid, v.spec):
            return False
        link = self.net.links[lid]
        lane_idx = self._pick_lane(lid)
        lane = self.pipes[lid][lane_idx]
        v0 = self._v0(v, link)
        speed = v0
        if lane:
            tail = lane[-1]
            gap = tail.pos - VEHICLE_LENGTH_M
            if gap < equilibrium_gap(min(v0, tail.speed) * 0.999, v.spec.idm, v0) if v0 > 0 else True:
                speed = min(v0, tail.speed)
        v.link, v.lane, v.pos, v.speed, v.accel = link, lane_idx, 0.0, speed, 0.0
        v.entered_network_at = self.t
        v.entered_link_at = self.t
        v.links_traveled.append(lid)
        lane.append(v)
        self.occupancy[lid] += 1
        self.vehicles[v.id] = v
        self.injected += 1
        self.last_progress = self.t
        return True

    @staticmethod
    def _v0(v: Vehicle, link: Link) -> float:
        return v.spec.idm.desired_speed if v.spec.idm.desired_speed is not None else link.free_speed

    def request_distance(self, v: Vehicle) -> float:
        p = v.spec.idm
        s = v.speed
        return p.min_gap + STOPLINE_TOLERANCE + s + 1.5 * s * s / (2.0 * p.comfortable_decel)

    # -- the tick -------------------------------------------------------------------
    def serve(self, observer: TickObserver) -> int:
        """Grant crossings at every intersection for the current time."""
        t = self.t
        space_left = None
        n_granted = 0
        for node, q in self.queues.items():
            if not q.entries:
                continue
            if space_left is None:
                space_left = {lid: self.entry_slots(lid) for lid in self.capacity}
            for e in serve_intersection(q, t, space_left):
                v = self.vehicles[e.vehicle_id]
                if v.stopline_at is None:
                    v.stopline_at = t  # right of way obtained before reaching the stopline
                wait = record_idling(v, t)
                v.granted = True
                v.next_link = e.target
                if e.target is not None:
                    self.occupancy[e.target] += 1
                    v.next_lane = self._pick_lane(e.target)
                    self.reserved[e.target][v.next_lane] += 1
                observer.on_grant(v, v.link, wait, t)
                n_granted += 1
        return n_granted

    def advance_tick(self, router: Router, observer: TickObserver, dt: float = 1.0) -> None:
        """Serve intersections, then move every vehicle one step of ``dt`` seconds."""
        self.serve(observer)
        self._move(observer, dt)
        self.t += 1
        self._collect_requests(router)

    def _move(self, observer: TickObserver, dt: float) -> None:
        net = self.net
        emerg = self.emergency_decel
        pipes = self.pipes
        # proposals from the simultaneous current state
        proposal: dict[str, tuple[float, float]] = {}
        for lid, lanes in pipes.items():
            link = net.links[lid]
            L = link.length
            for lane in lanes:
                leader = None
                for v in lane:
                    p = v.spec.idm
                    v0 = p.desired_speed if p.desired_speed is not None else link.free_speed
                    a = idm_accel(v.speed, None, None, p, v0, emerg)
                    if leader is not None:
                        gap = leader.pos - VEHICLE_LENGTH_M - v.pos
                        if gap <= 0:
                            self.emergency_events += 1
                        a = min(a, idm_accel(v.speed, gap, leader.speed, p, v0, emerg))
                    if v.dest != link.to_node:
                        if not v.granted:
                            if v.requested_at is not None or L - v.pos <= self.request_distance(v):
                                a = min(a, idm_accel(v.speed, L - v.pos + p.min_gap, 0.0, p, v0, emerg))
                        elif leader is None and v.next_link is not None:
                            tgt = pipes[v.next_link][v.next_lane]
                            if tgt:
                                tail = tgt[-1]
                                gap = L - v.pos + tail.pos - VEHICLE_LENGTH_M
                                a = min(a, idm_accel(v.speed, gap, tail.speed, p, v0, emerg))
                    s = v.speed
                    v1 = s + a * dt
                    if v1 < 0:
                        d = -s * s / (2 * a)
                        v1 = 0.0
                    else:
                        d = (s + v1) * 0.5 * dt
                    proposal[v.id] = (v.pos + d, v1)
                    leader = v

        # finalize front to back; a leader's final position bounds its follower
        t_end = self.t + 1
        moved_any = False
        snapshot = [(net.links[lid], lane, list(lane)) for lid, lanes in pipes.items() for lane in lanes]
        for link, lane, members in snapshot:
            L = link.length
            leader_rear = math.inf
            leader_v = math.inf
            departed = 0
            for v in members:
                x, v1 = proposal[v.id]
                start = v.pos
                exiting = v.dest == link.to_node
                limit = leader_rear - GAP_EPS
                if not exiting and not v.granted:
                    limit = min(limit, L)
                if x > limit:
                    x = max(start, limit)
                    v1 = min(v1, max(leader_v, 0.0))
                a_eff = (v1 - v.speed) / dt
                if x >= L and exiting:
                    dist = L - start
                    v.odometer += dist
                    v.pos, v.speed, v.accel = L, v1, a_eff
                    observer.on_move(v, link, start, dist, link, L, 0.0, t_end)
                    self._exit(v, observer, t_end)
                    departed += 1
                    moved_any = True
                    leader_rear, leader_v = math.inf, math.inf
                    continue
                if x >= L and v.granted:
                    tgt_link = net.links[v.next_link]
                    tgt = pipes[tgt_link.id][v.next_lane]
                    x_new = x - L
                    if tgt:
                        x_new = min(x_new, tgt[-1].pos - VEHICLE_LENGTH_M - GAP_EPS)
                    if x_new >= 0:
                        if tgt and x_new < x - L:
                            v1 = min(v1, tgt[-1].speed)
                        dist = L - start
                        v.odometer += dist + x_new
                        v.speed, v.accel = v1, (v1 - v.speed) / dt
                        observer.on_move(v, link, start, dist, tgt_link, x_new, x_new, t_end)
                        self._cross(v, tgt_link, tgt, x_new, t_end)
                        departed += 1
                        moved_any = True
                        leader_rear = L + x_new - VEHICLE_LENGTH_M
                        leader_v = v1
                        continue
                    # no physical room past the stopline yet: hold there
                    x, v1 = L, 0.0
                    a_eff = (v1 - v.speed) / dt
                disp = x - start
                if disp > 0:
                    moved_any = True
                v.odometer += disp
                v.pos, v.speed, v.accel = x, v1, a_eff
                observer.on_move(v, link, start, disp, link, x, 0.0, t_end)
                leader_rear = x - VEHICLE_LENGTH_M
                leader_v = v1
            if departed:
                del lane[:departed]
        if moved_any:
            self.last_progress = t_end

    def _exit(self, v: Vehicle, observer: TickObserver, t_end: int) -> None:
        del self.vehicles[v.id]
        self.occupancy[v.link.id] -= 1
        self.arrived += 1
        observer.on_exit(v, t_end)

    def _cross(self, v: Vehicle, tgt_link: Link, tgt_lane: list, x_new: float, t_end: int) -> None:
        self.occupancy[v.link.id] -= 1  # target occupancy was reserved at grant time
        self.reserved[tgt_link.id][v.next_lane] -= 1
        v.link = tgt_link
        v.lane = v.next_lane
        v.pos = x_new
        v.entered_link_at = t_end
        v.granted = False
        v.next_link = None
        v.requested_at = None
        v.stopline_at = None
        if v.path is not None:
            v.path_idx += 1
        v.links_traveled.append(tgt_link.id)
        tgt_lane.append(v)

    def _collect_requests(self, router: Router) -> None:
        """Register crossing requests and stopline arrivals at the current time."""
        t = self.t
        net = self.net
        for lid, lanes in self.pipes.items():
            link = net.links[lid]
            L = link.length
            node = link.to_node
            for lane in lanes:
                for v in lane:
                    if v.granted:
                        continue
                    if v.dest == node:
                        break
                    if v.requested_at is None and L - v.pos <= self.request_distance(v):
                        target = router(v, node, t)
                        if target not in self.occupancy or net.links[target].from_node != node:
                            raise RuntimeError(f"router gave invalid link {target!r} at {node}")
                        v.requested_at = t
                        v.next_link = target
                        self._seq += 1
                        self.queues[node].push(QueueEntry(t, self._seq, v.id, lid, target))
                    if v.requested_at is not None and v.stopline_at is None and L - v.pos <= STOPLINE_TOLERANCE:
                        v.stopline_at = t
                    break  # only the first ungranted vehicle of a pipe may request

    def retarget(self, v: Vehicle, target: str) -> None:
        """Replace a waiting vehicle's requested next link (latest announcement wins)."""
        node = v.link.to_node
        if self.net.links[target].from_node != node:
            raise RuntimeError(f"invalid retarget {target!r} at {node}")
        self.queues[node].retarget(v.id, target)
        v.next_link = target

    def waiting(self) -> list[Vehicle]:
        out = []
        for q in self.queues.values():
            for e in sorted(q.entries):
                out.append(self.vehicles[e.vehicle_id])
        return out
