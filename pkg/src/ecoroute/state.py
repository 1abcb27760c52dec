"""Link agents' interval reports and intersection-to-intersection dissemination."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Iterable, Mapping, Optional

from .emissions import EMPTY_SKIP, EMPTY_ZERO, link_mean_rate
from .network import Link, RoadNetwork, hop_distances

IDEALIZED = "idealized"
HOP_GOSSIP = "hop_gossip"

MIN_SPACE_MEAN_SPEED = 0.1  # m/s, keeps travel time finite on a stalled link


@dataclass(frozen=True)
class LinkStateReport:
    link_id: str
    interval_index: int
    space_mean_speed: float  # m/s
    travel_time: float  # s
    idling_penalty: float  # s
    ghg_rate: float  # g/veh/s
    nox_rate: float  # g/veh/s
    density_ratio: float
    stale: bool = False
    vehicle_seconds: float = 0.0
    distance: float = 0.0
    idle_samples: int = 0
    ghg_ug: int = 0
    nox_ug: int = 0
    ghg_measured_ug: int = 0
    nox_measured_ug: int = 0

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_row(self) -> list:
        return [getattr(self, c) for c in self.columns()]


class LinkAccumulator:
    """Per-link observations for the interval currently open."""

    __slots__ = ("link", "n_sub", "sub_len", "distance", "veh_seconds", "idle", "cells",
                 "ghg_ug", "nox_ug", "ghg_measured_ug", "nox_measured_ug")

    def __init__(self, link: Link, n_sub: int, sub_len: int):
        self.link = link
        self.n_sub = n_sub
        self.sub_len = sub_len
        self.reset()

    def reset(self) -> None:
        self.distance = 0.0
        self.veh_seconds = 0.0
        self.idle: list[float] = []
        # (section, sub-interval) -> vehicle_id -> [ghg_ug sum, nox_ug sum, seconds]
        self.cells: dict[tuple[int, int], dict[str, list[int]]] = {}
        self.ghg_ug = 0
        self.nox_ug = 0
        self.ghg_measured_ug = 0
        self.nox_measured_ug = 0

    def add_emission(self, section: int, sub: int, vid: str, ghg_ug: int, nox_ug: int, measured: bool) -> None:
        cell = self.cells.get((section, sub))
        if cell is None:
            cell = self.cells[(section, sub)] = {}
        acc = cell.get(vid)
        if acc is None:
            cell[vid] = [ghg_ug, nox_ug, 1]
        else:
            acc[0] += ghg_ug
            acc[1] += nox_ug
            acc[2] += 1
        self.ghg_ug += ghg_ug
        self.nox_ug += nox_ug
        if measured:
            self.ghg_measured_ug += ghg_ug
            self.nox_measured_ug += nox_ug

    def section_interval_means(self, pollutant_idx: int) -> tuple[list[list[float]], list[list[bool]]]:
        """P x Omega grid of per-section mean rates (g/veh/s) and its filled mask; empty cells are 0."""
        grid, mask = [], []
        for p in range(self.link.section_count):
            row, mrow = [], []
            for w in range(self.n_sub):
                cell = self.cells.get((p, w))
                if not cell:
                    row.append(0.0)
                    mrow.append(False)
                    continue
                rates = [acc[pollutant_idx] / acc[2] / 1e6 for _, acc in sorted(cell.items())]
                row.append(math.fsum(rates) / len(rates))
                mrow.append(True)
            grid.append(row)
            mask.append(mrow)
        return grid, mask


def build_report(link: Link, interval_index: int, acc: LinkAccumulator, interval_length: float,
                 jam_capacity: int, previous: Optional[LinkStateReport] = None,
                 pending_waits: Iterable[float] = (), empty_policy: str = EMPTY_ZERO) -> LinkStateReport:
    """Close one routing interval for ``link``.

    Space-mean speed is distance travelled on the link over vehicle-seconds
    spent on it; an interval with no vehicles reports free flow and ``stale``.
    Waits of vehicles still held at the stopline count toward the idling penalty.
    ``empty_policy`` decides whether empty section-interval cells count as 0
    (``zero``) or are left out of the rate averages (``skip``).
    """
    if empty_policy not in (EMPTY_ZERO, EMPTY_SKIP):
        raise ValueError(f"unknown empty-section policy {empty_policy!r}")
    waits = list(acc.idle) + list(pending_waits)
    idle = math.fsum(waits) / len(waits) if waits else 0.0
    ghg_grid, mask = acc.section_interval_means(0)
    nox_grid, _ = acc.section_interval_means(1)
    if any(any(row) for row in mask):
        m = mask if empty_policy == EMPTY_SKIP else None
        ghg_rate, nox_rate = link_mean_rate(ghg_grid, m), link_mean_rate(nox_grid, m)
    elif previous is not None:
        ghg_rate, nox_rate = previous.ghg_rate, previous.nox_rate
    else:
        ghg_rate = nox_rate = 0.0
    if acc.veh_seconds > 0:
        u = max(acc.distance / acc.veh_seconds, MIN_SPACE_MEAN_SPEED)
        stale = False
    else:
        u = link.free_speed
        stale = True
    density = min(1.0, acc.veh_seconds / interval_length / jam_capacity)
    return LinkStateReport(
        link_id=link.id, interval_index=interval_index, space_mean_speed=u,
        travel_time=link.length / u, idling_penalty=idle, ghg_rate=ghg_rate, nox_rate=nox_rate,
        density_ratio=density, stale=stale, vehicle_seconds=acc.veh_seconds, distance=acc.distance,
        idle_samples=len(waits), ghg_ug=acc.ghg_ug, nox_ug=acc.nox_ug,
        ghg_measured_ug=acc.ghg_measured_ug, nox_measured_ug=acc.nox_measured_ug,
    )


def free_flow_report(link: Link, ghg_rate: float = 0.0, nox_rate: float = 0.0,
                     interval_index: int = -1) -> LinkStateReport:
    u = link.free_speed
    return LinkStateReport(link.id, interval_index, u, link.length / u, 0.0, ghg_rate, nox_rate, 0.0, True)


@dataclass
class NetworkStateView:
    """One intersection's picture of the network: latest report per link."""

    node: str
    reports: dict[str, LinkStateReport]
    timestamp: int
    version: int = 0

    def age(self, link_id: str) -> int:
        return self.timestamp - self.reports[link_id].interval_index


class Disseminator:
    """Moves link reports between intersections at every routing-interval boundary.

    ``idealized``: every intersection sees every report immediately (one shared view).
    ``hop_gossip``: a report advances ``k`` undirected hops per interval from the
    link's downstream intersection.
    """

    def __init__(self, net: RoadNetwork, mode: str = IDEALIZED, k: int = 1,
                 initial: Optional[Mapping[str, LinkStateReport]] = None):
        if mode not in (IDEALIZED, HOP_GOSSIP):
            raise ValueError(f"unknown dissemination mode {mode!r}")
        if mode == HOP_GOSSIP and k < 1:
            raise ValueError("gossip radius must be >= 1")
        self.net = net
        self.mode = mode
        self.k = k
        self.interval = -1
        self.version = 0
        init = dict(initial) if initial is not None else {lid: free_flow_report(l) for lid, l in net.links.items()}
        if mode == IDEALIZED:
            shared = NetworkStateView("*", init, -1)
            self.views = {n: shared for n in net.intersections}
        else:
            self.views = {n: NetworkStateView(n, dict(init), -1) for n in net.intersections}
            self._balls = {}
            for n in net.intersections:
                dist = hop_distances(net, n)
                self._balls[n] = sorted(m for m, d in dist.items() if d <= k)

    def publish(self, reports: Mapping[str, LinkStateReport], interval: int) -> dict[str, NetworkStateView]:
        self.interval = interval
        self.version += 1
        if self.mode == IDEALIZED:
            shared = next(iter(self.views.values()))
            merged = dict(shared.reports)
            merged.update(reports)
            view = NetworkStateView("*", merged, interval, self.version)
            self.views = {n: view for n in self.net.intersections}
            return self.views
        old = self.views
        new = {}
        for n in self.net.intersections:
            merged: dict[str, LinkStateReport] = {}
            for lid in self.net.links:
                best = None
                for m in self._balls[n]:
                    r = old[m].reports[lid]
                    if best is None or r.interval_index > best.interval_index:
                        best = r
                merged[lid] = best
            for lid in self.net.in_links(n):
                if lid in reports:
                    merged[lid] = reports[lid]
            new[n] = NetworkStateView(n, merged, interval, self.version)
        self.views = new
        return new

    def view(self, node: str) -> NetworkStateView:
        return self.views[node]


def disseminate(net: RoadNetwork, report_batches: list[Mapping[str, LinkStateReport]],
                mode: str = IDEALIZED, k: int = 1) -> dict[str, NetworkStateView]:
    """Run dissemination over consecutive intervals of reports; returns the final views."""
    d = Disseminator(net, mode, k)
    for i, batch in enumerate(report_batches):
        d.publish(batch, i)
    return d.views


class ProtocolError(Exception):
    pass


class V2IRegistry:
    """Destinations announced by connected vehicles at each intersection."""

    def __init__(self):
        self.registrations: dict[str, dict[str, str]] = {}

    def announce(self, vehicle, intersection: str) -> tuple[str, str]:
        spec = vehicle.spec
        if spec.kind != "CAV":
            raise ProtocolError(f"vehicle {spec.id} ({spec.kind}) cannot communicate with intersections")
        self.registrations.setdefault(intersection, {})[spec.id] = vehicle.dest
        return spec.id, vehicle.dest

    def destination(self, intersection: str, vehicle_id: str) -> str:
        return self.registrations[intersection][vehicle_id]


def v2i_announce(registry: V2IRegistry, vehicle, intersection: str) -> tuple[str, str]:
    return registry.announce(vehicle, intersection)
