"""Objective link costs and deterministic shortest paths over a state view."""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Mapping, Optional

from .network import RoadNetwork
from .state import LinkStateReport, NetworkStateView

GHG_PRICE_PER_TON = 15.77  # $/t CO2-eq
VALUE_OF_TIME_PER_MIN = 0.35  # $/min
W_CO2_DEFAULT = GHG_PRICE_PER_TON / 1e6 / VALUE_OF_TIME_PER_MIN  # min per gram


class RoutingError(Exception):
    pass


@dataclass(frozen=True)
class ObjectiveSpec:
    name: str
    beta_T: int = 1
    beta_Pi: int = 0
    beta_CO2: int = 0
    W_T: float = 1.0
    W_Pi: float = 1.0
    W_CO2: float = W_CO2_DEFAULT
    stale_penalty: float = 0.0

    def __post_init__(self):
        for b in (self.beta_T, self.beta_Pi, self.beta_CO2):
            if b not in (0, 1):
                raise ValueError("objective switches must be 0 or 1")
        if not (self.beta_T or self.beta_Pi or self.beta_CO2):
            raise ValueError("at least one objective term must be active")


TT = ObjectiveSpec("TT", 1, 0, 0)
TT_STAR = ObjectiveSpec("TT*", 1, 1, 0)
R1 = ObjectiveSpec("R1", 0, 0, 1)
R2 = ObjectiveSpec("R2", 1, 1, 1)
OBJECTIVES = {o.name: o for o in (TT, TT_STAR, R1, R2)}


@dataclass(frozen=True)
class LinkCost:
    link_id: str
    cost: float  # min
    tt: float
    idle: float
    ghg: float


def link_cost(report: LinkStateReport, obj: ObjectiveSpec) -> LinkCost:
    tt = obj.beta_T * obj.W_T * report.travel_time / 60.0
    idle = obj.beta_Pi * obj.W_Pi * report.idling_penalty / 60.0
    ghg = obj.beta_CO2 * obj.W_CO2 * (report.ghg_rate * report.travel_time)
    if report.stale and obj.stale_penalty:
        f = 1.0 + obj.stale_penalty
        tt, idle, ghg = tt * f, idle * f, ghg * f
    cost = tt + idle + ghg
    if not cost > 0:
        raise RoutingError(f"non-positive cost {cost} on link {report.link_id} under {obj.name}")
    return LinkCost(report.link_id, cost, tt, idle, ghg)


def view_costs(view: NetworkStateView, obj: ObjectiveSpec) -> dict[str, float]:
    return {lid: link_cost(r, obj).cost for lid, r in view.reports.items()}


def shortest_paths_from(net: RoadNetwork, costs: Mapping[str, float], origin: str
                        ) -> dict[str, tuple[float, tuple[str, ...], tuple[str, ...]]]:
    """Label-setting search from ``origin`` to every reachable node.

    Labels are (cost, node sequence); equal-cost paths resolve to the
    lexicographically smallest node sequence.  Returns node -> (cost, nodes, links).
    """
    if origin not in net.intersections:
        raise KeyError(f"unknown node {origin!r}")
    best: dict[str, tuple[float, tuple[str, ...]]] = {origin: (0.0, (origin,))}
    via: dict[str, tuple[str, ...]] = {origin: ()}
    done: dict[str, tuple[float, tuple[str, ...], tuple[str, ...]]] = {}
    heap = [(0.0, (origin,), origin)]
    links = net.links
    while heap:
        c, path, u = heapq.heappop(heap)
        if u in done:
            continue
        done[u] = (c, path, via[u])
        for lid in net.intersections[u].outgoing:
            w = links[lid].to_node
            if w in done:
                continue
            cand = (c + costs[lid], path + (w,))
            cur = best.get(w)
            if cur is None or cand < cur:
                best[w] = cand
                via[w] = via[u] + (lid,)
                heapq.heappush(heap, (cand[0], cand[1], w))
    return done


def shortest_path(net: RoadNetwork, costs: Mapping[str, float], origin: str, dest: str
                  ) -> tuple[list[str], float]:
    """Cost-minimal path as a list of link ids, plus its total cost."""
    if dest not in net.intersections:
        raise KeyError(f"unknown node {dest!r}")
    tree = shortest_paths_from(net, costs, origin)
    if dest not in tree:
        raise RoutingError(f"{dest} unreachable from {origin}")
    c, _, lids = tree[dest]
    return list(lids), c


@dataclass(frozen=True)
class RouteDecision:
    vehicle_id: str
    at_intersection: str
    next_link: Optional[str]
    path: Optional[tuple[str, ...]]
    decided_at: int


class PathCache:
    """Shortest-path trees per (view version, objective, origin)."""

    def __init__(self, net: RoadNetwork):
        self.net = net
        self._costs: dict[tuple, dict[str, float]] = {}
        self._trees: dict[tuple, dict] = {}

    def costs(self, view: NetworkStateView, obj: ObjectiveSpec) -> dict[str, float]:
        key = (id(view), view.version, obj)
        c = self._costs.get(key)
        if c is None:
            if len(self._costs) > 256:
                self._costs.clear()
            c = self._costs[key] = view_costs(view, obj)
        return c

    def tree(self, view: NetworkStateView, obj: ObjectiveSpec, origin: str):
        key = (id(view), view.version, obj, origin)
        tr = self._trees.get(key)
        if tr is None:
            if len(self._trees) > 4096:
                self._trees.clear()
            tr = self._trees[key] = shortest_paths_from(self.net, self.costs(view, obj), origin)
        return tr

    def path(self, view: NetworkStateView, obj: ObjectiveSpec, origin: str, dest: str) -> tuple[str, ...]:
        tr = self.tree(view, obj, origin)
        if dest not in tr:
            raise RoutingError(f"{dest} unreachable from {origin}")
        return tr[dest][2]


def next_hop(net: RoadNetwork, view: NetworkStateView, obj: ObjectiveSpec, intersection: str, dest: str,
             vehicle_id: str = "", decided_at: int = 0, cache: Optional[PathCache] = None) -> RouteDecision:
    """First link of the best path from ``intersection`` under the current view."""
    if intersection == dest:
        raise RoutingError(f"vehicle already at destination {dest}")
    if cache is not None:
        lids = cache.path(view, obj, intersection, dest)
    else:
        lids, _ = shortest_path(net, view_costs(view, obj), intersection, dest)
    if not lids:
        raise RoutingError(f"no outgoing progress from {intersection} toward {dest}")
    return RouteDecision(vehicle_id, intersection, lids[0], None, decided_at)


def pretrip_route(net: RoadNetwork, view_at_entry: NetworkStateView, origin: str, dest: str,
                  vehicle_id: str = "", decided_at: int = 0, obj: ObjectiveSpec = TT,
                  cache: Optional[PathCache] = None) -> RouteDecision:
    """Full path frozen at entry; never revised en route."""
    if cache is not None:
        lids = cache.path(view_at_entry, obj, origin, dest)
    else:
        lids, _ = shortest_path(net, view_costs(view_at_entry, obj), origin, dest)
    return RouteDecision(vehicle_id, origin, lids[0], tuple(lids), decided_at)
