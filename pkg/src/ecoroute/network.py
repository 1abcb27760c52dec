"""Directed road graph: links, intersections and the delimited-text loaders."""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

DEFAULT_SECTION_COUNT = 3
VEHICLE_LENGTH_M = 5.0

NETWORK_COLUMNS = ("from_node", "to_node", "length_m", "speed_kmh", "lanes", "direction", "section_count")


class NetworkError(Exception):
    pass


class NetworkParseError(NetworkError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class NetworkValidationError(NetworkError):
    pass


def link_id_for(from_node: str, to_node: str) -> str:
    return f"{from_node}>{to_node}"


@dataclass(frozen=True)
class Link:
    id: str
    from_node: str
    to_node: str
    length: float  # m
    speed_limit: float  # km/h
    lanes: int = 1
    section_count: int = DEFAULT_SECTION_COUNT
    name: str = ""

    def __post_init__(self):
        if not self.length > 0:
            raise NetworkValidationError(f"link {self.id}: length must be > 0, got {self.length}")
        if not self.speed_limit > 0:
            raise NetworkValidationError(f"link {self.id}: speed_limit must be > 0, got {self.speed_limit}")
        if self.lanes < 1:
            raise NetworkValidationError(f"link {self.id}: lanes must be >= 1, got {self.lanes}")
        if self.section_count < 1:
            raise NetworkValidationError(f"link {self.id}: section_count must be >= 1")
        if self.from_node == self.to_node:
            raise NetworkValidationError(f"link {self.id}: self-loop at {self.from_node}")

    @property
    def free_speed(self) -> float:
        """Speed limit in m/s."""
        return self.speed_limit / 3.6

    @property
    def free_flow_time(self) -> float:
        return self.length / self.free_speed

    def section_of(self, position: float) -> int:
        idx = int(position / (self.length / self.section_count))
        return min(max(idx, 0), self.section_count - 1)


@dataclass(frozen=True)
class Intersection:
    id: str
    incoming: tuple[str, ...]
    outgoing: tuple[str, ...]


@dataclass
class RoadNetwork:
    """Immutable-after-load road graph with both adjacency directions indexed."""

    links: dict[str, Link]
    intersections: dict[str, Intersection]
    coords: dict[str, tuple[float, float]] = field(default_factory=dict)

    @classmethod
    def from_links(cls, links: Iterable[Link], nodes: Iterable[str] = (),
                   coords: dict[str, tuple[float, float]] | None = None) -> "RoadNetwork":
        by_id: dict[str, Link] = {}
        for link in links:
            if link.id in by_id:
                raise NetworkValidationError(f"duplicate directed link {link.id}")
            by_id[link.id] = link
        node_ids = set(nodes)
        for link in by_id.values():
            node_ids.add(link.from_node)
            node_ids.add(link.to_node)
        incoming: dict[str, list[str]] = {n: [] for n in node_ids}
        outgoing: dict[str, list[str]] = {n: [] for n in node_ids}
        for lid in sorted(by_id):
            link = by_id[lid]
            outgoing[link.from_node].append(lid)
            incoming[link.to_node].append(lid)
        intersections = {
            n: Intersection(n, tuple(incoming[n]), tuple(outgoing[n])) for n in sorted(node_ids)
        }
        return cls(by_id, intersections, dict(coords or {}))

    @property
    def nodes(self) -> list[str]:
        return list(self.intersections)

    def out_links(self, node: str) -> tuple[str, ...]:
        return self.intersections[node].outgoing

    def in_links(self, node: str) -> tuple[str, ...]:
        return self.intersections[node].incoming

    def successors(self, node: str) -> list[str]:
        return [self.links[lid].to_node for lid in self.intersections[node].outgoing]

    def neighbors(self, node: str) -> set[str]:
        """Undirected neighbours, used for intersection-to-intersection messaging."""
        ix = self.intersections[node]
        out = {self.links[l].to_node for l in ix.outgoing}
        out |= {self.links[l].from_node for l in ix.incoming}
        return out

    def validate(self, strongly_connected: bool = False) -> None:
        for ix in self.intersections.values():
            for lid in ix.incoming:
                if lid not in self.links or self.links[lid].to_node != ix.id:
                    raise NetworkValidationError(f"intersection {ix.id}: bad incoming link {lid}")
            for lid in ix.outgoing:
                if lid not in self.links or self.links[lid].from_node != ix.id:
                    raise NetworkValidationError(f"intersection {ix.id}: bad outgoing link {lid}")
        if not self.intersections:
            raise NetworkValidationError("empty network")
        start = next(iter(self.intersections))
        seen = _bfs(start, self.neighbors)
        if len(seen) != len(self.intersections):
            missing = sorted(set(self.intersections) - seen)[:5]
            raise NetworkValidationError(f"network is not weakly connected (e.g. {missing})")
        if strongly_connected:
            for node in self.intersections:
                if len(_bfs(node, self.successors)) != len(self.intersections):
                    raise NetworkValidationError(f"network is not strongly connected (from {node})")


def _bfs(start: str, nbrs) -> set[str]:
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in nbrs(u):
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return seen


def reachable(net: RoadNetwork, origin: str, dest: str) -> bool:
    for node in (origin, dest):
        if node not in net.intersections:
            raise KeyError(f"unknown node {node!r}")
    return dest in _bfs(origin, net.successors)


def hop_distances(net: RoadNetwork, source: str) -> dict[str, int]:
    """Undirected hop count from ``source`` to every intersection."""
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in sorted(net.neighbors(u)):
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def _parse_direction(raw: str, line: int) -> bool:
    """True for two-way rows."""
    d = raw.strip().lower().replace("-", "").replace("_", "")
    if d.startswith("twoway"):
        return True
    if d.startswith("oneway"):
        return False
    raise NetworkParseError(line, f"direction must be oneway or twoway, got {raw!r}")


def load_nodes(source: str | Path) -> dict[str, tuple[float, float]]:
    coords = {}
    with open(source, newline="") as fh:
        reader = csv.DictReader(fh)
        for line, row in enumerate(reader, start=2):
            try:
                coords[row["node_id"].strip()] = (float(row["x_m"]), float(row["y_m"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise NetworkParseError(line, f"bad node row: {exc}") from None
    return coords


def load_network(source: str | Path, nodes: str | Path | None = None,
                 strongly_connected: bool = False) -> RoadNetwork:
    """Load a street-segment file; two-way rows expand into two directed links.

    If ``nodes`` is given, every node referenced by a link must appear there.
    """
    coords = load_nodes(nodes) if nodes is not None else None
    links: list[Link] = []
    with open(source, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise NetworkParseError(1, "missing header")
        missing = [c for c in NETWORK_COLUMNS[:6] if c not in reader.fieldnames]
        if missing:
            raise NetworkParseError(1, f"missing columns {missing}")
        for line, row in enumerate(reader, start=2):
            if None in row or any(row.get(c) is None for c in NETWORK_COLUMNS[:6]):
                raise NetworkParseError(line, "wrong number of fields")
            a, b = row["from_node"].strip(), row["to_node"].strip()
            if not a or not b:
                raise NetworkParseError(line, "empty node id")
            try:
                length = float(row["length_m"])
                speed = float(row["speed_kmh"])
                lanes = int(row["lanes"])
                sc_raw = (row.get("section_count") or "").strip()
                sections = int(sc_raw) if sc_raw else DEFAULT_SECTION_COUNT
            except ValueError as exc:
                raise NetworkParseError(line, str(exc)) from None
            two_way = _parse_direction(row["direction"], line)
            name = (row.get("name") or "").strip()
            if coords is not None:
                for n in (a, b):
                    if n not in coords:
                        raise NetworkValidationError(f"line {line}: dangling node reference {n!r}")
            pairs = [(a, b), (b, a)] if two_way else [(a, b)]
            try:
                for u, v in pairs:
                    links.append(Link(link_id_for(u, v), u, v, length, speed, lanes, sections, name))
            except NetworkValidationError as exc:
                raise NetworkValidationError(f"line {line}: {exc}") from None
    net = RoadNetwork.from_links(links, nodes=coords or (), coords=coords)
    net.validate(strongly_connected=strongly_connected)
    return net


def save_network(net: RoadNetwork, path: str | Path) -> None:
    """Write every directed link as its own one-way row."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(NETWORK_COLUMNS + ("name",))
        for lid in sorted(net.links):
            l = net.links[lid]
            w.writerow([l.from_node, l.to_node, repr(l.length), repr(l.speed_limit), l.lanes,
                        "oneway", l.section_count, l.name])


def save_nodes(net: RoadNetwork, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "x_m", "y_m"])
        for n in sorted(net.coords):
            x, y = net.coords[n]
            w.writerow([n, repr(x), repr(y)])
