import itertools

import pytest
from hypothesis import given, strategies as st

from ecoroute.network import Link, RoadNetwork
from ecoroute.routing import (GHG_PRICE_PER_TON, OBJECTIVES, R1, R2, TT, TT_STAR, VALUE_OF_TIME_PER_MIN, W_CO2_DEFAULT,
                              ObjectiveSpec, PathCache, RoutingError, link_cost, next_hop, pretrip_route,
                              shortest_path, shortest_paths_from, view_costs)
from ecoroute.state import LinkStateReport, NetworkStateView, free_flow_report


def report(lid="x", tt=60.0, idle=30.0, ghg=2.0, stale=False):
    return LinkStateReport(lid, 0, 10.0, tt, idle, ghg, 0.0, 0.0, stale)


def test_price_constants():
    assert GHG_PRICE_PER_TON == 15.77
    assert VALUE_OF_TIME_PER_MIN == 0.35


def test_ghg_weight_converts_grams_to_minutes():
    # $/t -> $/g, then $ -> min through the value of time
    assert W_CO2_DEFAULT == pytest.approx(15.77 / 1_000_000 / 0.35, rel=1e-15)
    assert W_CO2_DEFAULT == pytest.approx(4.5057e-5, rel=1e-4)


def test_combined_cost_worked_example():
    c = link_cost(report(), R2)
    assert c.tt == pytest.approx(1.0)
    assert c.idle == pytest.approx(0.5)
    assert c.ghg == pytest.approx(120.0 * W_CO2_DEFAULT)
    assert c.cost == pytest.approx(1.50541, abs=5e-6)


@pytest.mark.parametrize("obj,expected", [
    (TT, 1.0), (TT_STAR, 1.5), (R1, 120.0 * 15.77 / 1e6 / 0.35)])
def test_objective_switches(obj, expected):
    assert link_cost(report(), obj).cost == pytest.approx(expected, rel=1e-12)


def test_objective_registry():
    assert set(OBJECTIVES) == {"TT", "TT*", "R1", "R2"}
    assert (R2.beta_T, R2.beta_Pi, R2.beta_CO2) == (1, 1, 1)


def test_invalid_objectives():
    with pytest.raises(ValueError):
        ObjectiveSpec("none", 0, 0, 0)
    with pytest.raises(ValueError):
        ObjectiveSpec("bad", 2, 0, 0)


def test_non_positive_cost_raises():
    with pytest.raises(RoutingError, match="non-positive"):
        link_cost(report(ghg=0.0), R1)


def test_stale_penalty_inflates_cost():
    obj = ObjectiveSpec("TTs", 1, 0, 0, stale_penalty=0.5)
    assert link_cost(report(stale=True), obj).cost == pytest.approx(1.5)
    assert link_cost(report(stale=False), obj).cost == pytest.approx(1.0)


# --- shortest paths -------------------------------------------------------------------

@st.composite
def weighted_digraph(draw):
    n = draw(st.integers(2, 6))
    pairs = draw(st.sets(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)).filter(lambda p: p[0] != p[1]),
                         min_size=1, max_size=n * (n - 1)))
    links = [Link(f"{a}>{b}", str(a), str(b), 100.0, 40.0) for a, b in sorted(pairs)]
    costs = {l.id: draw(st.integers(1, 6)) * 0.5 for l in links}
    return RoadNetwork.from_links(links, nodes=[str(i) for i in range(n)]), costs


def brute_force(net, costs, o, d):
    """Minimum cost and the lexicographically smallest node sequence among simple paths."""
    best = None
    others = [n for n in net.nodes if n not in (o, d)]
    for r in range(len(others) + 1):
        for mid in itertools.permutations(others, r):
            seq = (o,) + mid + (d,)
            total = 0.0
            ok = True
            for a, b in zip(seq, seq[1:]):
                lid = f"{a}>{b}"
                if lid not in net.links:
                    ok = False
                    break
                total += costs[lid]
            if ok and (best is None or (total, seq) < best):
                best = (total, seq)
    return best


@given(weighted_digraph())
def test_shortest_paths_match_brute_force(g):
    net, costs = g
    for o in net.nodes:
        tree = shortest_paths_from(net, costs, o)
        for d in net.nodes:
            if d == o:
                continue
            oracle = brute_force(net, costs, o, d)
            if oracle is None:
                assert d not in tree
                with pytest.raises(RoutingError):
                    shortest_path(net, costs, o, d)
                continue
            c, nodes, lids = tree[d]
            assert c == pytest.approx(oracle[0])
            assert nodes == oracle[1]
            assert len(lids) == len(nodes) - 1


@given(weighted_digraph())
def test_following_next_hops_reproduces_the_full_path(g):
    net, costs = g
    reports = {lid: LinkStateReport(lid, 0, 1.0, c * 60.0, 0.0, 0.0, 0.0, 0.0) for lid, c in costs.items()}
    view = NetworkStateView("*", reports, 0)
    cache = PathCache(net)
    for o in net.nodes:
        for d in net.nodes:
            if d == o or d not in shortest_paths_from(net, costs, o):
                continue
            full = pretrip_route(net, view, o, d, cache=cache).path
            node, hops = o, []
            while node != d:
                lid = next_hop(net, view, TT, node, d, cache=cache).next_link
                hops.append(lid)
                node = net.links[lid].to_node
            assert tuple(hops) == full


def test_path_through_the_middle(corridor):
    view = NetworkStateView("*", {lid: free_flow_report(l) for lid, l in corridor.links.items()}, 0)
    dec = pretrip_route(corridor, view, "a", "c")
    assert dec.path == ("a>b", "b>c")
    assert dec.next_link == "a>b"


def test_equal_costs_break_ties_by_node_sequence():
    links = [Link(f"{a}>{b}", a, b, 100.0, 40.0) for a, b in [("s", "y"), ("y", "t"), ("s", "b"), ("b", "t")]]
    net = RoadNetwork.from_links(links)
    lids, c = shortest_path(net, {l.id: 1.0 for l in links}, "s", "t")
    assert lids == ["s>b", "b>t"] and c == 2.0


def test_faster_branch_chosen_under_travel_time(diamond):
    view = NetworkStateView("*", {lid: free_flow_report(l, 1.0) for lid, l in diamond.links.items()}, 0)
    assert next_hop(diamond, view, TT, "s", "t").next_link == "s>u"
    costs = view_costs(view, TT)
    assert costs["s>v"] > costs["s>u"]


def test_next_hop_at_destination_raises(diamond):
    view = NetworkStateView("*", {lid: free_flow_report(l) for lid, l in diamond.links.items()}, 0)
    with pytest.raises(RoutingError):
        next_hop(diamond, view, TT, "t", "t")


def test_cache_invalidates_on_new_version(diamond):
    reps = {lid: free_flow_report(l) for lid, l in diamond.links.items()}
    view = NetworkStateView("*", reps, 0, version=1)
    cache = PathCache(diamond)
    assert cache.path(view, TT, "s", "t")[0] == "s>u"
    slow = dict(reps)
    slow["s>u"] = LinkStateReport("s>u", 1, 1.0, 1000.0, 0.0, 0.0, 0.0, 1.0)
    view.reports, view.version = slow, 2
    assert cache.path(view, TT, "s", "t")[0] == "s>v"


@given(weighted_digraph(), st.sampled_from([0.5, 2.0, 4.0, 0.125]))
def test_scaling_costs_keeps_paths(g, factor):
    # power-of-two factors keep every sum exact, so ties stay ties
    net, costs = g
    scaled = {k: v * factor for k, v in costs.items()}
    for o in net.nodes:
        a = shortest_paths_from(net, costs, o)
        b = shortest_paths_from(net, scaled, o)
        assert {d: v[1] for d, v in a.items()} == {d: v[1] for d, v in b.items()}


def test_uniform_free_flow_travel_time_equals_length_over_speed(diamond):
    view = NetworkStateView("*", {lid: free_flow_report(l) for lid, l in diamond.links.items()}, 0)
    oracle = {lid: l.length / l.free_speed / 60.0 for lid, l in diamond.links.items()}
    assert view_costs(view, TT) == pytest.approx(oracle, rel=1e-12)
    assert shortest_path(diamond, view_costs(view, TT), "s", "t")[0] == shortest_path(diamond, oracle, "s", "t")[0]
