import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from scipy import stats

from ecoroute.engine import DemandProfile, DemandRow, TripRecord, make_scenario, run_scenario
from ecoroute.metrics import (MetricsError, betainc_reg, compare_scenarios, heatmap_grid, pct_change, quartiles,
                              seed_samples, student_t_sf2, summarize, time_series, trip_samples, welch_t)
from ecoroute.network import Link, RoadNetwork
from ecoroute.state import LinkAccumulator, LinkStateReport, build_report

A = [2.1, 2.5, 2.8, 3.0, 3.2]
B = [3.9, 4.1, 4.5, 4.8, 5.0]


def trip(vid, tt=100.0, vkt=1.0, ghg_ug=1_000_000, warmup=False):
    return TripRecord(vid, "a", "b", 0.0, tt, tt, vkt, ghg_ug / 1e6, 0.01, vkt / (tt / 3600), "CAV", warmup,
                      ghg_ug, 10_000, 0.0)


def test_mean_vkt_worked_example():
    s = summarize([trip("x", vkt=0.5 + 0.9), trip("y", vkt=0.5 + 0.9)])
    assert s.mean_vkt == pytest.approx(1.4)


def test_single_trip_summary():
    s = summarize([trip("x", tt=80.0, vkt=2.0)])
    assert (s.n_trips, s.mean_tt, s.mean_vkt, s.mean_speed) == (1, 80.0, 2.0, 90.0)
    assert s.quartiles["tt"] == (80.0, 80.0, 80.0)


def test_warmup_trips_are_excluded():
    s = summarize([trip("x", tt=50.0), trip("y", tt=500.0, warmup=True)])
    assert s.n_trips == 1 and s.mean_tt == 50.0
    assert summarize([trip("x", tt=50.0), trip("y", tt=500.0, warmup=True)], include_warmup=True).n_trips == 2


def test_empty_summary_raises():
    with pytest.raises(MetricsError):
        summarize([trip("y", warmup=True)])


def test_totals_in_kg_and_g():
    s = summarize([trip("x", ghg_ug=2_500_000_000), trip("y", ghg_ug=500_000_000)])
    assert s.total_ghg_kg == pytest.approx(3.0)
    assert s.total_nox_g == pytest.approx(0.02)
    assert s.total_ghg_ug == 3_000_000_000


def test_quartiles_match_sort_oracle():
    rng = np.random.default_rng(0)
    xs = rng.lognormal(4.0, 0.6, 1000).tolist()
    s = sorted(xs)
    oracle = []
    for p in (0.25, 0.5, 0.75):
        h = 999 * p
        lo = int(h)
        oracle.append(s[lo] + (h - lo) * (s[lo + 1] - s[lo]))
    assert quartiles(xs) == pytest.approx(tuple(oracle), rel=1e-12)
    assert quartiles(xs) == pytest.approx(tuple(np.percentile(xs, [25, 50, 75])), rel=1e-12)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
def test_quartiles_are_ordered_and_bounded(xs):
    q1, q2, q3 = quartiles(xs)
    assert min(xs) <= q1 <= q2 <= q3 <= max(xs)


# --- Welch ------------------------------------------------------------------------------------

def test_welch_fixture_matches_reference():
    t, p = welch_t(A, B)
    assert type(t) is float and type(p) is float
    ref = stats.ttest_ind(A, B, equal_var=False)
    assert t == pytest.approx(ref.statistic, abs=1e-6)
    assert p == pytest.approx(ref.pvalue, abs=1e-6)


def test_identical_samples():
    assert welch_t(A, A) == (0.0, 1.0)
    assert welch_t([3.0, 3.0], [3.0, 3.0]) == (0.0, 1.0)


def test_antisymmetry():
    t1, p1 = welch_t(A, B)
    t2, p2 = welch_t(B, A)
    assert t1 == -t2 and p1 == p2


def test_degenerate_samples():
    with pytest.raises(MetricsError):
        welch_t([1.0], [1.0, 2.0])
    with pytest.raises(MetricsError):
        welch_t([1.0, 1.0], [2.0, 2.0])


samples = st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=30)


@given(samples, samples)
def test_welch_matches_reference_on_random_samples(a, b):
    assume(np.ptp(a) > 1e-3 and np.ptp(b) > 1e-3)
    t, p = welch_t(a, b)
    ref = stats.ttest_ind(a, b, equal_var=False)
    assert t == pytest.approx(ref.statistic, rel=1e-9, abs=1e-9)
    assert p == pytest.approx(ref.pvalue, rel=1e-7, abs=1e-12)


@given(samples, samples, st.floats(0.01, 100.0), st.floats(-50, 50))
def test_welch_is_affine_invariant(a, b, scale, shift):
    assume(np.var(a) + np.var(b) > 1e-3)
    t1, p1 = welch_t(a, b)
    t2, p2 = welch_t([x * scale + shift for x in a], [x * scale + shift for x in b])
    assert t2 == pytest.approx(t1, rel=1e-6, abs=1e-6)
    assert p2 == pytest.approx(p1, rel=1e-6, abs=1e-9)


@given(st.floats(0.1, 50.0), st.floats(0.1, 50.0), st.floats(0.0, 1.0))
def test_incomplete_beta_matches_reference(a, b, x):
    assert betainc_reg(a, b, x) == pytest.approx(float(stats.beta.cdf(x, a, b)), abs=1e-10)


@given(st.floats(-30, 30), st.floats(0.5, 200))
def test_t_tail_matches_reference(t, df):
    assert student_t_sf2(t, df) == pytest.approx(2 * float(stats.t.sf(abs(t), df)), abs=1e-10)


# --- series and heatmaps ---------------------------------------------------------------------

def rep(lid, k, ghg_ug=0, vs=0.0, dist=0.0, density=0.0, speed=10.0):
    return LinkStateReport(lid, k, speed, 10.0, 0.0, 0.0, 0.0, density, False, vs, dist, 0, ghg_ug, 0, ghg_ug, 0)


def test_series_examples():
    rs = [rep("a", 0), rep("b", 0), rep("a", 1, ghg_ug=60_000_000, vs=60.0, dist=600.0)]
    assert time_series(rs, "ghg") == [(0, 0.0), (1, 60.0)]
    assert time_series(rs, "speed") == [(0, 0.0), (1, 10.0)]
    with pytest.raises(MetricsError):
        time_series(rs, "noise")


def test_heatmap_values_and_raster():
    links = [Link("a>b", "a", "b", 100, 40), Link("b>c", "b", "c", 100, 40)]
    net = RoadNetwork.from_links(links, coords={"a": (0, 0), "b": (100, 0), "c": (200, 0)})
    rs = [rep("a>b", 0, density=0.1), rep("b>c", 0, density=1.0)]
    values, raster = heatmap_grid(rs, 0, "density_ratio", net, resolution=2)
    assert values == {"a>b": 0.1, "b>c": 1.0}
    assert raster.shape == (2, 2)
    assert np.nanmax(raster) == 1.0 and np.nanmin(raster) == 0.1
    assert heatmap_grid(rs, 0, "speed")[1] is None
    with pytest.raises(MetricsError):
        heatmap_grid(rs, 5, "speed")
    with pytest.raises(MetricsError):
        heatmap_grid(rs, 0, "colour")


# --- comparison --------------------------------------------------------------------------------

def test_pct_change_example():
    assert pct_change(10.0, 6.0) == pytest.approx(-40.0)
    with pytest.raises(MetricsError):
        pct_change(0.0, 1.0)


def test_scenario_against_itself():
    s = {"tt": A, "ghg": B}
    table = compare_scenarios({"S1": s, "S1copy": s}, "S1")
    assert all(c.t == 0.0 and c.p == 1.0 for c in table.tests)
    assert table.pct_change["S1copy"] == {"tt": 0.0, "ghg": 0.0}


def test_baseline_orientation_and_pct(tmp_path):
    table = compare_scenarios({"S1": {"tt": [10.0, 10.5, 9.5]}, "S0": {"tt": [6.0, 6.5, 5.5]}}, "S1")
    (c,) = table.tests
    assert (c.a, c.b) == ("S1", "S0")
    assert c.t > 0
    assert table.pct_change["S0"]["tt"] == pytest.approx(-40.0)
    table.write(tmp_path / "cmp.csv")
    lines = (tmp_path / "cmp.csv").read_text().splitlines()
    assert lines[0].startswith("scenario_a,scenario_b,metric")
    assert len(lines) == 2
    row = lines[1].split(",")
    assert float(row[3]) == c.t and float(row[4]) == c.p


def test_mismatched_inputs_refused():
    s = {"tt": A}
    with pytest.raises(MetricsError, match="different"):
        compare_scenarios({"S1": s, "S2": s}, "S1", fingerprints={"S1": "net1", "S2": "net2"})
    with pytest.raises(MetricsError):
        compare_scenarios({"S1": s, "S2": s}, "S3")
    with pytest.raises(MetricsError):
        compare_scenarios({"S1": s}, "S1")


def test_sample_builders():
    runs = [[trip("x", tt=100.0), trip("y", tt=200.0)], [trip("x", tt=300.0)]]
    per_seed = seed_samples(runs)
    assert per_seed["tt"] == [150.0, 300.0]
    assert per_seed["ghg"] == pytest.approx([0.002, 0.001])
    assert trip_samples(runs[0])["tt"] == [100.0, 200.0]
    assert math.isclose(sum(per_seed["nox"]), 0.03)


def lane_drop_corridor():
    links = [Link("a>b", "a", "b", 300, 60, 2), Link("b>c", "b", "c", 300, 40, 1), Link("c>d", "c", "d", 300, 60, 2),
             Link("d>c", "d", "c", 300, 60, 2), Link("c>b", "c", "b", 300, 40, 1), Link("b>a", "b", "a", 300, 60, 2)]
    return RoadNetwork.from_links(links, coords={"a": (0, 0), "b": (300, 0), "c": (600, 0), "d": (900, 0)})


def test_lane_drop_feeder_is_densest_at_peak(rates):
    net = lane_drop_corridor()
    res = run_scenario(net, DemandProfile([DemandRow("a", "d", 0, 300, 400)]), rates,
                       make_scenario("S2", warmup=0))
    peak = max({r.interval_index for r in res.reports},
               key=lambda k: sum(r.vehicle_seconds for r in res.reports if r.interval_index == k))
    values, _ = heatmap_grid(res.reports, peak, "density_ratio", net)
    assert max(values, key=values.get) == "a>b"


def test_free_flow_density_is_low(rates):
    net = lane_drop_corridor()
    res = run_scenario(net, DemandProfile([DemandRow("a", "d", 0, 60, 2)]), rates, make_scenario("S2", warmup=0))
    assert all(r.density_ratio < 0.2 for r in res.reports)


def test_jammed_link_density_is_one():
    link = Link("a>b", "a", "b", 90.0, 40.0)
    acc = LinkAccumulator(link, 3, 20)
    acc.veh_seconds = 60.0 * 10
    assert build_report(link, 0, acc, 60.0, 10).density_ratio == 1.0
