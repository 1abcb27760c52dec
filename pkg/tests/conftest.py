import os

import pytest
from hypothesis import HealthCheck, settings

from ecoroute.emissions import bundled_rate_table
from ecoroute.network import Link, RoadNetwork

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=400,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def two_way(a, b, length, speed=50.0, lanes=1, sections=3):
    return [Link(f"{a}>{b}", a, b, length, speed, lanes, sections),
            Link(f"{b}>{a}", b, a, length, speed, lanes, sections)]


@pytest.fixture(scope="session")
def rates():
    return bundled_rate_table()


@pytest.fixture
def corridor():
    """a - b - c, two-way, 500 m and 400 m at 50 km/h."""
    return RoadNetwork.from_links(two_way("a", "b", 500.0) + two_way("b", "c", 400.0))


@pytest.fixture
def diamond():
    """s -> {u, v} -> t with a costlier lower branch."""
    links = two_way("s", "u", 300.0, 60.0) + two_way("u", "t", 300.0, 60.0)
    links += two_way("s", "v", 300.0, 40.0) + two_way("v", "t", 300.0, 40.0)
    return RoadNetwork.from_links(links)
