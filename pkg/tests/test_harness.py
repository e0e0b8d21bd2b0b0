import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deckland.harness import (EpisodeLog, Snapshot, StatsAccumulator, StatsReport, TouchdownReport, aggregate,
                              audit_log, fit_normal, read_episodes_csv, read_stats_json, run_episode,
                              run_monte_carlo, touchdown_metrics, write_episodes_csv, write_stats_json)
from deckland.scenario import load_scenario


@pytest.fixture(scope="module")
def calm():
    return load_scenario("calm_static")


@pytest.fixture(scope="module")
def calm_log(calm):
    return run_episode(calm, 0)


def _log_with(uav, deck, t=20.0, entry=14.0):
    log = EpisodeLog(seed=3, scenario="unit")
    log.contact = Snapshot(t, np.asarray(uav, float), np.asarray(deck, float))
    log.final = log.contact
    log.landing_entry = entry
    return log


def test_identical_states_zero_deviation():
    s = np.array([1.0, 2.0, 1.3, 0.05, -0.02, 0.4, 0.3, 0.1, -0.2, 0.01, 0.0, 0.02])
    r = touchdown_metrics(_log_with(s, s))
    for k in ("position_dev", "vertical_impact_vel", "horizontal_vel_dev", "roll_dev", "pitch_dev", "yaw_dev"):
        assert getattr(r, k) == 0.0
    assert r.success and r.landing_duration == pytest.approx(6.0)


def test_relative_impact_velocity():
    deck = np.zeros(12)
    deck[8] = -0.2
    uav = np.zeros(12)
    uav[8] = -0.7
    assert touchdown_metrics(_log_with(uav, deck)).vertical_impact_vel == pytest.approx(0.5)


def test_off_centre_landing_inside_deck():
    deck = np.zeros(12)
    deck[5] = 0.7
    uav = deck.copy()
    # 0.3 m along the hull's lateral axis stays inside the 2.5 x 1.7 m platform
    uav[0:2] = 0.3 * np.array([-math.sin(0.7), math.cos(0.7)])
    r = touchdown_metrics(_log_with(uav, deck))
    assert r.position_dev == pytest.approx(0.3)
    assert r.inside_deck and r.success
    uav[0:2] = 1.0 * np.array([-math.sin(0.7), math.cos(0.7)])
    r = touchdown_metrics(_log_with(uav, deck))
    assert not r.inside_deck and not r.success and r.failure == "outside_deck"


def test_tip_over_is_failure():
    deck = np.zeros(12)
    uav = deck.copy()
    uav[3] = math.radians(20)
    r = touchdown_metrics(_log_with(uav, deck))
    assert r.touchdown and not r.success and r.failure == "tip_over"


def test_fit_normal():
    assert fit_normal([1, 1, 1]) == (1.0, 0.0)
    mu, sd = fit_normal([0, 2])
    assert mu == 1.0 and sd == pytest.approx(math.sqrt(2))
    assert fit_normal([4.2]) == (4.2, 0.0)
    x = np.random.default_rng(0).normal(0.15, 0.09, 10**4)
    mu, sd = fit_normal(x)
    assert abs(mu - 0.15) <= 0.003 and abs(sd - 0.09) <= 0.003
    with pytest.raises(ValueError):
        fit_normal([])


# ------------------------------------------------------------------ episodes


def test_calm_static_episode(calm_log):
    r = calm_log.report
    assert r.success and r.position_dev <= 0.1
    assert audit_log(calm_log) == []
    assert [e["dst"] for e in calm_log.events] == ["GetAltitude", "Approach", "Tracking", "TrackingStable",
                                                   "Descent", "Flare", "Landed"]


def test_episode_is_deterministic(calm, calm_log):
    again = run_episode(calm, 0)
    assert json.dumps(again.to_dict()) == json.dumps(calm_log.to_dict())


def test_episode_log_round_trip(calm_log, tmp_path):
    p = tmp_path / "episode.json"
    calm_log.save(p)
    back = EpisodeLog.load(p)
    assert json.dumps(back.to_dict()) == json.dumps(calm_log.to_dict())
    assert touchdown_metrics(back) == calm_log.report


def test_log_timestamps_increase(calm_log):
    assert all(b > a for a, b in zip(calm_log.t, calm_log.t[1:]))


def test_monte_carlo_single_episode(calm):
    stats, reps = run_monte_carlo(calm, 1, base_seed=5)
    assert stats.n_episodes == 1 and len(reps) == 1
    assert all(v is None or v[1] == 0.0 for v in stats.metrics.values())


def test_parallel_matches_serial(calm):
    serial, a = run_monte_carlo(calm, 2, base_seed=10, jobs=1)
    parallel, b = run_monte_carlo(calm, 2, base_seed=10, jobs=2)
    assert a == b
    assert serial == parallel


# ------------------------------------------------------------------ aggregation and files

finite = st.floats(-50, 50, allow_nan=False)
report_strategy = st.builds(
    TouchdownReport,
    seed=st.integers(0, 2**32),
    success=st.booleans(),
    touchdown=st.booleans(),
    inside_deck=st.booleans(),
    timed_out=st.booleans(),
    failure=st.sampled_from(["", "water", "timeout", "unstable"]),
    position_dev=finite,
    vertical_impact_vel=finite,
    horizontal_vel_dev=finite,
    roll_dev=finite,
    pitch_dev=finite,
    yaw_dev=finite,
    landing_duration=finite,
    total_time=finite,
    aborts=st.integers(0, 5),
)


@settings(max_examples=60, deadline=None)
@given(st.lists(report_strategy, max_size=5), st.lists(report_strategy, max_size=5),
       st.lists(report_strategy, max_size=5))
def test_aggregation_is_commutative_monoid(a, b, c):
    A, B, C = StatsAccumulator(tuple(a)), StatsAccumulator(tuple(b)), StatsAccumulator(tuple(c))
    e = StatsAccumulator()
    assert (A + B) + C == A + (B + C)
    assert A + B == B + A
    assert A + e == A.__add__(e) == e + A
    assert (A + B).report() == aggregate(list(reversed(a + b)))


@settings(max_examples=60, deadline=None)
@given(reports=st.lists(report_strategy, min_size=1, max_size=6))
def test_csv_round_trip(reports, tmp_path_factory):
    p = tmp_path_factory.mktemp("csv") / "episodes.csv"
    write_episodes_csv(reports, p)
    back = read_episodes_csv(p)
    assert sorted(back, key=repr) == sorted(reports, key=repr)
    assert [r.seed for r in back] == sorted(r.seed for r in reports)


@settings(max_examples=60, deadline=None)
@given(reports=st.lists(report_strategy, min_size=1, max_size=6))
def test_stats_json_round_trip(reports, tmp_path_factory):
    p = tmp_path_factory.mktemp("json") / "stats.json"
    stats = aggregate(reports)
    write_stats_json(stats, p)
    assert read_stats_json(p) == stats
    assert StatsReport.from_dict(json.loads(json.dumps(stats.to_dict()))) == stats


def test_stats_fields():
    good = TouchdownReport(1, True, True, True, False, "", 0.1, 0.5, 0.1, 1.0, -2.0, 0.5, 6.0, 30.0, 0)
    bad = TouchdownReport(2, False, False, False, True, "timeout", 5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 180.0, 0)
    s = aggregate([good, bad])
    assert s.n_episodes == 2 and s.success_rate == 0.5
    assert s.metrics["position_dev"] == (0.1, 0.0)
    assert s.fractions["timed_out"] == 0.5
    assert s.fractions["roll_within_5deg"] == 0.5
