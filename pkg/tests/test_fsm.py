import itertools

import pytest
from hypothesis import given, strategies as st

from deckland.fsm import (FlightState, GuardInputs, LandingConditions, Phase, TouchdownConfig, TouchdownDetector,
                          TouchdownEvidence, detect_touchdown, phase_of, retreat, step)

S = FlightState
FLAGS = ("uav_ready", "altitude_reached", "usv_visible", "stable_above", "flare_height_reached", "touchdown",
         "measurement_timeout")
COND = ("distance_ok", "prediction_feasible", "covariance_ok")


def all_inputs():
    """Every point of the boolean guard cube (2^10 combinations)."""
    for bits in itertools.product((False, True), repeat=len(FLAGS) + len(COND)):
        flags = dict(zip(FLAGS, bits[:len(FLAGS)]))
        lc = LandingConditions(**dict(zip(COND, bits[len(FLAGS):])))
        yield GuardInputs(landing_conditions=lc, **flags)


def expected_next(s, g):
    """Transition relation of the mission graph, written as a lookup of guard predicates."""
    ok = g.landing_conditions.all()
    table = {
        S.IDLE: [(g.uav_ready, S.GET_ALTITUDE)],
        S.GET_ALTITUDE: [(g.altitude_reached, S.APPROACH)],
        S.APPROACH: [(g.usv_visible, S.TRACKING)],
        S.TRACKING: [(g.stable_above, S.TRACKING_STABLE)],
        S.TRACKING_STABLE: [(ok, S.DESCENT)],
        S.DESCENT: [(g.measurement_timeout or not ok, S.TRACKING), (g.flare_height_reached, S.FLARE)],
        S.FLARE: [(g.touchdown, S.LANDED), (g.measurement_timeout or not ok or not g.usv_visible, S.TRACKING)],
        S.LANDED: [],
    }
    for cond, dst in table[s]:
        if cond:
            return dst
    return s


def test_exhaustive_transition_relation():
    edges = set()
    for s in S:
        for g in all_inputs():
            nxt, events = step(s, g)
            assert nxt is expected_next(s, g)
            assert len(events) == (0 if nxt is s else 1)
            if events:
                assert (events[0].src, events[0].dst) == (s, nxt)
                edges.add((s, nxt))
    assert edges == {
        (S.IDLE, S.GET_ALTITUDE), (S.GET_ALTITUDE, S.APPROACH), (S.APPROACH, S.TRACKING),
        (S.TRACKING, S.TRACKING_STABLE), (S.TRACKING_STABLE, S.DESCENT), (S.DESCENT, S.TRACKING),
        (S.DESCENT, S.FLARE), (S.FLARE, S.LANDED), (S.FLARE, S.TRACKING),
    }


def test_graph_properties():
    preds = {s: set() for s in S}
    for s in S:
        for g in all_inputs():
            nxt, _ = step(s, g)
            if nxt is not s:
                preds[nxt].add(s)
    assert preds[S.FLARE] == {S.DESCENT}
    assert preds[S.LANDED] == {S.FLARE}
    # every state reachable from Idle
    seen, frontier = {S.IDLE}, [S.IDLE]
    while frontier:
        s = frontier.pop()
        for g in all_inputs():
            nxt, _ = step(s, g)
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    assert seen == set(S)


def test_examples():
    assert step(S.IDLE, GuardInputs(uav_ready=True))[0] is S.GET_ALTITUDE
    full = LandingConditions(True, True, True)
    assert step(S.DESCENT, GuardInputs(landing_conditions=full, measurement_timeout=True))[0] is S.TRACKING
    for g in all_inputs():
        assert step(S.LANDED, g) == (S.LANDED, [])


def test_abort_safety_within_one_step():
    for s in (S.DESCENT, S.FLARE):
        for g in all_inputs():
            if (g.measurement_timeout or not g.landing_conditions.all()) and not (s is S.FLARE and g.touchdown):
                assert step(s, g)[0] is S.TRACKING


def test_retreat():
    assert retreat(S.DESCENT)[0] is S.TRACKING
    assert retreat(S.FLARE)[0] is S.TRACKING
    assert retreat(S.APPROACH) == (S.APPROACH, [])


def test_phases():
    assert phase_of(S.APPROACH) is Phase.NAVIGATION
    assert phase_of(S.TRACKING_STABLE) is Phase.FOLLOW
    assert phase_of(S.FLARE) is Phase.LANDING


@given(st.sampled_from(list(S)), st.booleans(), st.booleans(), st.booleans())
def test_step_is_pure(s, a, b, c):
    g = GuardInputs(uav_ready=a, usv_visible=b, touchdown=c)
    assert step(s, g) == step(s, g)


def test_touchdown_examples():
    assert not detect_touchdown(TouchdownEvidence(1.0, 0.0, 5.0))
    det = TouchdownDetector()
    ev = TouchdownEvidence(0.3, 0.0, 0.05)
    assert [det.update(ev) for _ in range(3)] == [False, False, True]
    assert detect_touchdown(TouchdownEvidence(1.0, 8.0, 0.04))
    assert not detect_touchdown(TouchdownEvidence(1.0, 7.9, 0.04))
    assert not detect_touchdown(TouchdownEvidence(0.3, 9.0, 0.5))


def test_touchdown_hysteresis_resets():
    det = TouchdownDetector(TouchdownConfig(ticks=3))
    on, off = TouchdownEvidence(0.3, 0.0, 0.05), TouchdownEvidence(1.0, 0.0, 0.05)
    assert [det.update(e) for e in (on, on, off, on, on)] == [False] * 5
    assert det.update(on)
    assert det.update(off)  # latched


def test_touchdown_range_invariant():
    with pytest.raises(ValueError):
        TouchdownEvidence(0.5, 0.0, -0.1)
