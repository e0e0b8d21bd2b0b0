"""Acceptance criteria, each checked at its stated tolerance with one PASS/FAIL line per criterion.

The lines are collected in RESULTS and echoed in the terminal summary (see conftest.py).
"""

import math
import os
import time

import numpy as np
import pytest

from deckland import mpc as mpc_mod
from deckland.fsm import FlightState
from deckland.harness import run_episode, run_monte_carlo
from deckland.mpc import HORIZON, StageWeights, TrajectoryGenerator, build_weights, faa_weight, tracking_objective
from deckland.qp import QpStatus, kkt_residuals, solve_qp
from deckland.scenario import SEA_PRESETS, load_scenario, preset_waves
from deckland.sea import EstimateNoise, UsvDeckState, UsvModelParams, WaveComponent, emulate_estimate, \
    wave_displacement, wave_height_stats
from deckland.uav import NU, NX, PITCH, ROLL, VZ, Z, UavParams, hover_command, hover_state, linearize_hover, \
    nonlinear_derivative

from qp_oracle import enumerate_qp
from test_fsm import expected_next, all_inputs
from test_qp import random_qp
from uav_oracle import fd_jacobians

RESULTS = []
JOBS = max(1, os.cpu_count() or 1)
S = FlightState


def check(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_linearization_fidelity():
    P = UavParams()
    t0 = time.perf_counter()
    lin = linearize_hover(P)
    Ax, Bu = fd_jacobians(lambda x, u: nonlinear_derivative(x, u, P), hover_state(), hover_command(P), 1e-6, 1e-2)
    err = max(np.max(np.abs(lin.Ac - Ax)), np.max(np.abs(lin.Bc - Bu)))
    dt = time.perf_counter() - t0
    check("linearization fidelity", err <= 1e-5 and dt < 1.0, f"max |J_fd - J| = {err:.2e}, {dt:.3f} s")


def test_qp_oracle_equivalence():
    rng = np.random.default_rng(20240)
    t0 = time.perf_counter()
    worst_x = worst_kkt = 0.0
    mismatched = 0
    for _ in range(1000):
        p = random_qp(rng)
        s = solve_qp(p)
        ref = enumerate_qp(p.H, p.g, p.A, p.lower, p.upper)
        if ref is None:
            mismatched += s.status is not QpStatus.INFEASIBLE
            continue
        if s.status is not QpStatus.OPTIMAL:
            mismatched += 1
            continue
        worst_x = max(worst_x, float(np.max(np.abs(s.x - ref[0]))))
        worst_kkt = max(worst_kkt, max(kkt_residuals(p, s.x, s.y)))
    dt = time.perf_counter() - t0
    ok = mismatched == 0 and worst_x <= 1e-6 and worst_kkt <= 1e-6 and dt < 30.0
    check("QP oracle equivalence", ok,
          f"status mismatches {mismatched}, max |x - x*| = {worst_x:.1e}, max KKT = {worst_kkt:.1e}, {dt:.1f} s")


def test_delta_u_equivalence():
    gen = TrajectoryGenerator()
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(100):
        x = np.zeros(NX)
        x[:3] = rng.uniform([-5, -5, 2], [5, 5, 12])
        x[3:6] = rng.uniform(-0.2, 0.2, 3)
        x[6:] = rng.uniform(-1, 1, 6)
        deck = np.zeros((HORIZON, NX))
        deck[:, 0:6] = [*rng.uniform([-3, -3, 0.8], [3, 3, 1.8]), rng.uniform(-0.1, 0.1), 0.0, rng.uniform(-3, 3)]
        deck[:, VZ] = rng.uniform(-0.5, 0.5)
        phase = [S.APPROACH, S.TRACKING, S.DESCENT, S.FLARE][rng.integers(4)]
        u_prev = gen.to_omega_sq(rng.uniform(-1, 1, NU))
        cp, ref, w, xa = gen.problem(x, deck, phase, u_prev)
        dU = rng.normal(scale=0.5, size=HORIZON * NU)
        states, _ = gen.roll_out(xa[:NX], xa[NX:], dU)
        want = tracking_objective(states, ref, w, dU)
        worst = max(worst, abs(cp.objective(dU) - want) / max(1.0, abs(want)))
    check("delta-u form equivalence", worst <= 1e-8, f"max relative gap {worst:.1e} over 100 instances")


def test_faa_values():
    row = build_weights(S.FLARE, 0.0).Q[0]
    exact = row[Z] == 10040.0 and row[ROLL] == 50001.0 and row[PITCH] == 50001.0 and row[VZ] == 6000.0
    grid = np.linspace(0.0, 2.0, 100)
    vals = [faa_weight(1.0, 50000.0, 10.0, v) for v in grid]
    monotone = all(b < a for a, b in zip(vals, vals[1:])) and all(v >= 1.0 for v in vals)
    base = StageWeights().Q_base
    far = build_weights(S.FLARE, 50.0).Q[0]
    to_base = math.isclose(far[ROLL], base[ROLL], rel_tol=1e-9, abs_tol=1e-9)
    check("FAA values", exact and monotone and to_base,
          f"d=0: z {row[Z]:g}, roll {row[ROLL]:g}, pitch {row[PITCH]:g}, vz {row[VZ]:g}; "
          f"strictly decreasing on 100 points: {monotone}; far-field equals base: {to_base}")


def test_solve_budget(monkeypatch):
    times = []
    inner = TrajectoryGenerator.generate

    def timed(self, *a, **kw):
        t0 = time.perf_counter()
        out = inner(self, *a, **kw)
        times.append(time.perf_counter() - t0)
        return out

    monkeypatch.setattr(mpc_mod.TrajectoryGenerator, "generate", timed)
    run_episode(load_scenario("moderate_drift"), 7, record=False)
    ms = 1e3 * np.array(times)
    med, p99 = float(np.median(ms)), float(np.percentile(ms, 99))
    check("solve budget", med <= 20.0 and p99 <= 40.0,
          f"{len(ms)} generate() calls, median {med:.2f} ms, p99 {p99:.2f} ms")


@pytest.fixture(scope="module")
def drift_mc():
    t0 = time.perf_counter()
    stats, reports = run_monte_carlo(load_scenario("moderate_drift"), 100, base_seed=1000, jobs=JOBS)
    return stats, reports, time.perf_counter() - t0


@pytest.mark.slow
def test_moderate_drift_reproduction(drift_mc):
    stats, reports, wall = drift_mc
    pos = stats.metrics["position_dev"][0] if stats.metrics["position_dev"] else math.inf
    impact = stats.fractions["impact_below_1mps"]
    roll = stats.fractions["roll_within_5deg"]
    ok = stats.success_rate >= 0.95 and pos <= 0.5 and impact >= 0.95 and roll >= 0.85 and wall <= 15 * 60
    check("Moderate drift reproduction", ok,
          f"success {stats.success_rate:.2f}, mean position {pos:.3f} m, impact<=1 m/s {impact:.2f}, "
          f"|roll|<=5 deg {roll:.2f}, {wall / 60:.1f} min on {JOBS} worker(s)")


@pytest.mark.slow
def test_landing_duration_shape(drift_mc):
    stats, reports, _ = drift_mc
    landed = [r for r in reports if r.success]
    mean_landing = float(np.mean([r.landing_duration for r in landed])) if landed else math.inf
    longest = max((r.total_time for r in landed), default=math.inf)
    check("landing duration shape", mean_landing <= 15.0 and longest <= 60.0,
          f"mean landing phase {mean_landing:.2f} s, longest mission {longest:.1f} s over {len(landed)} landings")


@pytest.mark.slow
def test_moving_usv_reproduction():
    t0 = time.perf_counter()
    stats, _ = run_monte_carlo(load_scenario("moving_square"), 100, base_seed=2000, jobs=JOBS)
    wall = time.perf_counter() - t0
    pos = stats.metrics["position_dev"][0] if stats.metrics["position_dev"] else math.inf
    ok = stats.success_rate >= 0.90 and pos <= 0.8 and wall <= 20 * 60
    check("moving USV reproduction", ok,
          f"success {stats.success_rate:.2f}, mean position {pos:.3f} m, {wall / 60:.1f} min on {JOBS} worker(s)")


def test_fsm_model_check():
    from deckland.fsm import step

    t0 = time.perf_counter()
    mismatches, flare_preds, landed_exits = 0, set(), 0
    for s in S:
        for g in all_inputs():
            nxt, _ = step(s, g)
            mismatches += nxt is not expected_next(s, g)
            if nxt is S.FLARE and s is not S.FLARE:
                flare_preds.add(s)
            if s is S.LANDED and nxt is not S.LANDED:
                landed_exits += 1
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and landed_exits == 0 and flare_preds == {S.DESCENT} and dt < 1.0
    check("FSM model check", ok, f"{len(S) * 1024} cases, {mismatches} mismatches, Landed exits {landed_exits}, "
                                 f"Flare entered from {sorted(p.value for p in flare_preds)}, {dt:.2f} s")


def test_wave_properties():
    rng = np.random.default_rng(37)
    waves = preset_waves(*SEA_PRESETS["Moderate"])
    bound = sum(w.amplitude for w in waves)
    _, z = wave_displacement(rng.uniform(-500, 500, size=(10**6, 2)), float(rng.uniform(0, 3600)), waves)
    bound_ok = float(np.max(np.abs(z))) <= bound
    worst_period = 0.0
    for _ in range(200):
        w = WaveComponent.deep_water(rng.uniform(0.05, 0.6), rng.uniform(3, 9), rng.uniform(-math.pi, math.pi),
                                     rng.uniform(0, 2 * math.pi))
        p = rng.uniform(-100, 100, 2)
        t = rng.uniform(0, 100)
        z0 = wave_displacement(p, t, [w])[1]
        z1 = wave_displacement(p, t + 2 * math.pi / w.omega, [w])[1]
        worst_period = max(worst_period, abs(float(z1 - z0)))
    ptt, _ = wave_height_stats(waves, duration=1800.0)
    ok = bound_ok and worst_period <= 1e-10 and 0.6 <= ptt <= 2.8
    check("wave properties", ok, f"max |zeta| {np.max(np.abs(z)):.3f} <= {bound:.3f}; periodicity error "
                                 f"{worst_period:.1e}; Moderate peak-to-trough {ptt:.2f} m")


def test_estimator_emulation():
    noise = EstimateNoise()
    s = UsvDeckState.at_rest(UsvModelParams.catamaran(()))
    rng = np.random.default_rng(123)
    n = 10**5
    err = np.empty((n, 12))
    for i in range(n):
        est, _ = emulate_estimate(s, noise, rng)
        err[i] = np.concatenate([est.pose - s.pose, est.rates - s.rates])
    want = (noise.position_rmse, noise.attitude_rmse, noise.lin_vel_rmse, noise.ang_vel_rmse)
    got = [math.sqrt(np.mean(np.sum(err[:, 3 * g:3 * g + 3] ** 2, axis=1))) for g in range(4)]
    rel = [abs(a - b) / b for a, b in zip(got, want)]
    check("estimator emulation", max(rel) <= 0.02,
          "RMSE " + ", ".join(f"{a:.4f} (target {b})" for a, b in zip(got, want)) + f"; worst {max(rel):.2%}")
