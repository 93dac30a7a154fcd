"""Acceptance criteria 1-10.

Each test prints one ``criterion N: PASS|FAIL`` line; the same lines are
collected into the pytest terminal summary (see ``conftest.py``). Run
directly with ``python3 tests/test_acceptance.py`` or through pytest.
"""
import functools
import math
import subprocess
import sys
import threading
import time
import warnings

import numpy as np
import pytest

from finthrust.control import get_preset, half_sine_reference, constant_reference, run_tracking
from finthrust.cyclestats import CycleAverager
from finthrust.kinematics import PropulsionParams, Schedule, SweepGrid, sample_schedule, servo_angle, sweep_array
from finthrust.plant import ANGLE_FOPDT, FORWARD_FOPDT, ForceSample, PlantConfig, StaticForceMap, ThrustPlant, fopdt_step_response
from finthrust.sysid import NESTED_LADDER, SingularityWarning, StaticModelRegressor, basket_ladder, fit_fopdt_from_step

RESULTS = {}


def criterion(number, title):
    def wrap(fn):
        @functools.wraps(fn)
        def test(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except BaseException as exc:
                line = f"criterion {number:>2}: FAIL  {title} -- {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
                RESULTS[number] = line
                print(line)
                raise
            line = f"criterion {number:>2}: PASS  {title}" + (f" ({detail})" if detail else "")
            RESULTS[number] = line
            print(line)

        return test

    return wrap


@criterion(1, "waveform exactness")
def test_criterion_01_waveform():
    rng = np.random.default_rng(1)
    n = 10_000
    a = rng.uniform(0, 60, n)
    b = rng.uniform(-20, 20, n)
    f = rng.uniform(0.05, 5, n)
    t = rng.uniform(0, 1000, n)
    params = [PropulsionParams(float(a[i]), float(b[i]), float(f[i])) for i in range(n)]
    start = time.perf_counter()
    got = [servo_angle(params[i], float(t[i])) for i in range(n)]
    elapsed = time.perf_counter() - start
    expected = [b[i] + a[i] * math.sin(2 * math.pi * f[i] * t[i]) for i in range(n)]
    err = max(abs(g - e) for g, e in zip(got, expected))
    assert err < 1e-9, f"max error {err}"
    assert elapsed < 1.0, f"took {elapsed:.3f} s"
    return f"max error {err:.2e} deg, {elapsed:.3f} s"


@criterion(2, "sweep constraints")
def test_criterion_02_sweep_constraints():
    rng = np.random.default_rng(2)
    n_grids, n_points, violations = 100_000, 0, 0
    for _ in range(n_grids):
        grid = SweepGrid(
            b_step=rng.uniform(1, 25),
            a_step=rng.uniform(1, 45),
            f_min=rng.uniform(0.05, 3),
            f_ratio=rng.uniform(1.05, 3),
            f_anchor=rng.uniform(0.2, 3),
        )
        pts = sweep_array(grid)
        if len(pts):
            a, b, f = pts.T
            ok = (np.abs(b) < 20) & (a > 0) & (a <= 60 - np.abs(b)) & (f > 0) & (f <= 82 / a)
            violations += int(np.count_nonzero(~ok))
            n_points += len(pts)
    assert n_points > 0
    assert violations == 0, f"{violations} violating points"
    return f"{n_grids} grids, {n_points} points, 0 violations"


def _coupled_static_data(noise=0.0, seed=None):
    t = np.arange(0.0, 1000.0, 1.0)
    arr = sample_schedule(Schedule.coupled(), t)
    mag, ang = StaticForceMap().evaluate(arr[:, 0], arr[:, 1], arr[:, 2])
    fw = mag * np.cos(np.radians(ang))
    sd = mag * np.sin(np.radians(ang))
    if noise:
        rng = np.random.default_rng(seed)
        fw = fw + rng.normal(0, noise, len(t))
        sd = sd + rng.normal(0, noise, len(t))
    recs = {"a": arr[:, 0], "b": arr[:, 1]}
    return recs, np.hypot(fw, sd), np.degrees(np.arctan2(sd, fw))


@criterion(3, "least-squares gain recovery")
def test_criterion_03_ls_recovery():
    recs, mag, ang = _coupled_static_data()
    k_fw = StaticModelRegressor("a b", "magnitude").fit(recs, mag).model_.coefficient("a")
    k_ang = StaticModelRegressor("a b", "angle").fit(recs, ang).model_.coefficient("b")
    assert abs(k_fw - 0.00912) <= 1e-6, k_fw
    assert abs(k_ang + 0.866) <= 1e-6, k_ang
    worst = 0.0
    for seed in range(10):
        recs, mag, ang = _coupled_static_data(noise=0.01, seed=seed)
        g1 = StaticModelRegressor("a b", "magnitude").fit(recs, mag).model_.coefficient("a")
        g2 = StaticModelRegressor("a b", "angle").fit(recs, ang).model_.coefficient("b")
        worst = max(worst, abs(g1 / 0.00912 - 1), abs(g2 / -0.866 - 1))
    assert worst < 0.02, f"worst relative gain error {worst:.4f}"
    return f"noiseless {k_fw:.9f}, {k_ang:.9f}; noisy worst {100 * worst:.2f}%"


@criterion(4, "basket-ladder monotonicity")
def test_criterion_04_ladder_monotonicity():
    mae_bad, cond_bad = [], []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(30, 200))
        recs = {"a": rng.uniform(0, 60, n), "b": rng.uniform(-20, 20, n)}
        for k in ("a_dot", "b_dot", "a_ddot", "b_ddot"):
            recs[k] = rng.normal(0, 1, n)
        y = 0.00912 * recs["a"] + rng.normal(0, 0.01, n)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SingularityWarning)
            reps = basket_ladder(recs, y, NESTED_LADDER, require_nested=True)
        mae = [r.mae_percent for r in reps]
        cond = [r.condition_number for r in reps]
        if any(m2 > m1 for m1, m2 in zip(mae, mae[1:])):
            mae_bad.append(seed)
        if any(c2 < c1 for c1, c2 in zip(cond, cond[1:])):
            cond_bad.append(seed)
    assert not cond_bad, f"condition number decreased on datasets {cond_bad}"
    assert not mae_bad, f"MAE increased down the ladder on {len(mae_bad)}/100 datasets"
    return "100 datasets"


@criterion(5, "FOPDT round-trip")
def test_criterion_05_fopdt_round_trip():
    t = np.arange(0.0, 10.0, 0.01)
    out = []
    for model, step in ((FORWARD_FOPDT, 40.0), (ANGLE_FOPDT, -20.0)):
        fit = fit_fopdt_from_step(np.column_stack([t, fopdt_step_response(model, step, t)]), step)
        assert abs(fit.gain / model.gain - 1) < 0.01, fit
        assert abs(fit.time_constant_s / model.time_constant_s - 1) < 0.05, fit
        assert abs(fit.dead_time_s - model.dead_time_s) <= 0.01, fit
        out.append(f"K={fit.gain:.5g} tau={fit.time_constant_s:.4f} L={fit.dead_time_s:.4f}")
    return "; ".join(out)


@criterion(6, "discrete plant against analytic response")
def test_criterion_06_discrete_plant():
    plant = ThrustPlant(PlantConfig().noiseless())
    p0, p1 = PropulsionParams(40.0, 0.0, 1.4), PropulsionParams(40.0, -20.0, 1.4)
    samples = [plant.step(p0) for _ in range(1000)]
    t = np.array([s.t for s in samples])
    fw = np.array([s.forward_N for s in samples])
    late = t >= 7 * FORWARD_FOPDT.time_constant_s
    dy = FORWARD_FOPDT.gain * 40
    err_fw = np.max(np.abs(fw[late] - fopdt_step_response(FORWARD_FOPDT, 40.0, t[late])))
    assert err_fw < 0.005 * dy, err_fw
    t0 = plant.t
    samples = [plant.step(p1) for _ in range(500)]
    t = np.array([s.t for s in samples]) - t0
    ang = np.degrees(np.arctan2([s.side_N for s in samples], [s.forward_N for s in samples]))
    late = t >= 7 * ANGLE_FOPDT.time_constant_s
    err_ang = np.max(np.abs(ang[late] - fopdt_step_response(ANGLE_FOPDT, -20.0, t[late])))
    assert err_ang < 0.005 * abs(ANGLE_FOPDT.gain * 20), err_ang
    return f"max error {err_fw:.1e} N, {err_ang:.1e} deg"


@criterion(7, "controller ordering on the half-sine reference")
def test_criterion_07_controller_ordering():
    ref = half_sine_reference(0.5, 0.005)
    start = time.perf_counter()
    traces = {
        name: run_tracking(ThrustPlant(PlantConfig()), get_preset(name), ref, 2 * ref.hump_s)
        for name in ("P", "FF-P", "FF-PI")
    }
    elapsed = time.perf_counter() - start
    mae = {k: tr.mean_abs_error() for k, tr in traces.items()}
    assert mae["FF-PI"] < mae["FF-P"], mae
    assert mae["FF-PI"] < mae["P"], mae
    per_cycle = traces["FF-PI"].per_cycle_mae(ref.hump_s)
    assert all(e < 0.1 * 0.5 for e in per_cycle[1:]), per_cycle
    assert elapsed < 10.0, f"{elapsed:.2f} s"
    return ", ".join(f"{k} {v:.4f} N" for k, v in mae.items()) + f", {elapsed:.2f} s"


@criterion(8, "final-value checks")
def test_criterion_08_final_value():
    r = 0.5
    tr = run_tracking(ThrustPlant(PlantConfig().noiseless()), get_preset("P"), constant_reference(r), 100)
    expected = r / (1 + 0.912)
    p_error = tr.error[-1]
    assert abs(p_error / expected - 1) < 0.02, (p_error, expected)
    worst = 0.0
    for r_pi in (0.2, 0.3, 0.4, 0.5):
        tr = run_tracking(ThrustPlant(PlantConfig().noiseless()), get_preset("PI"), constant_reference(r_pi), 40)
        worst = max(worst, abs(tr.error[20]) / r_pi)
    assert worst < 0.01, worst
    return f"P error {p_error:.6f} N vs {expected:.6f} N; PI worst {100 * worst:.3f}% of r at tick 20"


def _window_oracle(x, n):
    out = np.empty(len(x))
    head = min(n, len(x))
    out[:head] = np.cumsum(x[:head]) / np.arange(1, head + 1)
    chunk = 100_000
    for s in range(0, len(x) - n + 1, chunk):
        e = min(len(x) - n + 1, s + chunk)
        w = np.lib.stride_tricks.sliding_window_view(x[s:e + n - 1], n)
        out[s + n - 1:e + n - 1] = w.mean(axis=1)
    return out


@criterion(9, "cycle-average oracle and producer/reader stress")
def test_criterion_09_cycle_average():
    n_cycle, n = 71, 1_000_000
    rng = np.random.default_rng(9)
    x = rng.normal(0, 1, n) * 10 ** rng.uniform(-3, 3, n)
    oracle = _window_oracle(x, n_cycle)
    scale = np.convolve(np.abs(x), np.ones(n_cycle), "full")[:n] / np.minimum(np.arange(1, n + 1), n_cycle)
    avg = CycleAverager(n_cycle)
    got = np.empty(n)
    push, latest = avg.push, avg.latest
    xs = x.tolist()
    for k in range(n):
        push(ForceSample(k, xs[k], 0.0))
        got[k] = latest().mean_forward_N
    rel = float(np.max(np.abs(got - oracle) / scale))
    assert rel <= 1e-12, f"max relative error {rel:.2e}"

    # one producer, one reader
    avg = CycleAverager(n_cycle)
    n_stress = 200_000
    stale, reads = [], 0
    done = threading.Event()

    def producer():
        for k in range(n_stress):
            avg.push(ForceSample(float(k), float(k), -float(k)))
        done.set()

    th = threading.Thread(target=producer)
    th.start()
    while not done.is_set():
        if not avg.ready:
            continue
        # staleness: pushes completed before the read that the snapshot does not include
        before = avg.samples_seen
        snap = avg.latest()
        reads += 1
        staleness = before - snap.samples_seen
        if staleness >= n_cycle or staleness > 0 or snap.mean_side_N != -snap.mean_forward_N:
            stale.append((before, snap.samples_seen))
    th.join()
    final = avg.latest()
    assert final.samples_seen == n_stress
    assert final.mean_forward_N == pytest.approx(n_stress - 1 - (n_cycle - 1) / 2, rel=1e-12)
    assert not stale, stale[:5]
    return f"max relative error {rel:.1e}; {reads} concurrent reads, none stale"


@criterion(10, "byte-identical reruns")
def test_criterion_10_determinism(tmp_path):
    for run in ("first", "second"):
        for cmd in ("sweep", "track"):
            proc = subprocess.run(
                [sys.executable, "-m", "finthrust", cmd, "--seed", "42", "--out", str(tmp_path / run)],
                capture_output=True, text=True,
            )
            assert proc.returncode == 0, proc.stderr
    files = sorted(p.name for p in (tmp_path / "first").iterdir())
    assert {"sweep_results.csv", "tracking_trace.csv", "tracking_summary.json"} <= set(files)
    for name in files:
        assert (tmp_path / "first" / name).read_bytes() == (tmp_path / "second" / name).read_bytes(), name
    return f"{len(files)} files identical"


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
