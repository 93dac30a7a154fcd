"""Discrete PID with conditional anti-windup, static-model feedforward and the
closed-loop force-tracking runner.

The loop ticks once per flapping cycle: it reads the current cycle-averaged
force magnitude, adds the feedback correction to the feedforward amplitude,
clamps the sum to the amplitude limits and holds that stroke until the next
tick.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .cyclestats import CycleAverager, samples_per_cycle
from .errors import ConfigurationError, InversionError
from .io import read_csv, write_csv
from .kinematics import NOMINAL_FREQUENCY_HZ, RANGE_LIMIT_DEG, PropulsionParams
from .plant import FORWARD_FOPDT, ForceSample, ThrustPlant
from .sysid import TERMS, StaticModel, Target

TRACE_HEADER = ("t_s", "reference_N", "measured_N", "ff_term_deg", "fb_term_deg", "commanded_a_deg")


@dataclass(frozen=True)
class ControllerConfig:
    kp: float = 0.0
    ki: float = 0.0
    kd: float = 0.0
    feedforward_enabled: bool = False
    sample_period_s: float = 1.0 / NOMINAL_FREQUENCY_HZ
    a_min: float = 20.0
    a_max: float | None = None  # defaults to 60 - |offset|
    offset_deg: float = 0.0
    anti_windup: bool = True
    name: str = "custom"

    def __post_init__(self):
        if min(self.kp, self.ki, self.kd) < 0:
            raise ConfigurationError("controller gains must be >= 0")
        if not self.sample_period_s > 0:
            raise ConfigurationError("sample_period_s must be > 0")
        if not self.a_min < self.amplitude_max:
            raise ConfigurationError(f"a_min={self.a_min} must be below a_max={self.amplitude_max}")

    @property
    def amplitude_max(self) -> float:
        return RANGE_LIMIT_DEG - abs(self.offset_deg) if self.a_max is None else self.a_max

    @property
    def limits(self) -> tuple[float, float]:
        return self.a_min, self.amplitude_max

    def clamp(self, a: float) -> float:
        lo, hi = self.limits
        return min(max(a, lo), hi)


# Gains as tuned on the physical rig.
RIG_PRESETS = {
    "P": ControllerConfig(kp=100.0, name="P"),
    "P-109": ControllerConfig(kp=109.0, name="P-109"),
    "P-120": ControllerConfig(kp=120.0, name="P-120"),
    "PI": ControllerConfig(kp=80.0, ki=0.12, name="PI"),
    "FF-P": ControllerConfig(kp=10.9, feedforward_enabled=True, name="FF-P"),
    "FF-PI": ControllerConfig(kp=9.0, ki=0.05, feedforward_enabled=True, name="FF-PI"),
}

# Integral gains re-tuned for the simulated plant; the rig's integral gains
# are orders of magnitude too slow for it.
PRESETS = {
    **RIG_PRESETS,
    "PI": ControllerConfig(kp=80.0, ki=80.0, name="PI"),
    "FF-PI": ControllerConfig(kp=9.0, ki=40.0, feedforward_enabled=True, name="FF-PI"),
    "rig-PI": replace(RIG_PRESETS["PI"], name="rig-PI"),
    "rig-FF-PI": replace(RIG_PRESETS["FF-PI"], name="rig-FF-PI"),
}


def get_preset(name: str) -> ControllerConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown controller preset {name!r}; choose from {sorted(PRESETS)}") from None


class PID:
    """Parallel PID on a scalar error with trapezoidal integration.

    ``step`` returns the feedback term. When ``limits`` are set and
    ``anti_windup`` is on, the integrator is held whenever ``offset + output``
    sits beyond a limit and the error would push it further out.
    """

    def __init__(self, kp=0.0, ki=0.0, kd=0.0, limits=(None, None), anti_windup=True):
        self.kp, self.ki, self.kd = kp, ki, kd
        self.limits = limits
        self.anti_windup = anti_windup
        self.reset()

    @classmethod
    def from_config(cls, cfg: ControllerConfig) -> "PID":
        return cls(cfg.kp, cfg.ki, cfg.kd, cfg.limits, cfg.anti_windup)

    def reset(self):
        self.integral = 0.0
        self.prev_error = None

    def step(self, error: float, dt: float, offset: float = 0.0) -> float:
        if not dt > 0:
            raise ValueError("dt must be > 0")
        if self.prev_error is None:
            derivative = 0.0
            area = error * dt
        else:
            derivative = (error - self.prev_error) / dt
            area = 0.5 * (error + self.prev_error) * dt
        candidate = self.integral + area
        out = self.kp * error + self.ki * candidate + (self.kd * derivative if self.kd else 0.0)

        lo, hi = self.limits
        total = offset + out
        winding_up = (hi is not None and total > hi and error > 0) or (lo is not None and total < lo and error < 0)
        if self.anti_windup and winding_up:
            out -= self.ki * area
        else:
            self.integral = candidate
        self.prev_error = error
        return out


def pid_step(state: PID, error_N: float, dt: float, offset: float = 0.0) -> float:
    return state.step(error_N, dt, offset)


def feedforward_amplitude(model: StaticModel, reference_N: float, limits=(20.0, RANGE_LIMIT_DEG)) -> float:
    """Amplitude the static model says produces ``reference_N``, clamped to ``limits``.

    Offset and derivative terms are taken as zero (symmetric, steady stroke).
    """
    if model.target not in (Target.MAGNITUDE, Target.FORWARD):
        raise InversionError(f"cannot invert a {model.target.value} model for thrust")
    nonlinear = [t for t in model.basket if TERMS[t][0] == "a" and TERMS[t][1] > 1]
    if any(model.coefficient(t) for t in nonlinear):
        raise InversionError(f"basket {model.basket} is not linear in amplitude")
    gain = model.forward_gain
    if gain == 0:
        raise InversionError("static model has zero amplitude gain")
    a = (reference_N - model.intercept) / gain
    lo, hi = limits
    return min(max(a, lo), hi)


def half_sine_reference(peak_N: float = 0.5, frequency_hz: float = 0.005) -> Callable[[float], float]:
    """``peak*|sin(2*pi*f*t)|``: one hump every ``1/(2f)`` seconds."""
    def ref(t: float) -> float:
        return peak_N * abs(math.sin(2.0 * math.pi * frequency_hz * t))

    ref.hump_s = 1.0 / (2.0 * frequency_hz)
    return ref


def constant_reference(value_N: float) -> Callable[[float], float]:
    def ref(t: float) -> float:
        return value_N

    return ref


@dataclass
class TrackingTrace:
    t: list = field(default_factory=list)
    reference: list = field(default_factory=list)
    measured: list = field(default_factory=list)
    ff_term: list = field(default_factory=list)
    fb_term: list = field(default_factory=list)
    commanded: list = field(default_factory=list)

    def append(self, t, r, y, ff, fb, a):
        self.t.append(t)
        self.reference.append(r)
        self.measured.append(y)
        self.ff_term.append(ff)
        self.fb_term.append(fb)
        self.commanded.append(a)

    def __len__(self):
        return len(self.t)

    @property
    def error(self) -> np.ndarray:
        return np.asarray(self.reference) - np.asarray(self.measured)

    def mean_abs_error(self, t_start: float = -math.inf, t_end: float = math.inf) -> float:
        t = np.asarray(self.t)
        sel = (t >= t_start) & (t < t_end)
        return float(np.mean(np.abs(self.error[sel]))) if sel.any() else math.nan

    def per_cycle_mae(self, cycle_s: float) -> list[float]:
        n = int(math.ceil((self.t[-1] + 1e-9) / cycle_s)) if self.t else 0
        return [self.mean_abs_error(k * cycle_s, (k + 1) * cycle_s) for k in range(n)]

    def to_csv(self, path) -> None:
        write_csv(path, TRACE_HEADER, zip(self.t, self.reference, self.measured, self.ff_term, self.fb_term, self.commanded))

    @classmethod
    def from_csv(cls, path) -> "TrackingTrace":
        tr = cls()
        for r in read_csv(path, TRACE_HEADER):
            tr.append(*(float(r[k]) for k in TRACE_HEADER))
        return tr


def run_tracking(plant: ThrustPlant, controller: ControllerConfig, reference: Callable[[float], float],
                 duration_s: float, ff_model: StaticModel | None = None,
                 averager: CycleAverager | None = None,
                 frequency_hz: float = NOMINAL_FREQUENCY_HZ) -> TrackingTrace:
    """Close the loop around ``plant`` for ``duration_s`` seconds.

    Control ticks fall on the sensor sample nearest to each multiple of
    ``controller.sample_period_s``, so the mean tick rate is exact.
    """
    sensor = plant.config.sensor
    period = sensor.sample_period_s
    if controller.sample_period_s < period:
        raise ConfigurationError(
            f"control period {controller.sample_period_s} s is shorter than the sensor period {period} s"
        )
    sub = int(round(period / plant.dt))
    if controller.feedforward_enabled and ff_model is None:
        ff_model = StaticModel.linear(plant.config.force_map.forward_gain_N_per_deg)
    if averager is None:
        averager = CycleAverager(samples_per_cycle(sensor.sample_rate_hz, frequency_hz))

    pid = PID.from_config(controller)
    trace = TrackingTrace()
    t0 = plant.t
    n_total = int(round(duration_s / period))
    k_tick = 0
    done = 0
    while done < n_total or k_tick == 0:
        t = t0 + done * period
        r = float(reference(t - t0))
        y = averager.latest().magnitude_N if averager.ready else 0.0
        ff = feedforward_amplitude(ff_model, r, controller.limits) if controller.feedforward_enabled else 0.0
        fb = pid.step(r - y, controller.sample_period_s, offset=ff)
        a = controller.clamp(ff + fb)
        trace.append(t - t0, r, y, ff, fb, a)

        k_tick += 1
        nxt = min(n_total, int(round(k_tick * controller.sample_period_s / period)))
        n = nxt - done
        if n <= 0:
            break
        p = PropulsionParams(a, controller.offset_deg, frequency_hz)
        out = plant.run(p, n * sub)
        for ti, fw, sd in zip(out.t[sub - 1::sub], out.forward[sub - 1::sub], out.side[sub - 1::sub]):
            averager.push(ForceSample(float(ti), float(fw), float(sd)))
        done = nxt
    return trace


def steady_state_p_error(reference_N: float, kp: float, plant_gain: float = FORWARD_FOPDT.gain) -> float:
    """Final-value error of a proportional loop around a static gain."""
    return reference_N / (1.0 + kp * plant_gain)


def summarize(trace: TrackingTrace, controller: ControllerConfig, cycle_s: float | None = None,
              pinned_fraction: float = 0.9) -> dict:
    """Per-cycle MAE, final error and a flag for runs pinned at an amplitude limit."""
    a = np.asarray(trace.commanded)
    lo, hi = controller.limits
    pinned = float(np.mean(np.isclose(a, lo) | np.isclose(a, hi))) if len(a) else 0.0
    err = trace.error
    tail = err[-max(1, len(err) // 10):]
    return {
        "controller": controller.name,
        "ticks": len(trace),
        "mean_abs_error_N": float(np.mean(np.abs(err))) if len(err) else math.nan,
        "steady_state_error_N": float(np.mean(tail)) if len(err) else math.nan,
        "per_cycle_mae_N": trace.per_cycle_mae(cycle_s) if cycle_s else [],
        "pinned_fraction": pinned,
        "unstable": pinned > pinned_fraction,
    }
