"""Simulated thrust plant: static force map, first-order-plus-dead-time lags,
stroke ripple and seeded sensor noise.

The plant carries two channels. The magnitude channel lags the static thrust
target and the angle channel lags the static force-angle target. Each sample
rotates the (rippled) magnitude by the angle to give forward and side forces.
"""
from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigurationError, OutOfRangeError
from .io import read_csv, write_csv
from .kinematics import NOMINAL_FREQUENCY_HZ, PropulsionParams, Schedule, sample_schedule

TRACE_HEADER = ("t_s", "a_deg", "b_deg", "f_hz", "forward_N", "side_N")


@dataclass(frozen=True)
class FopdtModel:
    """``gain * exp(-dead_time*s) / (time_constant*s + 1)``."""

    gain: float
    time_constant_s: float
    dead_time_s: float = 0.0

    def __post_init__(self):
        if not self.time_constant_s > 0:
            raise ValueError("time constant must be > 0")
        if not self.dead_time_s >= 0:
            raise ValueError("dead time must be >= 0")

    def step_response(self, step_size: float, t):
        return fopdt_step_response(self, step_size, t)

    def __str__(self):
        return f"{self.gain:.6g}*exp(-{self.dead_time_s:.4g}s)/({self.time_constant_s:.4g}s+1)"


# Step-response fits for thrust magnitude (N per deg of amplitude) and
# force angle (deg per deg of offset).
FORWARD_FOPDT = FopdtModel(0.00912, 0.34, 0.28)
ANGLE_FOPDT = FopdtModel(-0.866, 0.13, 0.12)


def fopdt_step_response(m: FopdtModel, step_size: float, t):
    """Response to a step of ``step_size`` applied at ``t = 0``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    shifted = t - m.dead_time_s
    out = np.where(shifted < 0, 0.0, m.gain * step_size * -np.expm1(-np.maximum(shifted, 0.0) / m.time_constant_s))
    return out if out.ndim else float(out)


class MapKind(enum.Enum):
    LINEAR_DECOUPLED = "linear"
    EMPIRICAL_GRID = "grid"


@dataclass(frozen=True)
class StaticForceMap:
    """Steady cycle-averaged thrust magnitude and force angle per stroke.

    Inside the controllable regime (``a >= controllable_min_amplitude_deg`` and
    ``f`` within ``frequency_tolerance_hz`` of the nominal frequency) the
    linear map returns ``forward_gain*a`` and ``angle_gain*b``. Outside it the
    fin pushes backwards with a constant ``degraded_forward_force_N``. A tail
    at rest (``a == 0``) produces no force.

    ``grid_points`` rows are ``a, b, forward, angle`` for the empirical kind.
    """

    kind: MapKind = MapKind.LINEAR_DECOUPLED
    forward_gain_N_per_deg: float = FORWARD_FOPDT.gain
    angle_gain_deg_per_deg: float = ANGLE_FOPDT.gain
    controllable_min_amplitude_deg: float = 20.0
    nominal_frequency_hz: float = NOMINAL_FREQUENCY_HZ
    frequency_tolerance_hz: float = 0.05
    degraded_forward_force_N: float = -0.05
    grid_points: tuple = ()

    def __post_init__(self):
        if self.kind is MapKind.EMPIRICAL_GRID and len(self.grid_points) < 3:
            raise ConfigurationError("empirical map needs at least 3 grid points")

    def controllable(self, a, f):
        a = np.asarray(a, dtype=float)
        f = np.asarray(f, dtype=float)
        return (a >= self.controllable_min_amplitude_deg) & (
            np.abs(f - self.nominal_frequency_hz) <= self.frequency_tolerance_hz
        )

    def _interpolator(self):
        interp = self.__dict__.get("_interp")
        if interp is None:
            from scipy.interpolate import LinearNDInterpolator

            pts = np.asarray(self.grid_points, dtype=float)
            interp = LinearNDInterpolator(pts[:, :2], pts[:, 2:4])
            object.__setattr__(self, "_interp", interp)
        return interp

    def evaluate(self, a, b, f):
        """Vectorised :func:`static_forces`; returns ``(forward, angle)`` arrays."""
        a, b, f = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (a, b, f)))
        ok = self.controllable(a, f)
        forward = np.full(a.shape, self.degraded_forward_force_N)
        angle = np.zeros(a.shape)
        if self.kind is MapKind.LINEAR_DECOUPLED:
            forward = np.where(ok, self.forward_gain_N_per_deg * a, forward)
            angle = np.where(ok, self.angle_gain_deg_per_deg * b, angle)
        elif np.any(ok):
            vals = self._interpolator()(np.column_stack([a[ok], b[ok]]))
            if np.isnan(vals).any():
                raise OutOfRangeError("query outside the empirical grid's convex hull")
            forward[ok] = vals[:, 0]
            angle[ok] = vals[:, 1]
        rest = a == 0
        forward = np.where(rest, 0.0, forward)
        angle = np.where(rest, 0.0, angle)
        return forward, angle


def static_forces(m: StaticForceMap, p: PropulsionParams) -> tuple[float, float]:
    """Steady ``(thrust_N, angle_deg)`` produced by stroke ``p``."""
    fw, ang = m.evaluate(p.amplitude_deg, p.offset_deg, p.frequency_hz)
    return float(fw), float(ang)


def torque_to_force(torque_Nm, bar_length_m: float):
    """Force at the end of the attachment bar from the torque read at the sensor."""
    if not bar_length_m > 0:
        raise ValueError(f"bar length must be > 0, got {bar_length_m}")
    return torque_Nm / bar_length_m


@dataclass(frozen=True)
class ForceSample:
    t: float
    forward_N: float
    side_N: float


@dataclass(frozen=True)
class SensorConfig:
    bar_length_m: float = 0.3
    noise_std_N: float = 0.02
    ripple_fraction: float = 0.5
    sample_rate_hz: float = 100.0
    rng_seed: int | None = 0

    def __post_init__(self):
        if not self.bar_length_m > 0:
            raise ConfigurationError("bar_length_m must be > 0")
        if not self.sample_rate_hz > 0:
            raise ConfigurationError("sample_rate_hz must be > 0")
        if self.noise_std_N < 0 or self.ripple_fraction < 0:
            raise ConfigurationError("noise and ripple must be >= 0")

    @property
    def sample_period_s(self) -> float:
        return 1.0 / self.sample_rate_hz


@dataclass(frozen=True)
class PlantConfig:
    force_map: StaticForceMap = field(default_factory=StaticForceMap)
    forward_time_constant_s: float = FORWARD_FOPDT.time_constant_s
    forward_dead_time_s: float = FORWARD_FOPDT.dead_time_s
    angle_time_constant_s: float = ANGLE_FOPDT.time_constant_s
    angle_dead_time_s: float = ANGLE_FOPDT.dead_time_s
    sensor: SensorConfig = field(default_factory=SensorConfig)

    def noiseless(self, ripple: bool = False) -> "PlantConfig":
        sensor = replace(self.sensor, noise_std_N=0.0, ripple_fraction=self.sensor.ripple_fraction if ripple else 0.0)
        return replace(self, sensor=sensor)


def _delay_samples(dead_time: float, dt: float) -> int:
    n = dead_time / dt
    k = int(round(n))
    if abs(n - k) > 1e-6 * max(1.0, n):
        raise ConfigurationError(f"dead time {dead_time} s is not a whole number of {dt} s steps")
    return k


@dataclass
class PlantTrace:
    t: np.ndarray
    params: np.ndarray  # (n, 3): a, b, f
    forward: np.ndarray
    side: np.ndarray

    def __len__(self):
        return len(self.t)

    def samples(self):
        return [ForceSample(float(t), float(fw), float(sd)) for t, fw, sd in zip(self.t, self.forward, self.side)]

    def to_csv(self, path) -> None:
        rows = (
            (float(t), float(a), float(b), float(f), float(fw), float(sd))
            for t, (a, b, f), fw, sd in zip(self.t, self.params, self.forward, self.side)
        )
        write_csv(path, TRACE_HEADER, rows)

    @classmethod
    def from_csv(cls, path) -> "PlantTrace":
        rows = read_csv(path, TRACE_HEADER)
        arr = np.array([[float(r[k]) for k in TRACE_HEADER] for r in rows], dtype=float).reshape(-1, 6)
        return cls(arr[:, 0], arr[:, 1:4], arr[:, 4], arr[:, 5])

    @classmethod
    def concat(cls, traces) -> "PlantTrace":
        traces = list(traces)
        return cls(
            np.concatenate([tr.t for tr in traces]),
            np.concatenate([tr.params for tr in traces]).reshape(-1, 3),
            np.concatenate([tr.forward for tr in traces]),
            np.concatenate([tr.side for tr in traces]),
        )


class ThrustPlant:
    """Stateful discrete-time plant, advanced in steps of ``dt``.

    The lags are discretised exactly under a zero-order hold and each dead
    time is an integer-sample delay line. ``dt`` must divide the sensor sample
    period and both dead times.

    Not safe for concurrent mutation; hand it between threads only between steps.
    """

    def __init__(self, config: PlantConfig | None = None, dt: float | None = None):
        self.config = config = config or PlantConfig()
        sensor = config.sensor
        self.dt = dt = sensor.sample_period_s if dt is None else float(dt)
        if not dt > 0:
            raise ConfigurationError("dt must be > 0")
        ratio = sensor.sample_period_s / dt
        if abs(ratio - round(ratio)) > 1e-6 * ratio or round(ratio) < 1:
            raise ConfigurationError(f"dt={dt} does not divide the sensor period {sensor.sample_period_s}")
        self._fw_delay = _delay_samples(config.forward_dead_time_s, dt)
        self._ang_delay = _delay_samples(config.angle_dead_time_s, dt)
        self._fw_phi = math.exp(-dt / config.forward_time_constant_s)
        self._ang_phi = math.exp(-dt / config.angle_time_constant_s)
        self._rng = np.random.default_rng(sensor.rng_seed)
        self.reset()

    def reset(self) -> None:
        self.t = 0.0
        self._k = 0
        self._phase = 0.0
        self._fw_state = 0.0
        self._ang_state = 0.0
        self._fw_line = deque([0.0] * self._fw_delay)
        self._ang_line = deque([0.0] * self._ang_delay)

    @property
    def thrust_state(self) -> float:
        """Noise- and ripple-free magnitude channel output."""
        return self._fw_state

    @property
    def angle_state(self) -> float:
        return self._ang_state

    def _delayed(self, line: deque, value: float) -> float:
        if not line:
            return value
        line.append(value)
        return line.popleft()

    def step(self, p: PropulsionParams) -> ForceSample:
        """Hold stroke ``p`` for one ``dt`` and return the sample at the new time."""
        target_fw, target_ang = static_forces(self.config.force_map, p)
        v_fw = self._delayed(self._fw_line, target_fw)
        v_ang = self._delayed(self._ang_line, target_ang)
        self._fw_state = self._fw_phi * self._fw_state + (1.0 - self._fw_phi) * v_fw
        self._ang_state = self._ang_phi * self._ang_state + (1.0 - self._ang_phi) * v_ang
        self._k += 1
        self.t = self._k * self.dt
        self._phase = math.fmod(self._phase + 2.0 * math.pi * p.frequency_hz * self.dt, 2.0 * math.pi)

        sensor = self.config.sensor
        mag = self._fw_state + sensor.ripple_fraction * abs(self._fw_state) * math.sin(2.0 * self._phase)
        th = math.radians(self._ang_state)
        fw, sd = mag * math.cos(th), mag * math.sin(th)
        if sensor.noise_std_N > 0:
            n = self._rng.standard_normal(2)
            fw += sensor.noise_std_N * n[0]
            sd += sensor.noise_std_N * n[1]
        return ForceSample(self.t, fw, sd)

    def simulate(self, params) -> PlantTrace:
        """Advance one ``dt`` per row of ``params`` (``(n, 3)``: a, b, f).

        Vectorised equivalent of calling :meth:`step` once per row.
        """
        params = np.asarray(params, dtype=float).reshape(-1, 3)
        n = len(params)
        if n == 0:
            return PlantTrace(np.empty(0), params, np.empty(0), np.empty(0))
        target_fw, target_ang = self.config.force_map.evaluate(params[:, 0], params[:, 1], params[:, 2])
        v_fw = self._delay_block(self._fw_line, target_fw)
        v_ang = self._delay_block(self._ang_line, target_ang)
        y_fw = self._lag_block(self._fw_phi, self._fw_state, v_fw)
        y_ang = self._lag_block(self._ang_phi, self._ang_state, v_ang)
        self._fw_state, self._ang_state = float(y_fw[-1]), float(y_ang[-1])

        phase = np.empty(n)
        ph = self._phase
        incr = 2.0 * math.pi * params[:, 2] * self.dt
        for i in range(n):
            ph = math.fmod(ph + incr[i], 2.0 * math.pi)
            phase[i] = ph
        self._phase = ph
        k = self._k + np.arange(1, n + 1)
        self._k += n
        t = k * self.dt
        self.t = float(t[-1])

        sensor = self.config.sensor
        mag = y_fw + sensor.ripple_fraction * np.abs(y_fw) * np.sin(2.0 * phase)
        th = np.radians(y_ang)
        fw, sd = mag * np.cos(th), mag * np.sin(th)
        if sensor.noise_std_N > 0:
            noise = self._rng.standard_normal((n, 2))
            fw = fw + sensor.noise_std_N * noise[:, 0]
            sd = sd + sensor.noise_std_N * noise[:, 1]
        return PlantTrace(t, params.copy(), fw, sd)

    def run(self, p: PropulsionParams, n_steps: int) -> PlantTrace:
        row = np.array([[p.amplitude_deg, p.offset_deg, p.frequency_hz]], dtype=float)
        return self.simulate(np.repeat(row, n_steps, axis=0))

    def run_schedule(self, schedule: Schedule, duration_s: float) -> PlantTrace:
        n = int(round(duration_s / self.dt))
        times = self.t + np.arange(n) * self.dt
        return self.simulate(sample_schedule(schedule, times))

    @staticmethod
    def _delay_block(line: deque, u: np.ndarray) -> np.ndarray:
        d = len(line)
        if d == 0:
            return u
        full = np.concatenate([np.fromiter(line, float, d), u])
        tail = full[-d:]
        line.clear()
        line.extend(tail.tolist())
        return full[: len(u)]

    @staticmethod
    def _lag_block(phi: float, y0: float, v: np.ndarray) -> np.ndarray:
        y, _ = lfilter([1.0 - phi], [1.0, -phi], v, zi=[phi * y0])
        return y


def simulate_plant(params, config: PlantConfig | None = None) -> PlantTrace:
    return ThrustPlant(config).simulate(params)
