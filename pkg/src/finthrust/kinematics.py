"""Tail waveform, amplitude/offset schedules and constrained parameter sweeps.

All angles are in degrees; conversion to radians happens inside the trig calls.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

# Envelope of the identification sweep (servo speed and tank size limits).
OFFSET_LIMIT_DEG = 20.0
RANGE_LIMIT_DEG = 60.0
SPEED_LIMIT = 82.0  # f * a must stay at or below this, deg/s per 2*pi

NOMINAL_FREQUENCY_HZ = 1.4

SWEEP_HEADER = ("test_id", "a_deg", "b_deg", "f_hz")


@dataclass(frozen=True)
class PropulsionParams:
    """Amplitude ``a``, offset ``b`` and frequency ``f`` of the tail stroke."""

    amplitude_deg: float
    offset_deg: float = 0.0
    frequency_hz: float = NOMINAL_FREQUENCY_HZ

    def __post_init__(self):
        if not self.amplitude_deg >= 0:
            raise ValueError(f"amplitude must be >= 0, got {self.amplitude_deg}")
        if not self.frequency_hz > 0:
            raise ValueError(f"frequency must be > 0, got {self.frequency_hz}")

    def in_sweep_envelope(self) -> bool:
        return satisfies_sweep_constraints(self.amplitude_deg, self.offset_deg, self.frequency_hz)


def satisfies_sweep_constraints(a: float, b: float, f: float) -> bool:
    return (
        abs(b) < OFFSET_LIMIT_DEG
        and 0 < a <= RANGE_LIMIT_DEG - abs(b)
        and 0 < f <= SPEED_LIMIT / a
    )


def servo_angle(p: PropulsionParams, t):
    """Servo angle ``b + a*sin(2*pi*f*t)`` in degrees. ``t`` may be an array."""
    return p.offset_deg + p.amplitude_deg * np.sin(2.0 * np.pi * p.frequency_hz * np.asarray(t, dtype=float))


class ScheduleKind(enum.Enum):
    CONSTANT = "constant"
    HALF_WAVE_AMPLITUDE = "half-wave"
    COUPLED = "coupled"
    CUSTOM = "custom"


@dataclass(frozen=True)
class Schedule:
    """Time-varying amplitude/offset program at a fixed stroke frequency.

    ``HALF_WAVE_AMPLITUDE`` sweeps ``a = base + |swing*sin(2*pi*fa*t)|`` with
    ``b = 0``. ``COUPLED`` additionally runs ``b = offset_swing*sin(2*pi*fb*t)``
    and shrinks the amplitude swing by ``b``. ``CUSTOM`` calls ``func(t)``.
    """

    kind: ScheduleKind = ScheduleKind.CONSTANT
    base: PropulsionParams = field(default_factory=lambda: PropulsionParams(20.0))
    amplitude_swing_deg: float = 40.0
    offset_swing_deg: float = 20.0
    amplitude_mod_hz: float = 0.005
    offset_mod_hz: float = 0.002
    func: Callable[[float], PropulsionParams] | None = None

    @classmethod
    def half_wave(cls) -> "Schedule":
        return cls(ScheduleKind.HALF_WAVE_AMPLITUDE, PropulsionParams(20.0, 0.0, NOMINAL_FREQUENCY_HZ),
                   amplitude_mod_hz=0.005)

    @classmethod
    def coupled(cls) -> "Schedule":
        return cls(ScheduleKind.COUPLED, PropulsionParams(20.0, 0.0, NOMINAL_FREQUENCY_HZ),
                   amplitude_mod_hz=0.004, offset_mod_hz=0.002)

    @classmethod
    def constant(cls, p: PropulsionParams) -> "Schedule":
        return cls(ScheduleKind.CONSTANT, p)

    @classmethod
    def custom(cls, func: Callable[[float], PropulsionParams]) -> "Schedule":
        return cls(ScheduleKind.CUSTOM, func=func)


def eval_schedule(s: Schedule, t: float) -> PropulsionParams:
    if t < 0:
        raise ValueError("schedule time must be >= 0")
    if s.kind is ScheduleKind.CONSTANT:
        return s.base
    if s.kind is ScheduleKind.CUSTOM:
        return s.func(t)
    f = s.base.frequency_hz
    if s.kind is ScheduleKind.HALF_WAVE_AMPLITUDE:
        a = s.base.amplitude_deg + abs(s.amplitude_swing_deg * math.sin(2 * math.pi * s.amplitude_mod_hz * t))
        return PropulsionParams(a, s.base.offset_deg, f)
    # COUPLED
    b = s.offset_swing_deg * math.sin(2 * math.pi * s.offset_mod_hz * t)
    a = s.base.amplitude_deg + abs((s.amplitude_swing_deg - b) * math.sin(2 * math.pi * s.amplitude_mod_hz * t))
    return PropulsionParams(a, b, f)


def sample_schedule(s: Schedule, t: Iterable[float]) -> np.ndarray:
    """Evaluate a schedule at many times; returns an ``(n, 3)`` array of ``a, b, f``."""
    rows = [eval_schedule(s, float(ti)) for ti in t]
    return np.array([[p.amplitude_deg, p.offset_deg, p.frequency_hz] for p in rows], dtype=float).reshape(-1, 3)


@dataclass(frozen=True)
class SweepGrid:
    """Grid over offset, amplitude and frequency.

    Offsets are ``k*b_step`` for integer ``k`` and amplitudes ``i*a_step``
    for ``i >= 1``. Frequencies form a geometric ladder ``f_anchor*f_ratio**j``
    bounded below by ``f_min`` and above by the per-amplitude speed limit.
    """

    b_step: float = 5.0
    a_step: float = 5.0
    f_min: float = 0.2
    f_ratio: float = 1.25
    f_anchor: float = NOMINAL_FREQUENCY_HZ

    def __post_init__(self):
        if not (self.b_step > 0 and self.a_step > 0 and self.f_min > 0 and self.f_anchor > 0):
            raise ValueError("sweep grid steps must be strictly positive")
        if not self.f_ratio > 1:
            raise ValueError("f_ratio must be > 1")


def sweep_array(grid: SweepGrid) -> np.ndarray:
    """All admissible grid points as an ``(n, 3)`` array of ``a, b, f`` rows.

    Ordering: offset outermost, then amplitude, then frequency.
    """
    kb = int(math.floor(OFFSET_LIMIT_DEG / grid.b_step))
    b = np.arange(-kb, kb + 1) * grid.b_step
    b = b[np.abs(b) < OFFSET_LIMIT_DEG]
    na = int(math.floor(RANGE_LIMIT_DEG / grid.a_step))
    a = np.arange(1, na + 1) * grid.a_step

    # frequency ladder wide enough for the smallest amplitude
    f_top = SPEED_LIMIT / a[0] if a.size else 0.0
    if a.size == 0 or f_top < grid.f_min:
        return np.empty((0, 3))
    log_r = math.log(grid.f_ratio)
    j_lo = math.floor(math.log(grid.f_min / grid.f_anchor) / log_r) - 1
    j_hi = math.ceil(math.log(f_top / grid.f_anchor) / log_r) + 1
    f = grid.f_anchor * grid.f_ratio ** np.arange(j_lo, j_hi + 1, dtype=float)
    f = f[f >= grid.f_min]

    B, A, F = np.meshgrid(b, a, f, indexing="ij")
    B, A, F = B.ravel(), A.ravel(), F.ravel()
    keep = (np.abs(B) < OFFSET_LIMIT_DEG) & (A > 0) & (A <= RANGE_LIMIT_DEG - np.abs(B)) & (F > 0) & (F <= SPEED_LIMIT / A)
    return np.column_stack([A[keep], B[keep], F[keep]])


def generate_sweep(grid: SweepGrid) -> list[PropulsionParams]:
    return [PropulsionParams(float(a), float(b), float(f)) for a, b, f in sweep_array(grid)]


def write_sweep_csv(path, points: Iterable[PropulsionParams]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for i, p in enumerate(points):
            w.writerow([i, repr(p.amplitude_deg), repr(p.offset_deg), repr(p.frequency_hz)])


def read_sweep_csv(path) -> list[PropulsionParams]:
    from .io import read_csv

    rows = read_csv(path, SWEEP_HEADER)
    return [PropulsionParams(r["a_deg"], r["b_deg"], r["f_hz"]) for r in rows]
