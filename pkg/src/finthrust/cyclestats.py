"""Rolling per-cycle force averages.

One producer pushes sensor samples; any number of readers call
:meth:`CycleAverager.latest`. Each push publishes a new immutable
:class:`CycleAverage` by a single reference assignment, so readers never see
a half-written snapshot and the producer never waits for them.
"""
from __future__ import annotations

import math
import queue
import threading
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .errors import NotReadyError, OrderingError
from .io import write_csv
from .plant import ForceSample

AVERAGE_HEADER = ("cycle_index", "mean_forward_N", "mean_side_N", "magnitude_N", "angle_deg")


def samples_per_cycle(sample_rate_hz: float, flap_frequency_hz: float) -> int:
    """``round(sample_rate / flap_frequency)`` with halves rounded up, at least 1."""
    if not (sample_rate_hz > 0 and flap_frequency_hz > 0):
        raise ValueError("rates must be > 0")
    ratio = Decimal(repr(sample_rate_hz)) / Decimal(repr(flap_frequency_hz))
    return max(1, int(ratio.quantize(Decimal(1), rounding=ROUND_HALF_UP)))


@dataclass(frozen=True)
class CycleAverage:
    mean_forward_N: float
    mean_side_N: float
    magnitude_N: float
    angle_deg: float
    cycle_index: int
    samples_seen: int = 0
    window: int = 0
    t: float = 0.0

    @classmethod
    def from_means(cls, forward: float, side: float, **kw) -> "CycleAverage":
        return cls(forward, side, math.hypot(forward, side), math.degrees(math.atan2(side, forward)), **kw)

    def as_row(self):
        return (self.cycle_index, self.mean_forward_N, self.mean_side_N, self.magnitude_N, self.angle_deg)


class CycleAverager:
    """Sliding mean over the last ``n_cycle`` samples.

    Running sums are resynchronised with an exact ``math.fsum`` every time the
    ring wraps, so rounding drift is bounded by one window of updates.
    """

    def __init__(self, n_cycle: int):
        if int(n_cycle) < 1:
            raise ValueError("n_cycle must be >= 1")
        self.n_cycle = int(n_cycle)
        self._fw = [0.0] * self.n_cycle
        self._sd = [0.0] * self.n_cycle
        self._pos = 0
        self._sum_fw = 0.0
        self._sum_sd = 0.0
        self._last_t = -math.inf
        self.samples_seen = 0
        self._latest: CycleAverage | None = None

    @classmethod
    def for_rates(cls, sample_rate_hz: float, flap_frequency_hz: float) -> "CycleAverager":
        return cls(samples_per_cycle(sample_rate_hz, flap_frequency_hz))

    def push(self, sample: ForceSample) -> None:
        if sample.t < self._last_t:
            raise OrderingError(f"sample at t={sample.t} arrived after t={self._last_t}")
        self._last_t = sample.t
        i = self._pos
        fw, sd = float(sample.forward_N), float(sample.side_N)
        self._sum_fw += fw - self._fw[i]
        self._sum_sd += sd - self._sd[i]
        self._fw[i] = fw
        self._sd[i] = sd
        self._pos = i + 1
        if self._pos == self.n_cycle:
            self._pos = 0
            self._sum_fw = math.fsum(self._fw)
            self._sum_sd = math.fsum(self._sd)
        seen = self.samples_seen + 1
        count = min(seen, self.n_cycle)
        self._latest = CycleAverage.from_means(
            self._sum_fw / count,
            self._sum_sd / count,
            cycle_index=(seen - 1) // self.n_cycle,
            samples_seen=seen,
            window=count,
            t=sample.t,
        )
        # counter moves only after the snapshot is visible
        self.samples_seen = seen

    push_sample = push

    def latest(self) -> CycleAverage:
        snap = self._latest
        if snap is None:
            raise NotReadyError("no samples pushed yet")
        return snap

    @property
    def ready(self) -> bool:
        return self._latest is not None


def push_sample(avg: CycleAverager, s: ForceSample) -> None:
    avg.push(s)


def latest(avg: CycleAverager) -> CycleAverage:
    return avg.latest()


class AveragingWorker(threading.Thread):
    """Background sample-ingestion role.

    Drains ``source`` (a :class:`queue.Queue` of :class:`ForceSample`, ``None``
    as the end marker) into a :class:`CycleAverager`. The control loop only
    ever talks to it through :meth:`latest`.
    """

    def __init__(self, averager: CycleAverager, source: "queue.Queue[ForceSample | None]"):
        super().__init__(daemon=True)
        self.averager = averager
        self.source = source
        self.error: BaseException | None = None

    def run(self):
        try:
            while True:
                s = self.source.get()
                if s is None:
                    break
                self.averager.push(s)
        except BaseException as exc:  # surfaced to the owner via .error
            self.error = exc

    def latest(self) -> CycleAverage:
        return self.averager.latest()


def rolling_mean(x, n_cycle: int) -> np.ndarray:
    """Mean of the last ``min(k+1, n_cycle)`` values at every index ``k``."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n == 0:
        return np.empty(0)
    w = min(n_cycle, n)
    out = np.empty(n)
    head = np.cumsum(x[:w]) / np.arange(1, w + 1)
    out[:w] = head
    if n > w:
        # full windows summed directly, no running-sum drift
        out[w - 1:] = np.lib.stride_tricks.sliding_window_view(x, w).mean(axis=1)
    return out


class CycleMeanTransformer(TransformerMixin, BaseEstimator):
    """Batch version of :class:`CycleAverager` for recorded traces.

    ``transform`` maps an ``(n, 2)`` array of forward/side forces to
    ``(n, 4)`` columns: mean forward, mean side, magnitude, angle (deg).
    """

    def __init__(self, sample_rate_hz=100.0, flap_frequency_hz=1.4):
        self.sample_rate_hz = sample_rate_hz
        self.flap_frequency_hz = flap_frequency_hz

    def fit(self, X, y=None):
        check_array(X)
        self.n_cycle_ = samples_per_cycle(self.sample_rate_hz, self.flap_frequency_hz)
        return self

    def transform(self, X):
        X = check_array(X)
        if X.shape[1] != 2:
            raise ValueError(f"expected 2 columns (forward, side), got {X.shape[1]}")
        n = samples_per_cycle(self.sample_rate_hz, self.flap_frequency_hz)
        fw = rolling_mean(X[:, 0], n)
        sd = rolling_mean(X[:, 1], n)
        return np.column_stack([fw, sd, np.hypot(fw, sd), np.degrees(np.arctan2(sd, fw))])


def write_averages_csv(path, averages) -> None:
    write_csv(path, AVERAGE_HEADER, (a.as_row() for a in averages))
