"""Static force-model identification and step-response FOPDT fitting.

Regressor terms are named strings::

    1  a  b  a_dot  b_dot  a_ddot  b_ddot  a^2  b^2  a^3  b^3  a^4  b^4
    a_dot^2  b_dot^2

A *basket* is an ordered tuple of such names; its terms become the columns
of the least-squares design matrix.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, column_or_1d

from .errors import FitQualityError, InputError, InsufficientExcitationError
from .io import write_csv
from .kinematics import PropulsionParams
from .plant import FopdtModel, fopdt_step_response

# term name -> (base signal, power)
TERMS = {
    "1": (None, 0),
    "a": ("a", 1),
    "b": ("b", 1),
    "a_dot": ("a_dot", 1),
    "b_dot": ("b_dot", 1),
    "a_ddot": ("a_ddot", 1),
    "b_ddot": ("b_ddot", 1),
    "a^2": ("a", 2),
    "b^2": ("b", 2),
    "a^3": ("a", 3),
    "b^3": ("b", 3),
    "a^4": ("a", 4),
    "b^4": ("b", 4),
    "a_dot^2": ("a_dot", 2),
    "b_dot^2": ("b_dot", 2),
}
SIGNALS = ("a", "b", "a_dot", "b_dot", "a_ddot", "b_ddot")
DERIVATIVE_SIGNALS = SIGNALS[2:]

DEFAULT_COND_THRESHOLD = 1e12
REPORT_HEADER = ("basket", "target", "mae_percent", "cond_number", "flagged")


class SingularityWarning(UserWarning):
    pass


class Target(enum.Enum):
    FORWARD = "forward"  # cycle-mean forward force, N
    SIDE = "side"  # cycle-mean side force, N
    MAGNITUDE = "magnitude"  # thrust magnitude, N
    ANGLE = "angle"  # force angle, deg


class Basket(tuple):
    """Ordered, duplicate-free tuple of regressor term names."""

    def __new__(cls, terms: Iterable[str] | str):
        if isinstance(terms, str):
            terms = terms.split()
        terms = tuple(terms)
        unknown = [t for t in terms if t not in TERMS]
        if unknown:
            raise InputError(f"unknown basket terms: {unknown}")
        if len(set(terms)) != len(terms):
            raise InputError(f"duplicate terms in basket {terms}")
        if not terms:
            raise InputError("basket is empty")
        return super().__new__(cls, terms)

    def __add__(self, other):
        return Basket(tuple(self) + tuple(Basket(other)))

    def __str__(self):
        return " ".join(self)

    def __repr__(self):
        return f"Basket({str(self)!r})"

    @property
    def needs_derivatives(self) -> bool:
        return any(TERMS[t][0] in DERIVATIVE_SIGNALS for t in self)

    def extends(self, other: "Basket") -> bool:
        return len(self) >= len(other) and tuple(self[: len(other)]) == tuple(other)


FIRST_ORDER = Basket("a b")
FULL_LADDER = (
    FIRST_ORDER,
    FIRST_ORDER + "a_dot b_dot",
    FIRST_ORDER + "a_dot b_dot a_ddot b_ddot",
    FIRST_ORDER + "a_dot b_dot a_ddot b_ddot a^2 b^2",
    FIRST_ORDER + "a_dot b_dot a_ddot b_ddot a^2 b^2 a^3 b^3",
    FIRST_ORDER + "a_dot b_dot a_ddot b_ddot a^2 b^2 a^3 b^3 a^4 b^4",
    Basket("a a_dot a_dot^2 b b_dot b_dot^2"),
)
NESTED_LADDER = FULL_LADDER[:6]


def finite_difference_derivatives(t, a, b) -> dict:
    """First and second time derivatives of ``a`` and ``b`` by central differences."""
    t = np.asarray(t, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(t) < 3:
        raise InputError("need at least 3 samples for finite differences")
    a_dot = np.gradient(a, t, edge_order=2)
    b_dot = np.gradient(b, t, edge_order=2)
    return {
        "a": a,
        "b": b,
        "a_dot": a_dot,
        "b_dot": b_dot,
        "a_ddot": np.gradient(a_dot, t, edge_order=2),
        "b_ddot": np.gradient(b_dot, t, edge_order=2),
    }


def _signals(records) -> dict:
    """Normalise supported record layouts into a dict of 1-D arrays."""
    if isinstance(records, Mapping):
        out = {k: np.asarray(v, dtype=float).ravel() for k, v in records.items() if k in SIGNALS}
    elif len(records) and isinstance(records[0], tuple) and isinstance(records[0][0], PropulsionParams):
        out = {"a": [p.amplitude_deg for p, _ in records], "b": [p.offset_deg for p, _ in records]}
        for k in DERIVATIVE_SIGNALS:
            vals = [d.get(k) if d else None for _, d in records]
            if all(v is not None for v in vals):
                out[k] = vals
        out = {k: np.asarray(v, dtype=float) for k, v in out.items()}
    else:
        arr = check_array(records, ensure_min_samples=1)
        if arr.shape[1] not in (2, 4, 6):
            raise InputError(f"record array must have 2, 4 or 6 columns, got {arr.shape[1]}")
        out = {name: arr[:, i] for i, name in enumerate(SIGNALS[: arr.shape[1]])}
    if "a" not in out or "b" not in out:
        raise InputError("records need amplitude 'a' and offset 'b'")
    n = len(out["a"])
    for k, v in out.items():
        if len(v) != n:
            raise InputError(f"signal {k!r} has {len(v)} rows, expected {n}")
    return out


def build_design_matrix(records, basket) -> np.ndarray:
    """One row per record, one column per basket term.

    ``records`` may be a dict of arrays keyed by signal name, an ``(n, 2|4|6)``
    array with columns ``a, b[, a_dot, b_dot[, a_ddot, b_ddot]]``, or a list
    of ``(PropulsionParams, derivatives-dict-or-None)`` pairs.
    """
    basket = Basket(basket)
    sig = _signals(records)
    n = len(sig["a"])
    cols = []
    for term in basket:
        base, power = TERMS[term]
        if base is None:
            cols.append(np.ones(n))
            continue
        if base not in sig:
            raise InputError(f"term {term!r} needs {base!r} but no derivative data was supplied")
        cols.append(sig[base] ** power)
    return np.column_stack(cols)


@dataclass(frozen=True)
class FitReport:
    mae_percent: float
    condition_number: float
    n_rows: int
    flagged: bool = False
    basket: Basket | None = None
    target: Target | None = None

    def as_row(self):
        return (
            str(self.basket) if self.basket is not None else "",
            self.target.value if self.target is not None else "",
            self.mae_percent,
            self.condition_number,
            self.flagged,
        )


def gram_condition_number(X) -> float:
    """``cond(X^T X)`` from the singular values of ``X``."""
    s = np.linalg.svd(np.asarray(X, dtype=float), compute_uv=False)
    if s.size == 0 or s[-1] == 0:
        return math.inf
    return max(1.0, float((s[0] / s[-1]) ** 2))


def mae_percent(y, y_hat) -> float:
    """Mean absolute error as a percentage of the mean absolute target."""
    y = np.asarray(y, dtype=float)
    err = float(np.mean(np.abs(y - np.asarray(y_hat, dtype=float))))
    scale = float(np.mean(np.abs(y)))
    if scale == 0:
        return 0.0 if err == 0 else math.inf
    return 100.0 * err / scale


def fit_least_squares(X, Y, cond_threshold: float = DEFAULT_COND_THRESHOLD):
    """Minimiser of ``||Y - X c||``, solved by SVD rather than normal equations.

    Returns ``(coefficients, FitReport)``. Ill-conditioned problems still
    return the minimum-norm solution but are flagged and warned about.
    """
    X = check_array(X, ensure_min_samples=1)
    Y = column_or_1d(np.asarray(Y, dtype=float))
    if len(Y) != X.shape[0]:
        raise InputError(f"X has {X.shape[0]} rows but Y has {len(Y)}")
    if X.shape[0] < X.shape[1]:
        raise InputError(f"need at least as many rows ({X.shape[0]}) as columns ({X.shape[1]})")
    coef, *_ = np.linalg.lstsq(X, Y, rcond=None)
    cond = gram_condition_number(X)
    flagged = not cond <= cond_threshold
    if flagged:
        warnings.warn(f"cond(X^T X) = {cond:.3g} exceeds {cond_threshold:.3g}; fit is near-singular",
                      SingularityWarning, stacklevel=2)
    report = FitReport(mae_percent(Y, X @ coef), cond, X.shape[0], flagged)
    return coef, report


@dataclass(frozen=True)
class StaticModel:
    """Fitted linear-in-parameters map from stroke parameters to a force quantity."""

    basket: Basket
    coefficients: tuple
    target: Target = Target.MAGNITUDE

    def __post_init__(self):
        if len(self.coefficients) != len(self.basket):
            raise InputError("coefficient count must equal basket size")

    def predict(self, records) -> np.ndarray:
        return build_design_matrix(records, self.basket) @ np.asarray(self.coefficients, dtype=float)

    def coefficient(self, term: str) -> float:
        return float(self.coefficients[self.basket.index(term)]) if term in self.basket else 0.0

    @property
    def forward_gain(self) -> float:
        return self.coefficient("a")

    @property
    def intercept(self) -> float:
        return self.coefficient("1")

    @classmethod
    def linear(cls, gain: float, intercept: float = 0.0, target: Target = Target.MAGNITUDE) -> "StaticModel":
        if intercept:
            return cls(Basket("1 a"), (intercept, gain), target)
        return cls(Basket("a"), (gain,), target)


class StaticModelRegressor(RegressorMixin, BaseEstimator):
    """Least-squares static force model with the estimator interface.

    Parameters
    ----------
    basket : str or sequence of str
        Regressor terms, e.g. ``"a b"``.
    target : str
        Which force quantity ``y`` holds; informational, carried into reports.
    cond_threshold : float
        ``cond(X^T X)`` above which the fit is flagged as unreliable.
    """

    def __init__(self, basket="a b", target="magnitude", cond_threshold=DEFAULT_COND_THRESHOLD):
        self.basket = basket
        self.target = target
        self.cond_threshold = cond_threshold

    def fit(self, X, y):
        basket = Basket(self.basket)
        target = Target(self.target)
        D = build_design_matrix(X, basket)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SingularityWarning)
            coef, report = fit_least_squares(D, y, self.cond_threshold)
        self.coef_ = coef
        self.report_ = FitReport(report.mae_percent, report.condition_number, report.n_rows,
                                 report.flagged, basket, target)
        self.model_ = StaticModel(basket, tuple(float(c) for c in coef), target)
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict(X)


def basket_ladder(records, y, baskets, cond_threshold: float = DEFAULT_COND_THRESHOLD,
                  target: Target | str = Target.MAGNITUDE, require_nested: bool = False) -> list[FitReport]:
    """Fit each basket to the same data and report MAE and conditioning."""
    baskets = [Basket(b) for b in baskets]
    if len(set(baskets)) != len(baskets):
        raise InputError("basket ladder contains duplicate baskets")
    if require_nested:
        for prev, nxt in zip(baskets, baskets[1:]):
            if not nxt.extends(prev):
                raise InputError(f"basket {nxt} does not extend {prev}")
    target = Target(target)
    sig = _signals(records)
    return [
        StaticModelRegressor(b, target.value, cond_threshold).fit(sig, y).report_
        for b in baskets
    ]


def select_basket(reports: Sequence[FitReport], mae_margin: float = 1.0) -> FitReport:
    """Simplest unflagged basket whose MAE is within ``mae_margin`` points of the best unflagged one."""
    usable = [r for r in reports if not r.flagged and math.isfinite(r.mae_percent)]
    if not usable:
        raise FitQualityError("every basket is flagged as ill-conditioned")
    best = min(r.mae_percent for r in usable)
    close = [r for r in usable if r.mae_percent <= best + mae_margin]
    return min(close, key=lambda r: (len(r.basket) if r.basket else 0, reports.index(r)))


def write_reports_csv(path, reports: Iterable[FitReport]) -> None:
    write_csv(path, REPORT_HEADER, (r.as_row() for r in reports))


# --- step-response identification -----------------------------------------

LOW_LEVEL = 0.283
HIGH_LEVEL = 0.632


def _first_crossing(t, z, level) -> float:
    idx = np.flatnonzero(z >= level)
    if idx.size == 0:
        raise FitQualityError(f"response never reaches {level:.1%} of its final value")
    i = idx[0]
    if i == 0:
        return float(t[0])
    z0, z1 = z[i - 1], z[i]
    return float(t[i - 1] + (level - z0) * (t[i] - t[i - 1]) / (z1 - z0))


def fit_fopdt_from_step(trace, step_size: float, t_step: float = 0.0, noise_floor: float | None = None) -> FopdtModel:
    """Two-point (28.3 % / 63.2 %) FOPDT fit of a recorded step response.

    ``trace`` is a sequence of ``(t, y)`` pairs or an ``(n, 2)`` array. The
    pre-step level is the mean before ``t_step`` and the final level is the
    mean of the last 10 % of samples.
    """
    arr = np.asarray(trace, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 3:
        raise InputError("trace must be an (n, 2) sequence of (t, y) with n >= 3")
    t, y = arr[:, 0], arr[:, 1]
    if np.any(np.diff(t) <= 0):
        raise InputError("trace times must be strictly increasing")
    if step_size == 0:
        raise InsufficientExcitationError("step size is zero")

    pre = y[t < t_step]
    y0 = float(pre.mean()) if pre.size else float(y[0])
    n_tail = max(1, int(math.ceil(0.1 * len(y))))
    tail = y[-n_tail:]
    y_ss = float(tail.mean())
    dy = y_ss - y0

    floor = noise_floor
    if floor is None:
        spread = float(np.std(pre)) if pre.size > 1 else 0.0
        floor = max(3.0 * spread, 1e-12 * max(abs(y0), abs(y_ss), 1.0))
    if abs(dy) <= floor:
        raise InsufficientExcitationError(f"output change {dy:.3g} is below the noise floor {floor:.3g}")
    if float(np.ptp(tail)) > 0.05 * abs(dy):
        raise FitQualityError("response has not settled: final 10% of samples vary by more than 5% of the step")

    after = t >= t_step
    z = (y[after] - y0) / dy
    t_low = _first_crossing(t[after], z, LOW_LEVEL)
    t_high = _first_crossing(t[after], z, HIGH_LEVEL)
    tau = 1.5 * (t_high - t_low)
    if not tau > 0:
        raise FitQualityError("crossing times give a non-positive time constant")
    dead = max(0.0, t_high - tau - t_step)
    return FopdtModel(dy / step_size, tau, dead)


class FopdtStepRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_fopdt_from_step`.

    ``fit(t, y)`` takes sample times and outputs; ``predict(t)`` replays the
    fitted step response, including the pre-step level.
    """

    def __init__(self, step_size=1.0, t_step=0.0):
        self.step_size = step_size
        self.t_step = t_step

    def fit(self, X, y):
        t = column_or_1d(check_array(np.asarray(X, dtype=float).reshape(len(y), -1)))
        y = column_or_1d(np.asarray(y, dtype=float))
        self.model_ = fit_fopdt_from_step(np.column_stack([t, y]), self.step_size, self.t_step)
        pre = y[t < self.t_step]
        self.baseline_ = float(pre.mean()) if pre.size else float(y[0])
        self.gain_ = self.model_.gain
        self.time_constant_s_ = self.model_.time_constant_s
        self.dead_time_s_ = self.model_.dead_time_s
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        t = np.asarray(X, dtype=float).ravel() - self.t_step
        return self.baseline_ + fopdt_step_response(self.model_, self.step_size, np.maximum(t, 0.0))
