import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from finthrust.errors import FitQualityError, InputError, InsufficientExcitationError
from finthrust.kinematics import PropulsionParams, Schedule, sample_schedule
from finthrust.plant import ANGLE_FOPDT, FORWARD_FOPDT, FopdtModel, StaticForceMap, fopdt_step_response
from finthrust.sysid import (
    NESTED_LADDER,
    FULL_LADDER,
    Basket,
    FitReport,
    FopdtStepRegressor,
    SingularityWarning,
    StaticModel,
    StaticModelRegressor,
    basket_ladder,
    build_design_matrix,
    finite_difference_derivatives,
    fit_fopdt_from_step,
    fit_least_squares,
    gram_condition_number,
    mae_percent,
    select_basket,
    write_reports_csv,
)


def schedule_records(schedule, duration, dt=1.0):
    t = np.arange(0, duration, dt)
    arr = sample_schedule(schedule, t)
    d = finite_difference_derivatives(t, arr[:, 0], arr[:, 1])
    return t, arr, d


class TestBasket:
    def test_parse(self):
        assert Basket("a b a_dot") == ("a", "b", "a_dot")
        assert str(Basket(["1", "a"])) == "1 a"

    @pytest.mark.parametrize("text", ["a a", "a c", "", "a^5"])
    def test_invalid(self, text):
        with pytest.raises(InputError):
            Basket(text)

    def test_table_ladder(self):
        assert len(FULL_LADDER) == 7
        assert FULL_LADDER[0] == ("a", "b")
        assert set(FULL_LADDER[-1]) == {"a", "a_dot", "a_dot^2", "b", "b_dot", "b_dot^2"}
        for prev, nxt in zip(NESTED_LADDER, NESTED_LADDER[1:]):
            assert nxt.extends(prev)
        assert not FULL_LADDER[-1].extends(FULL_LADDER[-2])

    def test_needs_derivatives(self):
        assert not Basket("1 a b a^2").needs_derivatives
        assert Basket("a b_ddot").needs_derivatives


class TestDesignMatrix:
    def test_columns(self):
        recs = {"a": [1.0, 2.0], "b": [3.0, 4.0], "a_dot": [0.5, 0.25]}
        X = build_design_matrix(recs, "1 a b^2 a_dot^2")
        np.testing.assert_array_equal(X, [[1, 1, 9, 0.25], [1, 2, 16, 0.0625]])

    def test_params_records(self):
        recs = [(PropulsionParams(30, 5), None), (PropulsionParams(40, -5), None)]
        np.testing.assert_array_equal(build_design_matrix(recs, "a b"), [[30, 5], [40, -5]])

    def test_array_records(self):
        X = build_design_matrix(np.array([[1.0, 2.0, 3.0, 4.0]]), "b_dot a")
        np.testing.assert_array_equal(X, [[4.0, 1.0]])

    def test_missing_derivatives(self):
        with pytest.raises(InputError):
            build_design_matrix(np.ones((3, 2)), "a a_dot")

    def test_bad_shape(self):
        with pytest.raises(InputError):
            build_design_matrix(np.ones((3, 3)), "a")

    def test_derivatives_exact_for_quadratics(self):
        t = np.linspace(0, 10, 41)
        d = finite_difference_derivatives(t, t ** 2, 3 * t)
        np.testing.assert_allclose(d["a_dot"], 2 * t, atol=1e-10)
        np.testing.assert_allclose(d["a_ddot"], 2.0, atol=1e-9)
        np.testing.assert_allclose(d["b_dot"], 3.0, atol=1e-12)


class TestLeastSquares:
    def test_exact_recovery(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(50, 3))
        c = np.array([1.5, -2.0, 0.25])
        coef, rep = fit_least_squares(X, X @ c)
        np.testing.assert_allclose(coef, c, atol=1e-12)
        assert rep.mae_percent < 1e-10 and not rep.flagged

    def test_condition_number_oracle(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(30, 4))
        assert gram_condition_number(X) == pytest.approx(np.linalg.cond(X.T @ X), rel=1e-8)

    def test_singular_flagged_with_warning(self):
        X = np.column_stack([np.arange(10.0), 2 * np.arange(10.0)])
        with pytest.warns(SingularityWarning):
            _, rep = fit_least_squares(X, np.arange(10.0))
        assert rep.flagged

    def test_underdetermined(self):
        with pytest.raises(InputError):
            fit_least_squares(np.ones((2, 3)), np.ones(2))

    def test_mae_percent(self):
        assert mae_percent([1, -1, 2], [1, -1, 2]) == 0.0
        assert mae_percent([2, -2], [1, -1]) == pytest.approx(50.0)
        assert mae_percent([0, 0], [0, 0]) == 0.0

    @settings(max_examples=50, deadline=None)
    @given(
        c=st.lists(st.floats(-10, 10), min_size=2, max_size=2),
        seed=st.integers(0, 2 ** 32 - 1),
    )
    def test_recovers_any_linear_model(self, c, seed):
        rng = np.random.default_rng(seed)
        recs = {"a": rng.uniform(20, 60, 40), "b": rng.uniform(-20, 20, 40)}
        y = c[0] * recs["a"] + c[1] * recs["b"]
        reg = StaticModelRegressor("a b").fit(recs, y)
        np.testing.assert_allclose(reg.coef_, c, atol=1e-9 * (1 + max(map(abs, c))))


class TestRegressor:
    def test_sklearn_params(self):
        reg = StaticModelRegressor(basket="1 a", target="forward")
        assert clone(reg).get_params() == {"basket": "1 a", "target": "forward", "cond_threshold": 1e12}

    def test_half_wave_gain_within_two_percent(self):
        """Magnitude data from the half-wave schedule with sensor noise."""
        t = np.arange(0, 200, 1.0)
        arr = sample_schedule(Schedule.half_wave(), t)
        fmap = StaticForceMap()
        for seed in range(5):
            rng = np.random.default_rng(seed)
            mag, _ = fmap.evaluate(arr[:, 0], arr[:, 1], arr[:, 2])
            y = mag + rng.normal(0, 0.01, len(t))
            reg = StaticModelRegressor("a").fit({"a": arr[:, 0], "b": arr[:, 1]}, y)
            assert reg.model_.forward_gain == pytest.approx(0.00912, rel=0.02)

    def test_predict_and_score(self):
        recs = {"a": np.arange(20.0, 60.0), "b": np.zeros(40)}
        y = 0.00912 * recs["a"]
        reg = StaticModelRegressor("a b").fit(recs, y)
        np.testing.assert_allclose(reg.predict(recs), y, atol=1e-14)
        assert reg.report_.basket == ("a", "b")

    def test_static_model_linear(self):
        m = StaticModel.linear(0.01, 0.05)
        assert m.forward_gain == 0.01 and m.intercept == 0.05
        assert m.predict({"a": [10.0], "b": [0.0]})[0] == pytest.approx(0.15)


class TestLadder:
    def coupled_data(self, noise=0.0, seed=0):
        _, arr, d = schedule_records(Schedule.coupled(), 1000)
        mag, _ = StaticForceMap().evaluate(arr[:, 0], arr[:, 1], arr[:, 2])
        return d, mag + np.random.default_rng(seed).normal(0, noise, len(mag))

    def test_nested_ladder_mae_on_schedule_data(self):
        d, y = self.coupled_data(noise=0.01)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SingularityWarning)
            reps = basket_ladder(d, y, NESTED_LADDER, require_nested=True)
        maes = [r.mae_percent for r in reps]
        assert all(b <= a + 1e-9 for a, b in zip(maes, maes[1:]))

    def test_select_picks_first_order_on_linear_data(self):
        d, y = self.coupled_data(noise=0.01)
        reps = basket_ladder(d, y, FULL_LADDER)
        assert select_basket(reps).basket == ("a", "b")

    def test_duplicate_baskets_rejected(self):
        d, y = self.coupled_data()
        with pytest.raises(InputError):
            basket_ladder(d, y, ["a b", "a b"])

    def test_not_nested_rejected(self):
        d, y = self.coupled_data()
        with pytest.raises(InputError):
            basket_ladder(d, y, ["a b", "a"], require_nested=True)

    def test_selection_rule(self):
        reps = [
            FitReport(5.0, 10, 100, False, Basket("a")),
            FitReport(4.5, 10, 100, False, Basket("a b")),
            FitReport(1.0, 1e14, 100, True, Basket("a b a^2")),
            FitReport(3.9, 10, 100, False, Basket("a b a^2 b^2")),
        ]
        assert select_basket(reps).basket == ("a", "b")
        assert select_basket(reps, mae_margin=0.1).basket == ("a", "b", "a^2", "b^2")

    def test_all_flagged(self):
        with pytest.raises(FitQualityError):
            select_basket([FitReport(1.0, 1e20, 10, True, Basket("a"))])

    def test_reports_csv(self, tmp_path):
        d, y = self.coupled_data()
        path = tmp_path / "r.csv"
        write_reports_csv(path, basket_ladder(d, y, ["a", "a b"]))
        lines = path.read_text().splitlines()
        assert lines[0] == "basket,target,mae_percent,cond_number,flagged"
        assert lines[1].startswith("a,magnitude,")


class TestStepFit:
    def trace(self, model, step, t_end=10.0, dt=0.01, noise=0.0, seed=0, t_step=0.0):
        t = np.arange(0, t_end, dt)
        y = fopdt_step_response(model, step, np.clip(t - t_step, 0, None))
        return np.column_stack([t, y + np.random.default_rng(seed).normal(0, noise, len(t))])

    @pytest.mark.parametrize("model,step", [(FORWARD_FOPDT, 40), (ANGLE_FOPDT, -20)])
    def test_recovers_reference_models(self, model, step):
        fit = fit_fopdt_from_step(self.trace(model, step, dt=0.001), step)
        assert fit.gain == pytest.approx(model.gain, rel=1e-3)
        assert fit.time_constant_s == pytest.approx(model.time_constant_s, rel=0.01)
        assert fit.dead_time_s == pytest.approx(model.dead_time_s, abs=0.005)

    @settings(max_examples=40, deadline=None)
    @given(k=st.floats(0.1, 5), tau=st.floats(0.05, 1.0), dead=st.floats(0, 0.5))
    def test_recovers_synthetic_models(self, k, tau, dead):
        m = FopdtModel(k, tau, dead)
        tr = self.trace(m, 1.0, t_end=dead + 12 * tau, dt=tau / 200)
        fit = fit_fopdt_from_step(tr, 1.0)
        assert fit.gain == pytest.approx(k, rel=1e-4)
        assert fit.time_constant_s == pytest.approx(tau, rel=0.02)
        assert fit.dead_time_s == pytest.approx(dead, abs=0.02 * tau)

    def test_step_time_offset(self):
        fit = fit_fopdt_from_step(self.trace(FORWARD_FOPDT, 40, dt=0.001, t_step=2.0, t_end=12), 40, t_step=2.0)
        assert fit.dead_time_s == pytest.approx(0.28, abs=0.005)

    def test_zero_step(self):
        with pytest.raises(InsufficientExcitationError):
            fit_fopdt_from_step(self.trace(FORWARD_FOPDT, 40), 0.0)

    def test_flat_response(self):
        t = np.arange(0, 5, 0.01)
        with pytest.raises(InsufficientExcitationError):
            fit_fopdt_from_step(np.column_stack([t, np.full_like(t, 0.2)]), 10.0, t_step=1.0)

    def test_unsettled(self):
        tr = self.trace(FopdtModel(1.0, 5.0, 0.0), 1.0, t_end=3.0)
        with pytest.raises(FitQualityError):
            fit_fopdt_from_step(tr, 1.0)

    def test_bad_input(self):
        with pytest.raises(InputError):
            fit_fopdt_from_step([[0, 1], [0, 2], [1, 3]], 1.0)
        with pytest.raises(InputError):
            fit_fopdt_from_step([1, 2, 3], 1.0)

    def test_estimator_wrapper(self):
        tr = self.trace(ANGLE_FOPDT, -20, dt=0.001, t_step=1.0, t_end=6.0)
        reg = FopdtStepRegressor(step_size=-20, t_step=1.0).fit(tr[:, 0], tr[:, 1])
        assert reg.gain_ == pytest.approx(-0.866, rel=1e-3)
        assert np.max(np.abs(reg.predict(tr[:, 0]) - tr[:, 1])) < 0.1
        assert clone(reg).get_params() == {"step_size": -20, "t_step": 1.0}


@pytest.mark.parametrize(
    "basket,recs,row",
    [
        ("1 a b", [(PropulsionParams(40, -10), None)], [1, 40, -10]),
        ("a^2 b^2", [(PropulsionParams(3, 2), None)], [9, 4]),
        ("a a_dot", [(PropulsionParams(20, 0), {"a_dot": 0.0, "b_dot": 0.0, "a_ddot": 0.0, "b_ddot": 0.0})], [20, 0]),
    ],
)
def test_design_rows(basket, recs, row):
    np.testing.assert_array_equal(build_design_matrix(recs, basket), [row])


def test_exact_two_term_model():
    rng = np.random.default_rng(3)
    recs = {"a": rng.uniform(-50, 50, 50), "b": rng.uniform(-50, 50, 50)}
    coef, rep = fit_least_squares(build_design_matrix(recs, "a b"), 2 * recs["a"] + 3 * recs["b"])
    np.testing.assert_allclose(coef, [2, 3], atol=1e-9)
    assert rep.mae_percent == pytest.approx(0.0, abs=1e-9)


def test_orthonormal_columns_have_unit_condition():
    q, _ = np.linalg.qr(np.random.default_rng(4).normal(size=(20, 5)))
    assert gram_condition_number(q) == pytest.approx(1.0)


@pytest.mark.parametrize("model,step", [(FORWARD_FOPDT, 40), (ANGLE_FOPDT, -20)])
def test_step_fit_resynthesis(model, step):
    t = np.arange(0, 8, 0.01)
    y = fopdt_step_response(model, step, t)
    fit = fit_fopdt_from_step(np.column_stack([t, y]), step)
    y2 = fopdt_step_response(fit, step, t)
    assert np.max(np.abs(y2 - y)) < 0.01 * abs(model.gain * step)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(30, 200))
def test_nested_baskets_residual_and_conditioning_monotone(seed, n):
    """Least squares guarantees the squared residual (not MAE) never grows as columns are added."""
    rng = np.random.default_rng(seed)
    recs = {"a": rng.uniform(0, 60, n), "b": rng.uniform(-20, 20, n)}
    for k in ("a_dot", "b_dot", "a_ddot", "b_ddot"):
        recs[k] = rng.normal(0, 1, n)
    y = rng.normal(0, 1, n)
    rss, cond = [], []
    for b in NESTED_LADDER[:5]:
        X = build_design_matrix(recs, b)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SingularityWarning)
            coef, rep = fit_least_squares(X, y)
        rss.append(float(np.sum((y - X @ coef) ** 2)))
        cond.append(rep.condition_number)
    assert all(r2 <= r1 * (1 + 1e-9) for r1, r2 in zip(rss, rss[1:]))
    assert all(c2 >= c1 * (1 - 1e-9) for c1, c2 in zip(cond, cond[1:]))
