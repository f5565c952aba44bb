import math

import numpy as np
import pytest
from scipy.interpolate import BSpline

from skilldecomp.errors import DegenerateSequenceError, SkillDecompError, UndefinedAutocorrelationError
from skilldecomp.spline import (
    SplineBasis,
    SplineOptions,
    _Problem,
    ar1_whiten,
    diagnostics,
    dump_fits,
    estimate_ar1,
    fit_player_spline,
    load_fits,
    predict_mean,
    pseudo_r2,
)

from conftest import ar1_series


def _t(n):
    return np.arange(n) / (n - 1)


@pytest.mark.parametrize("start", [None, (-2.0, -0.5), (0.0, 0.0), (1.0, 0.8)])
def test_exact_line_is_reproduced(start):
    t = _t(60)
    y = 70 + 2 * t
    fit = fit_player_spline(t, y, SplineOptions(start=start))
    assert np.max(np.abs(fit.fitted_values - y)) <= 1e-8
    assert fit.linear_flag


def test_constant_scores():
    t = _t(30)
    y = np.full(30, 71.0)
    fit = fit_player_spline(t, y)
    np.testing.assert_allclose(fit.fitted_values, 71.0, atol=1e-10)
    assert diagnostics(fit, y).residual_sd == pytest.approx(0.0, abs=1e-12)


def test_short_series_fall_back_to_a_line():
    fit = fit_player_spline([0, 0.5, 1], [70, 74, 71])
    assert fit.linear_flag and fit.phi == 0.0
    with pytest.raises(DegenerateSequenceError):
        fit_player_spline([0.0], [70.0])


def test_nonfinite_input_rejected():
    with pytest.raises(SkillDecompError):
        fit_player_spline(_t(10), np.r_[np.full(9, 70.0), np.nan])


def test_u_shaped_truth_is_recovered():
    """Synthetic oracle: mean RMSE over 20 seeds of h(t)=69+4(t-0.5)^2, sd 2.5, phi 0.1."""
    t = _t(200)
    h = 69 + 4 * (t - 0.5) ** 2
    basis = SplineBasis(t, 200)
    rmse = []
    for seed in range(20):
        y = h + ar1_series(np.random.default_rng(seed), 200, 0.1, 2.5)
        fit = fit_player_spline(t, y, basis=basis)
        rmse.append(np.sqrt(np.mean((fit.fitted_values - h) ** 2)))
    assert np.mean(rmse) <= 0.5


def test_interpolating_fit_hits_observations():
    rng = np.random.default_rng(3)
    t = _t(25)
    y = 70 + rng.normal(0, 2, 25)
    fit = fit_player_spline(t, y, SplineOptions(smoothing_parameter=1e-12, phi=0.0))
    np.testing.assert_allclose(predict_mean(fit, t), y, atol=1e-4)


def test_predict_on_a_line():
    fit = fit_player_spline(_t(20), 70 + 2 * _t(20))
    assert predict_mean(fit, 0.25) == pytest.approx(70.5, abs=1e-10)


def test_mean_prediction_equals_mean_fitted_value():
    t = _t(200)
    y = 69 + 4 * (t - 0.5) ** 2 + ar1_series(np.random.default_rng(0), 200, 0.1, 2.5)
    fit = fit_player_spline(t, y)
    assert np.mean(predict_mean(fit, t)) == pytest.approx(np.mean(fit.fitted_values), abs=1e-9)


def test_linear_beyond_the_boundary():
    t = _t(80)
    y = 70 + np.sin(5 * t) + ar1_series(np.random.default_rng(1), 80, 0.0, 0.2)
    fit = fit_player_spline(t, y)
    far = predict_mean(fit, np.array([1.2, 1.4, 1.6, -0.2, -0.4, -0.6]))
    assert far[0] - 2 * far[1] + far[2] == pytest.approx(0.0, abs=1e-9)
    assert far[3] - 2 * far[4] + far[5] == pytest.approx(0.0, abs=1e-9)


def test_fits_are_bit_reproducible():
    t = _t(120)
    y = 70 + t + ar1_series(np.random.default_rng(5), 120, 0.2, 2.5)
    a, b = fit_player_spline(t, y), fit_player_spline(t, y)
    assert np.array_equal(a.coefficients, b.coefficients)
    assert (a.phi, a.log_smoothing_parameter) == (b.phi, b.log_smoothing_parameter)


def test_effective_df_decreases_with_smoothing():
    t = _t(100)
    y = 70 + np.sin(4 * t) + ar1_series(np.random.default_rng(2), 100, 0.0, 1.0)
    edf = [fit_player_spline(t, y, SplineOptions(smoothing_parameter=a, phi=0.2)).effective_df
           for a in (1e-6, 1e-3, 1.0, 10.0, 1e3)]
    assert all(b <= a + 1e-9 for a, b in zip(edf, edf[1:]))
    assert edf[0] > 20 and edf[-1] == pytest.approx(2.0, abs=1e-3)
    stiff = fit_player_spline(t, y, SplineOptions(smoothing_parameter=1e5, phi=0.2))
    assert stiff.effective_df == pytest.approx(2.0, abs=1e-2)


@pytest.mark.parametrize("la", [-6.0, 0.0, 2.5])
def test_affine_data_fit_exactly_at_any_smoothing(la):
    t = _t(50)
    y = 68.5 - 3 * t
    p = _Problem(SplineBasis(t, 200), y)
    _, coef, _ = p.solve(la, 0.3)
    fitted = p.basis.B @ coef
    np.testing.assert_allclose(fitted, y, atol=1e-8)


def _dense_reml(t, y, log_alpha_rel, phi):
    """-2 REML log likelihood (sigma profiled) of the mixed model equivalent to the penalised fit.

    Coefficients c = N beta + L u with L'Omega L = I and u ~ N(0, sigma^2/alpha);
    errors have correlation phi^|i-j|.  Omega is integrated numerically.
    """
    basis = SplineBasis(t, 200)
    kv = basis.knot_vector
    p = basis.p
    n = t.size
    alpha = n * 10.0**log_alpha_rel
    B = BSpline.design_matrix(t, kv, 3).toarray()
    # B'' is piecewise linear, so Simpson's rule on each knot interval is exact
    d2 = BSpline(kv, np.eye(p), 3).derivative(2)
    om = np.zeros((p, p))
    for a, b in zip(basis.breaks[:-1], basis.breaks[1:]):
        eps = 1e-12 * (b - a)
        fa, fm, fb = d2(a + eps), d2((a + b) / 2), d2(b - eps)
        om += (b - a) / 6 * (np.outer(fa, fa) + 4 * np.outer(fm, fm) + np.outer(fb, fb))
    w, U = np.linalg.eigh(om)
    keep = w > 1e-8 * w.max()
    L = U[:, keep] / np.sqrt(w[keep])
    X = B @ U[:, ~keep]
    R = phi ** np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    V = R + (B @ L) @ (B @ L).T / alpha
    Vi = np.linalg.inv(V)
    XtVi = X.T @ Vi
    P = Vi - XtVi.T @ np.linalg.solve(XtVi @ X, XtVi)
    s2 = float(y @ P @ y) / (n - 2)
    return (n - 2) * math.log(s2) + np.linalg.slogdet(V)[1] + np.linalg.slogdet(XtVi @ X)[1]


def test_criterion_matches_dense_reml_up_to_a_constant():
    rng = np.random.default_rng(7)
    n = 40
    t = (np.arange(n) + rng.uniform(0, 0.5, n)) / n
    y = 70 + np.cos(3 * t) + ar1_series(rng, n, 0.3, 1.0)
    prob = _Problem(SplineBasis(t, 200), y)
    points = [(-3.0, 0.0), (-1.0, 0.3), (0.5, -0.4), (2.0, 0.7)]
    diffs = [prob.criterion(x) - _dense_reml(t, y, *x) for x in points]
    assert np.ptp(diffs) < 1e-5


def test_finite_criterion_approaches_the_line_limit():
    t = _t(80)
    y = 70 + ar1_series(np.random.default_rng(4), 80, 0.1, 2.5)
    prob = _Problem(SplineBasis(t, 200), y)
    line = prob.solve_line(0.1)[0]
    gaps = [abs(prob.criterion((la, 0.1)) - line) for la in (1.0, 2.0, 3.0)]
    assert gaps[-1] < 0.05


def test_estimate_ar1_alternating_clamps():
    x = np.tile([1.0, -1.0], 50)
    assert estimate_ar1(x) == pytest.approx(-0.99)


def test_estimate_ar1_white_noise():
    """Monte Carlo: |phi_hat| <= 0.05 in at least 95% of 200 white-noise series of length 2000."""
    hits = [abs(estimate_ar1(np.random.default_rng(s).standard_normal(2000))) <= 0.05 for s in range(200)]
    assert np.mean(hits) >= 0.95


def test_estimate_ar1_recovers_phi():
    est = [estimate_ar1(ar1_series(np.random.default_rng(s), 2000, 0.3, 1.0)) for s in range(50)]
    assert 0.25 <= np.mean(est) <= 0.35


def test_estimate_ar1_zero_variance():
    with pytest.raises(UndefinedAutocorrelationError):
        estimate_ar1(np.ones(10))


def test_whitening_with_fitted_phi_removes_lag_one_dependence():
    t = _t(2000)
    h = 70 + np.sin(2 * np.pi * t)
    y = h + ar1_series(np.random.default_rng(11), 2000, 0.3, 2.0)
    fit = fit_player_spline(t, y)
    z = ar1_whiten(y - fit.fitted_values, fit.phi)
    d = z - z.mean()
    assert abs(d[1:] @ d[:-1] / (d @ d)) <= 0.05
    assert abs(fit.phi - 0.3) < 0.1


def test_pseudo_r2_cases():
    obs = np.array([70.0, 72, 74, 69, 75])
    assert pseudo_r2(np.full(5, obs.mean()), obs) == pytest.approx(0.0)
    assert pseudo_r2(obs, obs) == 1.0
    obs2 = np.array([-math.sqrt(10), math.sqrt(10)])
    assert pseudo_r2(obs2 - math.sqrt(7.04), obs2) == pytest.approx(0.296)
    with pytest.raises(SkillDecompError):
        pseudo_r2(np.ones(3), np.ones(3))


def test_fit_dump_roundtrip(tmp_path):
    t = _t(90)
    y = 70 + t**2 + ar1_series(np.random.default_rng(8), 90, 0.1, 1.0)
    fits = [fit_player_spline(t, y, player_id="A"), fit_player_spline(t, 70 + t, player_id="B")]
    dump_fits(fits, tmp_path / "fits.txt")
    back = load_fits(tmp_path / "fits.txt")
    assert [f.player_id for f in back] == ["A", "B"]
    for a, b in zip(fits, back):
        assert np.array_equal(a.knots, b.knots)
        assert np.array_equal(a.coefficients, b.coefficients)
        assert (a.phi, a.effective_df) == (b.phi, b.effective_df)
        np.testing.assert_array_equal(predict_mean(a, t), predict_mean(b, t))
