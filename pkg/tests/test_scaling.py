import numpy as np
import pytest

from weaver.errors import FitError
from weaver.scaling import (
    BOUNDS,
    CurvePoint,
    ScalingFit,
    beta_passk_closed_form,
    fit_coverage_power,
    fit_selection_curve,
    holdout_split,
    huber,
    predict,
    prediction_mse,
    read_curve_csv,
    write_curve_csv,
)

# fitted rows for GPQA-Diamond and MATH-500 at 70B
GPQA_PASSK = ScalingFit(0.0, 0.9429, 0.7603, 0.3475, form="coverage_power")
GPQA_WEAVER = ScalingFit(0.3958, 0.6728, 0.7320, 1.5865, 0.3250, 0.5053)
MATH_WEAVER = ScalingFit(0.7870, 0.9371, 3.3908, 3.0000, 0.2869, 0.5000)


def _points(fit, ks):
    return [CurvePoint(int(k), float(predict(fit, k))) for k in ks]


def test_huber_examples():
    d = 0.3
    assert huber(0.0, d) == 0.0
    assert huber(d, d) == pytest.approx(d * d / 2)
    assert huber(2 * d, d) == pytest.approx(1.5 * d * d)
    assert huber(-2 * d, d) == huber(2 * d, d)
    with pytest.raises(FitError):
        huber(1.0, 0.0)


def test_huber_smooth_at_knee():
    d, h = 0.25, 1e-7
    left = (huber(d, d) - huber(d - h, d)) / h
    right = (huber(d + h, d) - huber(d, d)) / h
    assert left == pytest.approx(right, abs=1e-5)
    assert huber(d - h, d) == pytest.approx(huber(d + h, d), abs=1e-6)


def test_beta_closed_form():
    assert beta_passk_closed_form(1, 1, 3) == pytest.approx(0.75)
    for a, b in [(0.5, 2.0), (2.0, 3.0), (1.3, 0.7)]:
        assert beta_passk_closed_form(a, b, 1) == pytest.approx(a / (a + b))
    vals = [beta_passk_closed_form(0.7, 1.9, k) for k in (1, 4, 64, 4096, 10**6)]
    assert np.all(np.diff(vals) > 0) and vals[-1] > 0.99
    with pytest.raises(FitError):
        beta_passk_closed_form(0, 1, 2)


def test_beta_closed_form_monotone_in_shapes():
    assert beta_passk_closed_form(2.0, 1.0, 5) >= beta_passk_closed_form(1.0, 1.0, 5)
    assert beta_passk_closed_form(1.0, 2.0, 5) <= beta_passk_closed_form(1.0, 1.0, 5)


def test_coverage_refit_table_row():
    pts = _points(GPQA_PASSK, range(1, 1025))
    fit = fit_coverage_power(pts)
    assert fit.r2 >= 0.999
    assert fit.form == "coverage_power"


def test_coverage_constant_series_flagged():
    fit = fit_coverage_power([CurvePoint(k, 0.4) for k in (1, 2, 4, 8, 16)])
    assert "constant_series" in fit.flags and np.isnan(fit.r2)
    assert fit.floor == pytest.approx(0.4, abs=1e-3)
    assert predict(fit, 100) == pytest.approx(0.4, abs=1e-3)


def test_coverage_heldout_noiseless():
    truth = ScalingFit(0.2, 0.9, 1.2, 0.5, form="coverage_power")
    pts = _points(truth, [1, 2, 3, 4, 6, 8, 12, 16, 24, 32, 48, 64, 96, 128])
    train, test = holdout_split(pts, 0.9)
    fit = fit_coverage_power(train)
    assert prediction_mse(fit, test) <= 1e-6


def test_selection_refit_table_row():
    ks = np.unique(np.round(np.geomspace(1, 128, 30)).astype(int))
    fit = fit_selection_curve(_points(GPQA_WEAVER, ks))
    assert fit.r2 >= 0.99
    assert fit.delta in (0.01, 0.05, 0.1, 0.25, 0.5)


def test_selection_with_unit_pi_reduces_to_coverage():
    truth = ScalingFit(0.1, 0.8, 1.0, 0.6, pi_eff=1.0, gamma=1.0)
    cov = ScalingFit(0.1, 0.8, 1.0, 0.6, form="coverage_power")
    ks = [1, 2, 4, 8, 16, 32, 64, 128]
    np.testing.assert_allclose(predict(truth, ks), predict(cov, ks))
    fit = fit_selection_curve(_points(truth, ks))
    assert fit.mse <= 1e-6


def test_selection_holdout_within_tenfold():
    ks = np.unique(np.round(np.geomspace(1, 128, 30)).astype(int))
    pts = _points(GPQA_WEAVER, ks)
    full = fit_selection_curve(pts)
    train, test = holdout_split(pts, 0.9)
    part = fit_selection_curve(train)
    assert prediction_mse(part, test) <= max(10 * full.mse, 1e-8)


def test_round_trip_recovers_curve():
    truth = ScalingFit(0.3, 0.85, 1.5, 0.8, 0.4, 0.7)
    ks = [1, 2, 3, 4, 6, 8, 12, 16, 24, 32, 64, 128]
    fit = fit_selection_curve(_points(truth, ks))
    assert fit.mse <= 1e-8
    dense = np.arange(1, 129)
    assert np.abs(predict(fit, dense) - predict(truth, dense)).max() <= 0.02


def test_fits_respect_bounds():
    ks = [1, 2, 4, 8, 16, 32]
    fit = fit_selection_curve([CurvePoint(k, v) for k, v in zip(ks, [0.1, 0.3, 0.2, 0.6, 0.4, 0.9])])
    assert BOUNDS["zeta"][0] <= fit.zeta <= BOUNDS["zeta"][1]
    assert fit.alpha <= 3 and fit.gamma <= 2.5 and 0 <= fit.pi_eff <= 1
    assert 0 <= fit.floor <= fit.ceil <= 1


def test_fit_point_counts():
    with pytest.raises(FitError, match="at least 4"):
        fit_coverage_power([CurvePoint(k, 0.5) for k in (1, 2, 3)])
    with pytest.raises(FitError, match="at least 6"):
        fit_selection_curve([CurvePoint(k, 0.5) for k in (1, 2, 3, 4, 5)])
    with pytest.raises(FitError, match="increasing"):
        fit_coverage_power([CurvePoint(k, 0.5) for k in (1, 3, 2, 4)])


def test_predict_examples():
    flat = ScalingFit(0.4, 0.4, 1.0, 1.0, 0.5, 1.0)
    np.testing.assert_allclose(predict(flat, [1, 10, 1000]), 0.4)
    assert predict(MATH_WEAVER, 1024) > predict(MATH_WEAVER, 1)
    vals = predict(MATH_WEAVER, np.arange(1, 1025))
    assert vals.min() >= MATH_WEAVER.floor and vals.max() <= MATH_WEAVER.ceil


def test_predict_matches_fit_residuals():
    ks = [1, 2, 4, 8, 16, 32, 64]
    pts = [CurvePoint(k, v) for k, v in zip(ks, [0.3, 0.4, 0.5, 0.58, 0.62, 0.64, 0.65])]
    fit = fit_selection_curve(pts)
    resid = predict(fit, ks) - np.array([p.value for p in pts])
    assert np.mean(resid**2) == pytest.approx(fit.mse)


def test_fit_is_deterministic():
    ks = [1, 2, 4, 8, 16, 32, 64]
    pts = [CurvePoint(k, v) for k, v in zip(ks, [0.3, 0.4, 0.5, 0.58, 0.62, 0.64, 0.65])]
    assert fit_selection_curve(pts, seed=2) == fit_selection_curve(pts, seed=2)


def test_curve_csv_round_trip(tmp_path):
    pts = [CurvePoint(1, 0.25, 0.01), CurvePoint(4, 0.5), CurvePoint(16, 1 / 3)]
    write_curve_csv(pts, tmp_path / "c.csv")
    assert read_curve_csv(tmp_path / "c.csv") == pts
    (tmp_path / "bad.csv").write_text("x,y\n1,2\n")
    with pytest.raises(FitError):
        read_curve_csv(tmp_path / "bad.csv")


def test_holdout_split_protocol():
    pts = [CurvePoint(k, 0.5) for k in range(1, 21)]
    train, test = holdout_split(pts, 0.9)
    assert len(train) == 18 and [p.k for p in test] == [19, 20]


def test_scaling_fit_invariants():
    with pytest.raises(FitError):
        ScalingFit(0.6, 0.5, 1.0, 1.0)
    with pytest.raises(FitError):
        CurvePoint(0, 0.5)
