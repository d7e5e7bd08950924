# ABOUTME: Tests for AR least-squares fits, one-step forecasts and forecast/observation files
# ABOUTME: Noiseless series must be recovered exactly; malformed files must name the problem
"""Tests for staci.forecaster"""

import numpy as np
import pytest

from staci.exceptions import DataError, ValidationError
from staci.forecaster import (
    ARModel,
    PredictionSource,
    fit_ar,
    lagged_design,
    load_external_predictions,
    load_observations,
    predict,
    predict_series,
    residuals,
)


def _ar_series(theta, n_steps, n_sites=3, intercept=0.0, seed=0):
    """Noiseless AR series started from random values"""
    rng = np.random.default_rng(seed)
    theta = np.atleast_2d(np.asarray(theta, dtype=float).T).T
    order = theta.shape[0]
    series = np.zeros((n_steps, n_sites))
    series[:order] = rng.standard_normal((order, n_sites))
    for t in range(order, n_steps):
        series[t] = intercept + sum(theta[i] * series[t - 1 - i] for i in range(order))
    return series


def _write(path, header, rows):
    lines = [",".join(header), *(",".join(map(str, r)) for r in rows)]
    path.write_text("\n".join(lines) + "\n")
    return path


class TestLaggedDesign:
    def test_lag_layout(self):
        series = np.arange(10.0).reshape(5, 2)
        lags, targets = lagged_design(series, 2)
        assert lags.shape == (3, 2, 2)
        np.testing.assert_array_equal(targets, series[2:])
        # first target row is Y_2; lag 1 is Y_1, lag 2 is Y_0
        np.testing.assert_array_equal(lags[0, :, 0], series[1])
        np.testing.assert_array_equal(lags[0, :, 1], series[0])


class TestFitAR:
    def test_recovers_shared_coefficients(self):
        series = _ar_series((0.5, -0.2), 15)
        model = fit_ar(series, 2, intercept=False)
        np.testing.assert_allclose(model.coeffs, [0.5, -0.2], atol=1e-8)
        np.testing.assert_array_equal(model.intercept, np.zeros(3))

    def test_recovers_intercept(self):
        series = _ar_series((0.5,), 15, intercept=1.0)
        model = fit_ar(series, 1)
        np.testing.assert_allclose(model.coeffs, [0.5], atol=1e-6)
        np.testing.assert_allclose(model.intercept, 1.0, atol=1e-6)

    def test_per_site_coefficients(self):
        theta = np.array([[0.5, -0.3, 0.1]])
        series = _ar_series(theta, 20)
        model = fit_ar(series, 1, shared=False, intercept=False)
        assert model.coeffs.shape == (1, 3)
        np.testing.assert_allclose(model.coeffs[0], [0.5, -0.3, 0.1], atol=1e-8)

    def test_constant_series_reproduced(self):
        series = np.full((30, 2), 3.0)
        model = fit_ar(series, 2)
        np.testing.assert_allclose(predict(model, series[-2:]), [3.0, 3.0], atol=1e-8)

    def test_too_short(self):
        with pytest.raises(ValidationError, match="training steps"):
            fit_ar(np.zeros((3, 2)), 2)

    def test_non_finite(self):
        series = np.zeros((10, 2))
        series[4, 1] = np.nan
        with pytest.raises(DataError):
            fit_ar(series, 1)

    def test_per_site_underdetermined(self):
        with pytest.raises(ValidationError, match="rows"):
            fit_ar(np.random.default_rng(0).standard_normal((5, 2)), 3, shared=False)

    def test_shared_fit_solves_normal_equations(self, rng):
        series = _ar_series((0.5, 0.2), 200) + rng.standard_normal((200, 3))
        model = fit_ar(series, 2)
        lags, _ = lagged_design(series, 2)
        n_rows = lags.shape[0]
        design = np.hstack([lags.reshape(n_rows * 3, 2), np.tile(np.eye(3), (n_rows, 1))])
        errors = residuals(model, series).reshape(-1)
        np.testing.assert_allclose(design.T @ errors, 0.0, atol=1e-8)

    def test_per_site_fit_solves_normal_equations(self, rng):
        series = rng.standard_normal((150, 2))
        model = fit_ar(series, 3, shared=False)
        lags, _ = lagged_design(series, 3)
        errors = residuals(model, series)
        for j in range(2):
            design = np.hstack([lags[:, j, :], np.ones((lags.shape[0], 1))])
            np.testing.assert_allclose(design.T @ errors[:, j], 0.0, atol=1e-8)


class TestPredict:
    def test_theta_one_multiplies_latest_row(self):
        model = ARModel(order=2, coeffs=np.array([1.0, 0.0]), intercept=np.zeros(2))
        history = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(predict(model, history), [3.0, 4.0])

    def test_two_lag_substitution(self):
        model = ARModel(order=2, coeffs=np.array([0.7, 0.3]), intercept=np.zeros(3))
        history = np.array([[1.0] * 3, [2.0] * 3])
        np.testing.assert_allclose(predict(model, history), 1.7)

    def test_zero_coefficients_give_intercept(self):
        model = ARModel(order=2, coeffs=np.zeros(2), intercept=np.array([1.0, -2.0]))
        np.testing.assert_array_equal(predict(model, np.full((2, 2), 9.0)), [1.0, -2.0])

    def test_history_shape(self):
        model = ARModel(order=2, coeffs=np.array([1.0, 0.0]), intercept=np.zeros(2))
        with pytest.raises(ValidationError):
            predict(model, np.zeros((3, 2)))

    def test_model_shape_check(self):
        with pytest.raises(ValidationError):
            ARModel(order=2, coeffs=np.zeros(3), intercept=np.zeros(2))

    def test_noiseless_residuals_vanish(self):
        series = _ar_series((0.6, 0.1), 25)
        model = fit_ar(series, 2, intercept=False)
        np.testing.assert_allclose(residuals(model, series), 0.0, atol=1e-8)

    def test_series_matches_step_forecasts(self, rng):
        series = rng.standard_normal((40, 3))
        model = fit_ar(series, 2, shared=False)
        batch = predict_series(model, series, 10, 20)
        stepwise = np.array([predict(model, series[t - 2 : t]) for t in range(10, 20)])
        np.testing.assert_allclose(batch, stepwise, rtol=1e-12, atol=1e-12)

    def test_series_needs_history(self, rng):
        model = fit_ar(rng.standard_normal((20, 2)), 3)
        with pytest.raises(ValidationError, match="history"):
            predict_series(model, np.zeros((20, 2)), 2, 10)

    @pytest.mark.parametrize("shared", [True, False])
    def test_linear_in_history_without_intercept(self, rng, shared):
        model = fit_ar(rng.standard_normal((100, 3)), 2, shared=shared, intercept=False)
        h1, h2 = rng.standard_normal((2, 2, 3))
        np.testing.assert_allclose(
            predict(model, 2.5 * h1 - 0.75 * h2),
            2.5 * predict(model, h1) - 0.75 * predict(model, h2),
            atol=1e-12,
        )


class TestObservationFiles:
    def test_load(self, tmp_path):
        path = _write(tmp_path / "obs.csv", ["t", "site_1", "site_2"], [(0, 1.5, 2), (1, 3, 4)])
        obs = load_observations(path, ["site_1", "site_2"])
        assert obs.n_steps == 2 and obs.n_sites == 2
        np.testing.assert_array_equal(obs.timestamps, [0, 1])
        np.testing.assert_array_equal(obs.values, [[1.5, 2.0], [3.0, 4.0]])

    def test_column_mismatch(self, tmp_path):
        path = _write(tmp_path / "obs.csv", ["t", "site_2", "site_1"], [(0, 1, 2)])
        with pytest.raises(DataError, match="do not match"):
            load_observations(path, ["site_1", "site_2"])

    def test_first_column_must_be_time(self, tmp_path):
        path = _write(tmp_path / "obs.csv", ["time", "site_1"], [(0, 1)])
        with pytest.raises(DataError, match="first column"):
            load_observations(path)

    def test_missing_value_named(self, tmp_path):
        path = _write(tmp_path / "obs.csv", ["t", "site_1", "site_2"], [(0, 1, 2), (1, "", 4)])
        with pytest.raises(DataError, match="'site_1' at row 2"):
            load_observations(path)

    def test_fractional_timestamps(self, tmp_path):
        path = _write(tmp_path / "obs.csv", ["t", "site_1"], [(0.5, 1)])
        with pytest.raises(DataError, match="integers"):
            load_observations(path)

    def test_duplicate_timestamps(self, tmp_path):
        path = _write(tmp_path / "obs.csv", ["t", "site_1"], [(0, 1), (0, 2)])
        with pytest.raises(DataError, match="duplicate"):
            load_observations(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_observations(tmp_path / "absent.csv")


class TestExternalPredictions:
    @pytest.fixture
    def observations(self, tmp_path):
        path = _write(
            tmp_path / "obs.csv", ["t", "site_1", "site_2"], [(5, 1, 2), (6, 3, 4), (7, 5, 6)]
        )
        return load_observations(path)

    def test_aligned_by_timestamp(self, tmp_path, observations):
        path = _write(
            tmp_path / "pred.csv",
            ["t", "site_1", "site_2"],
            [(7, 0.7, 0.8), (5, 0.1, 0.2), (6, 0.3, 0.4)],
        )
        series = load_external_predictions(path, observations)
        assert series.source is PredictionSource.EXTERNAL_FILE
        np.testing.assert_array_equal(series.predictions, [[0.1, 0.2], [0.3, 0.4], [0.7, 0.8]])
        np.testing.assert_array_equal(series.timestamps, [5, 6, 7])

    def test_permuted_columns(self, tmp_path, observations):
        path = _write(tmp_path / "pred.csv", ["t", "site_2", "site_1"], [(5, 1, 2)])
        with pytest.raises(DataError, match="permuted"):
            load_external_predictions(path, observations)

    def test_foreign_columns(self, tmp_path, observations):
        path = _write(tmp_path / "pred.csv", ["t", "site_1", "site_9"], [(5, 1, 2)])
        with pytest.raises(DataError, match="do not match"):
            load_external_predictions(path, observations)

    def test_missing_timestamp(self, tmp_path, observations):
        path = _write(
            tmp_path / "pred.csv", ["t", "site_1", "site_2"], [(5, 1, 2), (7, 1, 2)]
        )
        with pytest.raises(DataError, match="no prediction for timestamp 6"):
            load_external_predictions(path, observations)

    def test_extra_timestamp(self, tmp_path, observations):
        path = _write(
            tmp_path / "pred.csv",
            ["t", "site_1", "site_2"],
            [(4, 9, 9), (5, 1, 2), (6, 1, 2), (7, 1, 2)],
        )
        with pytest.raises(DataError, match="timestamp 4 has no observation"):
            load_external_predictions(path, observations)
