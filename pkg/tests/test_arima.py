import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import lfilter

from mortcast.numcore.arima import ArimaModel, arima_fit, arima_forecast, forecast_series


def ar1(phi, n, seed, burn=200):
    e = np.random.default_rng(seed).normal(size=n + burn)
    return lfilter([1.0], [1.0, -phi], e)[burn:]


def test_linear_series_has_unit_drift():
    m = arima_fit(np.arange(1.0, 51.0))
    assert m.order[1] >= 1
    assert m.include_drift
    assert m.drift == pytest.approx(1.0, abs=1e-6)


def test_white_noise_selects_mean_model():
    y = np.random.default_rng(3).normal(5.0, 1.0, size=300)
    m = arima_fit(y)
    assert m.order == (0, 0, 0)
    assert m.mean == pytest.approx(y.mean(), abs=0.05)


def test_ar1_coefficient():
    n = 500
    m = arima_fit(ar1(0.7, n, seed=0))
    assert m.order == (1, 0, 0)
    # three asymptotic standard errors
    assert abs(m.ar[0] - 0.7) <= 3 * np.sqrt((1 - 0.7**2) / n)


def test_random_walk_drift_forecast():
    m = ArimaModel((0, 1, 0), include_drift=True, drift=0.5)
    np.testing.assert_allclose(arima_forecast(m, np.linspace(1, 10, 12), 3), [10.5, 11.0, 11.5])


def test_mean_model_forecast():
    m = ArimaModel((0, 0, 0), mean=2.5)
    np.testing.assert_allclose(arima_forecast(m, np.ones(12), 4), 2.5)


def test_ar1_forecast_hand_iteration():
    m = ArimaModel((1, 0, 0), ar=[0.5], mean=0.0)
    hist = np.r_[np.zeros(11), 8.0]
    np.testing.assert_allclose(arima_forecast(m, hist, 3), [4.0, 2.0, 1.0])


def test_horizon_and_length_checks():
    with pytest.raises(ValueError):
        arima_forecast(ArimaModel((0, 0, 0)), np.ones(12), 0)
    with pytest.raises(ValueError):
        arima_fit(np.arange(5.0))
    with pytest.raises(ValueError):
        arima_fit(np.r_[np.arange(12.0), np.nan])


def test_constant_series():
    fc, m = forecast_series(np.full(20, 3.0), 2)
    np.testing.assert_allclose(fc, 3.0)


def test_round_trip_dict():
    m = arima_fit(ar1(0.5, 120, seed=4))
    back = ArimaModel.from_dict(m.to_dict())
    np.testing.assert_array_equal(back.ar, m.ar)
    assert back.order == m.order and back.aicc == m.aicc


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["noise", "walk", "trend", "ar"]), st.integers(15, 80))
def test_selected_models_are_admissible(seed, kind, n):
    rng = np.random.default_rng(seed)
    e = rng.normal(size=n)
    y = {
        "noise": e,
        "walk": np.cumsum(e),
        "trend": -0.5 * np.arange(n) + 0.3 * e,
        "ar": lfilter([1.0], [1.0, -0.9], e),
    }[kind]
    m = arima_fit(y)
    assert m.admissible
    assert m.sigma2 > 0
    fc = arima_forecast(m, y, 5)
    assert fc.shape == (5,) and np.all(np.isfinite(fc))
