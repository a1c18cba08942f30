import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mortcast.data_ingest import Country, Gender, Panel, Subpopulation
from mortcast.leecarter import LeeCarterFit, fit_lc, fit_lc_panel, forecast_lc, lc_predict, normalize
from mortcast.numcore.irls import poisson_deviance
from mortcast.report.metrics import panel_rmse

SUB = Subpopulation(Country.FIN, Gender.male)


def lc_truth(A=30, T=40):
    a = np.arange(A)
    alpha = -5 + 0.05 * a
    beta = np.exp(-a / 15.0)
    beta /= beta.sum()
    kappa = -3.0 * (np.arange(T) - (T - 1) / 2) / T * A
    kappa -= kappa.mean()
    return alpha, beta, kappa


def make_panel(log_m, E, rng=None, years=None):
    D = E * np.exp(log_m)
    if rng is not None:
        D = rng.poisson(D).astype(float)
    T = log_m.shape[1]
    years = np.arange(1970, 1970 + T) if years is None else years
    return Panel(years, D, E, ("HMD",) * T)


def test_constant_rates_give_flat_kappa():
    A, T = 20, 15
    m = np.linspace(0.001, 0.2, A)
    E = np.full((A, T), 1e5)
    fit = fit_lc_panel(make_panel(np.log(m)[:, None] * np.ones((1, T)), E), SUB, np.arange(A))
    assert np.max(np.abs(fit.kappa)) < 1e-6
    np.testing.assert_allclose(fit.alpha, np.log(m), atol=1e-8)


def test_recovers_known_parameters(rng):
    alpha, beta, kappa = lc_truth()
    log_m = alpha[:, None] + beta[:, None] * kappa[None, :]
    E = np.full(log_m.shape, 1e8)
    fit = fit_lc_panel(make_panel(log_m, E, rng), SUB, np.arange(len(alpha)))
    np.testing.assert_allclose(fit.alpha, alpha, atol=1e-3)
    np.testing.assert_allclose(fit.beta, beta, atol=1e-3)
    np.testing.assert_allclose(fit.kappa, kappa, atol=1e-3 * np.abs(kappa).max())


def small_fit():
    return LeeCarterFit(SUB, np.arange(3), np.arange(2000, 2004), np.log([0.01, 0.02, 0.05]),
                        np.array([0.5, 0.3, 0.2]), np.array([1.5, 0.5, -0.5, -1.5]))


def test_predict_closed_form():
    fit = LeeCarterFit(SUB, np.arange(2), np.arange(2000, 2002), np.log([0.01, 0.01]), np.zeros(2), np.zeros(2))
    E = np.array([[100.0, 200.0], [300.0, 400.0]])
    mu, D = lc_predict(fit, E)
    np.testing.assert_allclose(mu, 0.01)
    np.testing.assert_allclose(D, 0.01 * E)


def test_predict_linear_in_exposure(rng):
    fit = small_fit()
    E = rng.uniform(100, 1000, size=(3, 4))
    mu1, D1 = lc_predict(fit, E)
    mu2, D2 = lc_predict(fit, 2 * E)
    np.testing.assert_array_equal(mu1, mu2)
    np.testing.assert_allclose(D2, 2 * D1, rtol=1e-15)
    oracle = np.empty((3, 4))
    for a in range(3):
        for t in range(4):
            oracle[a, t] = E[a, t] * np.exp(fit.alpha[a] + fit.beta[a] * fit.kappa[t])
    np.testing.assert_allclose(D1, oracle, rtol=1e-14)
    with pytest.raises(ValueError):
        lc_predict(fit, E[:, :2])


def test_linear_kappa_forecast_is_geometric():
    T = 30
    beta = np.array([0.5, 0.3, 0.2])
    kappa = -0.5 * (np.arange(T) - (T - 1) / 2)
    fit = LeeCarterFit(SUB, np.arange(3), np.arange(1990, 1990 + T), np.log([0.01, 0.02, 0.05]), beta, kappa)
    fc = forecast_lc(fit, 5)
    ratio = fc.rates[:, 1:] / fc.rates[:, :-1]
    np.testing.assert_allclose(ratio, np.exp(-0.5 * beta)[:, None] * np.ones((1, 4)), rtol=1e-6)
    np.testing.assert_array_equal(fc.years, np.arange(1990 + T, 1995 + T))


def test_horizon_zero_rejected():
    with pytest.raises(ValueError):
        forecast_lc(small_fit(), 0)


def test_random_walk_kappa_one_step_unbiased():
    errors = []
    for seed in range(100):
        r = np.random.default_rng(seed)
        path = np.cumsum(-1.0 + r.normal(size=41))
        hist, nxt = path[:40], path[40]
        fit = LeeCarterFit(SUB, np.arange(1), np.arange(40), np.zeros(1), np.ones(1), hist - hist.mean())
        fc = forecast_lc(fit, 1)
        errors.append((nxt - hist.mean()) - fc.kappa[0])
    errors = np.array(errors)
    assert abs(errors.mean()) <= 2 * errors.std(ddof=1) / np.sqrt(len(errors))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(5, 15), st.integers(10, 25))
def test_fit_invariants(seed, A, T):
    rng = np.random.default_rng(seed)
    a = np.arange(A)
    log_m = (-7 + 0.1 * a)[:, None] + rng.uniform(0.2, 1.0, A)[:, None] * np.linspace(1, -1, T)[None, :]
    E = rng.uniform(1e3, 1e5, size=(A, T))
    panel = make_panel(log_m, E, rng)
    fit = fit_lc_panel(panel, SUB, a)
    assert abs(fit.beta.sum() - 1) < 1e-10
    assert abs(fit.kappa.sum()) < 1e-10 * max(1.0, np.abs(fit.kappa).max()) * T
    assert np.all(fit.rates > 0)
    # age-only model: rates constant in time at the age's pooled rate
    m_age = panel.deaths.sum(axis=1) / panel.exposures.sum(axis=1)
    dev_age = poisson_deviance(panel.deaths, panel.exposures * m_age[:, None])
    assert fit.deviance <= dev_age + 1e-8 * dev_age
    assert np.all(forecast_lc(fit, 3).rates > 0)


def test_normalize_preserves_fit(rng):
    alpha, beta, kappa = rng.normal(size=4), rng.uniform(1, 2, 4), rng.normal(size=6)
    a2, b2, k2 = normalize(alpha, beta, kappa)
    np.testing.assert_allclose(a2[:, None] + b2[:, None] * k2, alpha[:, None] + beta[:, None] * kappa, atol=1e-12)


def test_round_trip_dict():
    fit = small_fit()
    back = LeeCarterFit.from_dict(fit.to_dict())
    np.testing.assert_array_equal(back.rates, fit.rates)
    assert back.subpopulation == SUB


def test_fit_on_synthetic_tensor(synthetic_tensor):
    train = synthetic_tensor.window(1950, 2010)
    fit = fit_lc(train, SUB)
    rr, rd = panel_rmse(fit.rates, train[SUB])
    assert 0 < rr < 0.05
    assert rd > rr
