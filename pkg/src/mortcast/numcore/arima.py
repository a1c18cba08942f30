"""Non-seasonal ARIMA with conditional-sum-of-squares estimation and AICc order search.

Conventions: ``phi(B) x_t = theta(B) e_t`` with ``phi(z) = 1 - phi_1 z - phi_2 z^2`` and
``theta(z) = 1 + theta_1 z + theta_2 z^2``. ``x`` is the ``d``-times differenced series
minus its deterministic part: the mean (and an optional linear trend) when ``d = 0``,
the drift when ``d = 1``, nothing when ``d = 2``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import lfilter

logger = logging.getLogger(__name__)

MAX_ORDER = 2
# first observations conditioned on, so every candidate is scored on the same sample
CONDITION = 2 * MAX_ORDER
ROOT_MARGIN = 1e-6
MAX_NFEV = 60


@dataclass
class ArimaModel:
    order: tuple[int, int, int]
    include_drift: bool = False
    ar: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mean: float = 0.0
    drift: float = 0.0
    sigma2: float = 0.0
    aicc: float = float("nan")
    nobs: int = 0
    fallback: bool = False

    def __post_init__(self):
        self.order = tuple(int(v) for v in self.order)
        self.ar = np.atleast_1d(np.asarray(self.ar, dtype=float))
        self.ma = np.atleast_1d(np.asarray(self.ma, dtype=float))

    @property
    def admissible(self) -> bool:
        return _roots_ok(self.ar, sign=-1) and _roots_ok(self.ma, sign=1)

    def to_dict(self) -> dict:
        return {
            "order": list(self.order),
            "include_drift": self.include_drift,
            "ar": self.ar.tolist(),
            "ma": self.ma.tolist(),
            "mean": self.mean,
            "drift": self.drift,
            "sigma2": self.sigma2,
            "aicc": self.aicc,
            "nobs": self.nobs,
            "fallback": self.fallback,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArimaModel":
        return cls(**{**d, "order": tuple(d["order"])})


def _roots_ok(coefs: np.ndarray, sign: int) -> bool:
    coefs = np.asarray(coefs, dtype=float)
    if coefs.size == 0 or not np.any(coefs):
        return True
    poly = np.concatenate([[1.0], sign * coefs])
    # np.roots wants highest degree first
    roots = np.roots(poly[::-1])
    return bool(np.all(np.abs(roots) > 1.0 + ROOT_MARGIN))


def _deterministic(d: int, drift: bool, mean: float, slope: float, t: np.ndarray) -> np.ndarray:
    if d == 0:
        return mean + (slope * t if drift else 0.0)
    if d == 1 and drift:
        return np.full(t.shape, slope)
    return np.zeros(t.shape)


def _residuals(x: np.ndarray, ar: np.ndarray, ma: np.ndarray) -> np.ndarray:
    """Conditional residuals: zero pre-sample errors, AR part from observed lags."""
    p = ar.size
    u = x.copy()
    for i in range(p):
        u[p:] -= ar[i] * x[p - 1 - i : len(x) - 1 - i]
    u[:p] = 0.0
    if ma.size:
        return lfilter([1.0], np.concatenate([[1.0], ma]), u)
    return u


class _Candidate:
    def __init__(self, y, p, d, q, drift):
        self.y = y
        self.p, self.d, self.q, self.drift = p, d, q, drift
        self.w = np.diff(y, n=d) if d else y.copy()
        # w[i] corresponds to original time index i + d
        self.t = np.arange(d, len(y), dtype=float)
        self.n_const = (1 + int(drift)) if d == 0 else int(drift and d == 1)
        self.keep = self.t >= CONDITION
        self._last = (None, None, None)

    def unpack(self, theta):
        p, q = self.p, self.q
        ar = theta[:p]
        ma = theta[p : p + q]
        rest = theta[p + q :]
        mean = slope = 0.0
        if self.d == 0:
            mean = rest[0]
            if self.drift:
                slope = rest[1]
        elif self.d == 1 and self.drift:
            slope = rest[0]
        return ar, ma, mean, slope

    def _filtered(self, theta):
        # least_squares asks for residuals and Jacobian at the same point; compute once
        key = theta.tobytes()
        if self._last[0] != key:
            ar, ma, mean, slope = self.unpack(theta)
            x = self.w - _deterministic(self.d, self.drift, mean, slope, self.t)
            self._last = (key, x, _residuals(x, ar, ma))
        return self._last[1], self._last[2]

    def resid(self, theta):
        return self._filtered(theta)[1].copy()

    def start(self):
        theta = np.zeros(self.p + self.q + self.n_const)
        if self.d == 0:
            if self.drift:
                slope, mean = np.polyfit(self.t, self.w, 1)
                theta[-2:] = mean, slope
            else:
                theta[-1] = self.w.mean()
        elif self.d == 1 and self.drift:
            theta[-1] = self.w.mean()
        return theta

    def jac(self, theta):
        """Jacobian of the conditional residuals with respect to ``theta``."""
        ar, ma, mean, slope = self.unpack(theta)
        p, q = self.p, self.q
        x, e = self._filtered(theta)
        n = x.size
        # derivatives of the AR-filtered series u, then pushed through 1 / theta(B)
        du = np.zeros((n, theta.size))
        for i in range(p):
            du[p:, i] = -x[p - 1 - i : n - 1 - i]
        for j in range(q):
            du[j + 1 :, p + j] = -e[: n - j - 1]
        c = p + q
        if self.d == 0:
            du[p:, c] = -(1.0 - ar.sum())
            if self.drift:
                lags = np.arange(1, p + 1)
                du[p:, c + 1] = -self.t[p:] + (ar[None, :] * (self.t[p:, None] - lags)).sum(axis=1)
        elif self.d == 1 and self.drift:
            du[p:, c] = -(1.0 - ar.sum())
        if q:
            du = lfilter([1.0], np.concatenate([[1.0], ma]), du, axis=0)
        return du[self.keep]

    def css_linear(self):
        """Exact CSS minimizer for pure AR candidates via a linear reparameterization."""
        p = self.p
        w, t = self.w, self.t
        rows = np.flatnonzero(self.keep & (np.arange(w.size) >= p))
        cols = [w[rows - 1 - i] for i in range(p)]
        if self.n_const >= 1:
            cols.append(np.ones(rows.size))
        if self.d == 0 and self.drift:
            cols.append(t[rows])
        if not cols:
            return np.zeros(0)
        A = np.column_stack(cols)
        coef, *_ = np.linalg.lstsq(A, w[rows], rcond=None)
        ar = coef[:p]
        one = 1.0 - ar.sum()
        if abs(one) < 1e-12 and self.n_const:
            raise np.linalg.LinAlgError("unit root in AR part")
        theta = np.zeros(p + self.n_const)
        theta[:p] = ar
        if self.d == 0:
            a = coef[p]
            if self.drift:
                b = coef[p + 1]
                slope = b / one
                lags = np.arange(1, p + 1)
                mean = (a - slope * float(ar @ lags)) / one
                theta[p:] = mean, slope
            else:
                theta[p] = a / one
        elif self.n_const:
            theta[p] = coef[p] / one
        return theta

    def fit(self, var_floor):
        if self.q == 0:
            theta = self.css_linear()
        else:
            theta0 = self.start()

            def fun(th):
                return self.resid(th)[self.keep]

            # runs that wander into non-invertible MA regions end up rejected; cap their cost
            sol = least_squares(
                fun, theta0, jac=self.jac, method="lm", xtol=1e-10, ftol=1e-10, gtol=1e-10, max_nfev=MAX_NFEV
            )
            theta = sol.x
        e = self.resid(theta)[self.keep]
        n = e.size
        sse = float(e @ e)
        sigma2 = max(sse / n, var_floor)
        k = theta.size + 1
        loglik = -0.5 * n * (np.log(2 * np.pi * sigma2) + 1.0)
        if n - k - 1 <= 0:
            aicc = float("inf")
        else:
            aicc = -2 * loglik + 2 * k + 2 * k * (k + 1) / (n - k - 1)
        ar, ma, mean, slope = self.unpack(theta)
        return ArimaModel(
            (self.p, self.d, self.q),
            self.drift,
            ar.copy(),
            ma.copy(),
            float(mean),
            float(slope),
            sigma2,
            float(aicc),
            len(self.y),
        )


def _is_constant(v: np.ndarray) -> bool:
    if v.size < 2:
        return True
    scale = max(1.0, float(np.max(np.abs(v))))
    return float(np.ptp(v)) <= 1e-12 * scale


def arima_fit(series, allow_drift: bool = True) -> ArimaModel:
    """Select and estimate the AICc-best admissible ARIMA(p, d, q), p, d, q <= 2.

    Every candidate is scored on the same sample (observations after the
    first four). Differencing orders beyond one that already produced a
    constant series are skipped. If no candidate is admissible the result is
    a random walk with drift, flagged with ``fallback=True``.
    """
    y = np.asarray(series, dtype=float)
    if y.size < 10:
        raise ValueError("series must have at least 10 observations")
    if not np.all(np.isfinite(y)):
        raise ValueError("series must be finite")
    var_floor = max(1e-14 * float(np.var(y)), 1e-300)

    best = None
    for d in range(MAX_ORDER + 1):
        if d > 0 and _is_constant(np.diff(y, n=d - 1)):
            break
        drifts = (False, True) if (allow_drift and d <= 1) else (False,)
        for p, q, drift in itertools.product(range(MAX_ORDER + 1), range(MAX_ORDER + 1), drifts):
            try:
                model = _Candidate(y, p, d, q, drift).fit(var_floor)
            except (np.linalg.LinAlgError, ValueError) as exc:
                logger.debug("ARIMA(%d,%d,%d) failed: %s", p, d, q, exc)
                continue
            if not model.admissible or not np.isfinite(model.aicc):
                continue
            if best is None or model.aicc < best.aicc - 1e-9 * abs(best.aicc):
                best = model
    if best is None:
        w = np.diff(y)
        best = ArimaModel((0, 1, 0), True, drift=float(w.mean()), sigma2=float(np.var(w)), nobs=y.size, fallback=True)
    return best


def arima_forecast(model: ArimaModel, history, horizon: int) -> np.ndarray:
    """Iterated conditional-expectation point forecasts ``horizon`` steps ahead."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    y = np.asarray(history, dtype=float)
    p, d, q = model.order
    w = np.diff(y, n=d) if d else y.copy()
    t = np.arange(d, len(y), dtype=float)
    x = w - _deterministic(d, model.include_drift, model.mean, model.drift, t)
    e = _residuals(x, model.ar, model.ma) if x.size else np.zeros(0)

    xs = list(x)
    es = list(e)
    for _ in range(horizon):
        val = 0.0
        for i in range(p):
            val += model.ar[i] * (xs[-1 - i] if len(xs) > i else 0.0)
        for j in range(q):
            val += model.ma[j] * (es[-1 - j] if len(es) > j else 0.0)
        xs.append(val)
        es.append(0.0)
    t_future = np.arange(len(y), len(y) + horizon, dtype=float)
    w_future = np.asarray(xs[len(x) :]) + _deterministic(d, model.include_drift, model.mean, model.drift, t_future)

    out = w_future
    # integrate back d times using the last observed levels
    for level in range(d, 0, -1):
        base = np.diff(y, n=level - 1)[-1] if level > 1 else y[-1]
        out = base + np.cumsum(out)
    return out


def forecast_series(series, horizon: int, allow_drift: bool = True) -> tuple[np.ndarray, ArimaModel]:
    model = arima_fit(series, allow_drift)
    return arima_forecast(model, series, horizon), model
