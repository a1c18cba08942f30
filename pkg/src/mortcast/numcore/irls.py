"""Penalized Poisson IRLS with a log link, and GCV smoothing-parameter search."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy.special import xlogy


class ConvergenceError(RuntimeError):
    """IRLS did not converge; ``trace`` holds the penalized deviance per iteration."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


def poisson_deviance(y, mu) -> float:
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    return float(2.0 * np.sum(xlogy(y, y) - xlogy(y, mu) - (y - mu)))


class DenseDesign:
    def __init__(self, X):
        self.X = np.asarray(X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.shape = self.X.shape

    def dot(self, beta):
        return self.X @ beta

    def tdot(self, v):
        return self.X.T @ v

    def gram(self, w):
        return self.X.T @ (w[:, None] * self.X)

    def column_support(self):
        return [np.flatnonzero(self.X[:, j]) for j in range(self.shape[1])]


class BlockDesign:
    """Design with shared dense columns followed by row-disjoint diagonal blocks.

    ``shared`` is ``(n, q)`` and occupies coefficient columns ``0..q-1``.
    Each block ``(rows, Xb)`` contributes ``Xb`` on ``rows`` for the next
    ``Xb.shape[1]`` coefficient columns. Rows of different blocks must not
    overlap; this keeps ``X' W X`` assembly at the cost of the blocks alone.
    """

    def __init__(self, shared, blocks: Sequence[tuple[np.ndarray, np.ndarray]]):
        self.shared = np.asarray(shared, dtype=float)
        if self.shared.ndim == 1:
            self.shared = self.shared[:, None]
        n, q = self.shared.shape
        self.blocks = []
        start = q
        for rows, Xb in blocks:
            rows = np.asarray(rows, dtype=int)
            Xb = np.asarray(Xb, dtype=float)
            self.blocks.append((rows, slice(start, start + Xb.shape[1]), Xb))
            start += Xb.shape[1]
        self.shape = (n, start)

    def dot(self, beta):
        q = self.shared.shape[1]
        eta = self.shared @ beta[:q]
        for rows, cols, Xb in self.blocks:
            eta[rows] += Xb @ beta[cols]
        return eta

    def tdot(self, v):
        q = self.shared.shape[1]
        out = np.empty(self.shape[1])
        out[:q] = self.shared.T @ v
        for rows, cols, Xb in self.blocks:
            out[cols] = Xb.T @ v[rows]
        return out

    def gram(self, w):
        q = self.shared.shape[1]
        H = np.zeros((self.shape[1], self.shape[1]))
        Sw = w[:, None] * self.shared
        H[:q, :q] = self.shared.T @ Sw
        for rows, cols, Xb in self.blocks:
            WXb = w[rows, None] * Xb
            H[cols, cols] = Xb.T @ WXb
            H[:q, cols] = Sw[rows].T @ Xb
            H[cols, :q] = H[:q, cols].T
        return H

    def column_support(self):
        sup = [np.flatnonzero(self.shared[:, j]) for j in range(self.shared.shape[1])]
        for rows, _, Xb in self.blocks:
            sup.extend(rows[np.flatnonzero(Xb[:, j])] for j in range(Xb.shape[1]))
        return sup


def as_design(X):
    if isinstance(X, (DenseDesign, BlockDesign)):
        return X
    return DenseDesign(X)


@dataclass
class IrlsResult:
    coef: np.ndarray
    edf: float
    deviance: float
    penalized_deviance: float
    eta: np.ndarray
    mu: np.ndarray
    iterations: int
    trace: list = field(default_factory=list)
    hessian: np.ndarray | None = None

    def score(self, design, y, penalty) -> np.ndarray:
        """Gradient of the penalized log-likelihood at ``coef``."""
        return as_design(design).tdot(np.asarray(y) - self.mu) - penalty @ self.coef


def _solve_spd(A, b):
    try:
        c = sla.cho_factor(A, lower=False, check_finite=False)
        return sla.cho_solve(c, b, check_finite=False), c
    except sla.LinAlgError:
        return sla.solve(A, b, assume_a="sym", check_finite=False), None


def penalized_poisson_irls(
    design,
    offset,
    y,
    penalty=None,
    max_iter: int = 100,
    tol: float = 1e-8,
    beta0=None,
    compute_edf: bool = True,
) -> IrlsResult:
    """Maximize the penalized Poisson log-likelihood with log link.

    Parameters
    ----------
    design : array or DenseDesign/BlockDesign
        Model matrix ``X``.
    offset : array
        Added to the linear predictor (log exposure for rate models).
    y : array
        Nonnegative counts.
    penalty : array, optional
        Already-weighted penalty matrix ``S = sum_k lambda_k P_k``; the
        objective is ``deviance + beta' S beta``.
    """
    X = as_design(design)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    offset = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise ValueError("response must be finite and nonnegative")
    if not np.all(np.isfinite(offset)):
        raise ValueError("offset must be finite")
    S = np.zeros((p, p)) if penalty is None else np.asarray(penalty, dtype=float)

    for j, rows in enumerate(X.column_support()):
        if rows.size and not np.any(y[rows] > 0):
            warnings.warn(f"column {j}: all responses zero on its support", RuntimeWarning)
            break

    def objective(beta):
        eta = X.dot(beta) + offset
        mu = np.exp(np.clip(eta, -700, 700))
        dev = poisson_deviance(y, mu)
        return dev + float(beta @ S @ beta), dev, eta, mu

    if beta0 is None:
        mu = y + 0.1 * max(y.mean(), 1e-8) + 1e-10
        eta = np.log(mu)
        w = mu
        z = eta - offset
        beta, _ = _solve_spd(X.gram(w) + S, X.tdot(w * z))
    else:
        beta = np.asarray(beta0, dtype=float).copy()
    pen, dev, eta, mu = objective(beta)
    trace = [pen]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = mu
        H = X.gram(w)
        grad = X.tdot(y - mu) - S @ beta
        step, _ = _solve_spd(H + S, grad)
        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            pen_new, dev_new, eta_new, mu_new = objective(cand)
            if np.isfinite(pen_new) and pen_new <= pen + 1e-10 * max(1.0, abs(pen)):
                break
            t *= 0.5
        else:
            raise ConvergenceError("step halving failed", trace)
        change = abs(pen - pen_new) / (abs(pen_new) + 0.1)
        beta, pen, dev, eta, mu = cand, pen_new, dev_new, eta_new, mu_new
        trace.append(pen)
        if change < tol:
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"no convergence in {max_iter} iterations", trace)

    H = X.gram(mu)
    edf = float("nan")
    if compute_edf:
        A = H + S
        M, _ = _solve_spd(A, H)
        edf = float(np.trace(M))
    return IrlsResult(beta, edf, dev, pen, eta, mu, it, trace, H)


def gcv_score(deviance: float, edf: float, n: int) -> float:
    denom = n - edf
    if denom <= 0:
        return float("inf")
    return n * deviance / denom**2


DEFAULT_GRID = tuple(np.logspace(-4, 8, 13))
# deviances below this fraction of the total count are rounding noise
DEVIANCE_FLOOR = 1e-10


@dataclass
class SmoothingProblem:
    """Penalized Poisson problem with one weight per penalty block.

    ``penalties`` are ``p x p`` matrices in coefficient space.
    """

    design: object
    offset: np.ndarray
    y: np.ndarray
    penalties: Sequence[np.ndarray]
    max_iter: int = 100
    tol: float = 1e-8

    def __post_init__(self):
        self.design = as_design(self.design)

    def penalty(self, lams) -> np.ndarray:
        p = self.design.shape[1]
        S = np.zeros((p, p))
        for lam, P in zip(lams, self.penalties):
            S += lam * P
        return S

    def fit(self, lams, beta0=None, compute_edf=True) -> IrlsResult:
        return penalized_poisson_irls(
            self.design, self.offset, self.y, self.penalty(lams), self.max_iter, self.tol, beta0, compute_edf
        )

    def gcv(self, lams, beta0=None) -> tuple[float, IrlsResult]:
        res = self.fit(lams, beta0)
        # an exact fit leaves only rounding noise, which must not decide the search
        dev = res.deviance if res.deviance > DEVIANCE_FLOOR * float(np.sum(self.y)) else 0.0
        return gcv_score(dev, res.edf, len(self.y)), res


@dataclass
class SmoothingSelection:
    lams: np.ndarray
    gcv: float
    result: IrlsResult
    trace: list


def select_smoothing(problem: SmoothingProblem, grids=None, max_sweeps: int = 3) -> SmoothingSelection:
    """Coordinate-wise GCV search over a grid per penalty block.

    Blocks are visited in order; for each block every grid value is tried
    with the others held fixed. Ties go to the larger value. Sweeps repeat
    until no block changes.
    """
    k = len(problem.penalties)
    if grids is None:
        grids = [DEFAULT_GRID] * k
    grids = [np.sort(np.asarray(g, dtype=float)) for g in grids]
    if len(grids) != k:
        raise ValueError(f"need {k} grids, got {len(grids)}")
    for g in grids:
        if g.size == 0:
            raise ValueError("empty smoothing grid")
        if np.any(g <= 0):
            raise ValueError("grid values must be > 0")
    idx = [len(g) // 2 for g in grids]
    lams = np.array([g[i] for g, i in zip(grids, idx)])
    best, res = problem.gcv(lams)
    trace = [(lams.copy(), best)]
    for _ in range(max_sweeps):
        changed = False
        for b in range(k):
            start_beta = res.coef
            for i, value in enumerate(grids[b]):
                if i == idx[b]:
                    continue
                trial = lams.copy()
                trial[b] = value
                score, r = problem.gcv(trial, start_beta)
                trace.append((trial.copy(), score))
                if score < best or (score == best and value > lams[b]):
                    best, res, lams, idx[b] = score, r, trial, i
                    changed = True
        if not changed:
            break
    return SmoothingSelection(lams, best, res, trace)
