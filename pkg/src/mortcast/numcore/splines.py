"""B-spline bases, difference penalties and row-wise tensor designs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class SplineBasis:
    """Equally spaced B-spline basis on ``[lower, upper]``.

    With ``clamped=False`` (the default) the knots continue at equal
    spacing ``degree`` steps past each end of the domain, which is the
    usual P-spline construction: polynomials of degree below the penalty
    order then have coefficient sequences that are polynomial in the index,
    and the basis can be extended past ``upper`` by appending knots at the
    same spacing. ``clamped=True`` repeats the boundary knots instead.
    """

    lower: float
    upper: float
    num_basis: int = 10
    degree: int = 3
    clamped: bool = False

    def __post_init__(self):
        if not self.upper > self.lower:
            raise ValueError("upper must exceed lower")
        if self.degree < 0:
            raise ValueError("degree must be >= 0")
        if self.num_basis < self.degree + 1:
            raise ValueError("num_basis must be at least degree + 1")

    @property
    def spacing(self) -> float:
        return (self.upper - self.lower) / (self.num_basis - self.degree)

    @property
    def knots(self) -> np.ndarray:
        n_int = self.num_basis - self.degree
        inner = self.lower + self.spacing * np.arange(n_int + 1)
        inner[-1] = self.upper
        if self.clamped:
            lo = np.full(self.degree, self.lower)
            hi = np.full(self.degree, self.upper)
        else:
            lo = self.lower - self.spacing * np.arange(self.degree, 0, -1)
            hi = self.upper + self.spacing * np.arange(1, self.degree + 1)
        return np.concatenate([lo, inner, hi])

    def extended(self, extra: int) -> "SplineBasis":
        """Same knots continued ``extra`` spacings past ``upper`` (uniform bases only)."""
        if self.clamped:
            raise ValueError("clamped bases cannot be extended")
        return SplineBasis(
            self.lower,
            self.upper + extra * self.spacing,
            self.num_basis + extra,
            self.degree,
            False,
        )

    def __call__(self, x, extrapolate: bool = False) -> np.ndarray:
        return bspline_basis(self, x, extrapolate)


def _span_index(t: np.ndarray, k: int, n: int, x: np.ndarray) -> np.ndarray:
    # interval l with t[l] <= x < t[l+1], restricted to the domain spans k..n-1
    idx = np.searchsorted(t, x, side="right") - 1
    return np.clip(idx, k, n - 1)


def bspline_basis(basis: SplineBasis, x, extrapolate: bool = False) -> np.ndarray:
    """Evaluate all basis functions at ``x``; returns an ``(len(x), K)`` matrix.

    Points outside the domain raise :class:`DomainError` unless
    ``extrapolate`` is set, in which case the boundary polynomial pieces are
    continued.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    lo, hi = basis.lower, basis.upper
    outside = (x < lo) | (x > hi)
    if outside.any() and not extrapolate:
        raise DomainError(f"{int(outside.sum())} points outside [{lo}, {hi}]")
    t = basis.knots
    k = basis.degree
    n = basis.num_basis
    span = _span_index(t, k, n, x)
    # de Boor triangle: values[:, r] = B_{span-k+r, k}(x)
    values = np.ones((x.size, 1))
    for j in range(1, k + 1):
        new = np.zeros((x.size, j + 1))
        for r in range(j):
            i = span - j + 1 + r
            left = t[i]
            right = t[i + j]
            w = (x - left) / (right - left)
            new[:, r] += (1.0 - w) * values[:, r]
            new[:, r + 1] += w * values[:, r]
        values = new
    out = np.zeros((x.size, n))
    rows = np.arange(x.size)
    for r in range(k + 1):
        out[rows, span - k + r] = values[:, r]
    return out


def difference_matrix(K: int, order: int) -> np.ndarray:
    """The ``order``-th difference operator, shape ``(K - order, K)``."""
    if order < 1 or order >= K:
        raise ValueError(f"need 1 <= order < K, got order={order}, K={K}")
    return np.diff(np.eye(K), n=order, axis=0)


def difference_penalty(K: int, order: int = 2) -> np.ndarray:
    """Return ``D.T @ D`` for the ``order``-th difference operator on ``K`` coefficients."""
    D = difference_matrix(K, order)
    return D.T @ D


def tensor_design(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Row-wise Kronecker product; column ``i * K_B + j`` holds ``A[:, i] * B[:, j]``."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape[0] != B.shape[0]:
        raise ValueError(f"row counts differ: {A.shape[0]} vs {B.shape[0]}")
    return (A[:, :, None] * B[:, None, :]).reshape(A.shape[0], -1)


def tensor_penalties(Ka: int, Kb: int, order: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Marginal penalties lifted to the A-major tensor coefficient layout."""
    Pa = np.kron(difference_penalty(Ka, order), np.eye(Kb))
    Pb = np.kron(np.eye(Ka), difference_penalty(Kb, order))
    return Pa, Pb
