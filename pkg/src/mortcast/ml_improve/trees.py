"""CART growing on integer-valued features.

Two split criteria are supported: Poisson deviance for count data with
exposure (the improvement-factor trees) and squared error (the base learners
of gradient boosting). Features are coded to consecutive integer levels once,
and the split search for all nodes of one depth runs as a few ``bincount``
calls per feature.
Thresholds are midpoints between consecutive distinct values present in the
node and routing sends ``x <= threshold`` left.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

FEATURES = ("age", "year", "cohort")
LEAF = -1


@dataclass
class TreeParams:
    min_split: int = 20
    min_bucket: int = 7
    cp: float = 0.01
    max_depth: int = 30


@dataclass
class TreeModel:
    """Flat array representation; ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_node: np.ndarray
    params: TreeParams | None = None

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature == LEAF))

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        X = np.asarray(X, dtype=float)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature[node] != LEAF)
        while active.size:
            nd = node[active]
            f = self.feature[nd]
            go_left = X[active, f] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] != LEAF]
        return node

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_node": self.n_node.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeModel":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=float),
            np.asarray(d["n_node"], dtype=float),
        )


class CodedFeatures:
    """Integer-level coding of a feature matrix."""

    def __init__(self, X):
        X = np.asarray(X, dtype=float)
        self.X = X
        self.levels = []
        self.codes = []
        for j in range(X.shape[1]):
            vals, codes = np.unique(X[:, j], return_inverse=True)
            self.levels.append(vals)
            self.codes.append(codes.astype(np.int64))

    @property
    def n_features(self) -> int:
        return self.X.shape[1]


def _xlogx_ratio(s, w):
    # s * log(s / w), zero where s == 0
    return xlogy(s, s) - xlogy(s, w)


class _PoissonCriterion:
    """Poisson deviance with exposure: leaf value ``sum D / sum d``."""

    def __init__(self, D, d):
        self.D = np.asarray(D, dtype=float)
        self.d = np.asarray(d, dtype=float)
        self.split_weights = (self.D, self.d)
        self.leaf_weights = (self.D, self.d)

    @staticmethod
    def leaf_value(sums):
        sD, sd = sums
        with np.errstate(divide="ignore", invalid="ignore"):
            return sD / sd

    def deviance(self, idx) -> float:
        D, d = self.D[idx], self.d[idx]
        q = D.sum() / d.sum()
        return float(2.0 * np.sum(xlogy(D, D) - xlogy(D, q * d) - (D - q * d)))

    def gain_floor(self, idx) -> float:
        # rounding level of the summed s*log(s/w) terms entering a gain
        D, d = self.D[idx], self.d[idx]
        return 1e-10 * float(np.sum(np.abs(xlogy(D, D)) + np.abs(xlogy(D, d))) + 1.0)

    @staticmethod
    def gain(left, right, total, cc, rc):
        (cD, cd), (rD, rd), (tD, td) = left, right, total
        ok = (cD > 0) & (rD > 0) & (cd > 0) & (rd > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = 2.0 * (_xlogx_ratio(cD, cd) + _xlogx_ratio(rD, rd) - _xlogx_ratio(tD, td))
        return g, ok


class _SquaredErrorCriterion:
    """Squared error on ``r``; leaf value ``sum r / sum h`` (``h`` defaults to counts)."""

    def __init__(self, r, hessian=None):
        self.r = np.asarray(r, dtype=float)
        self.h = np.ones_like(self.r) if hessian is None else np.asarray(hessian, dtype=float)
        self.split_weights = (self.r,)
        self.leaf_weights = (self.r, self.h)

    @staticmethod
    def leaf_value(sums):
        sr, sh = sums
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(sh > 0, sr / sh, 0.0)

    def deviance(self, idx) -> float:
        v = self.r[idx]
        return float(np.sum((v - v.mean()) ** 2))

    def gain_floor(self, idx) -> float:
        return 1e-12 * float(np.sum(self.r[idx] ** 2))

    @staticmethod
    def gain(left, right, total, cc, rc):
        (cs,), (rs,), (ts,) = left, right, total
        with np.errstate(divide="ignore", invalid="ignore"):
            g = cs**2 / cc + rs**2 / rc - ts**2 / (cc + rc)
        return g, np.ones(g.shape, dtype=bool)


def _next_present(cnt: np.ndarray) -> np.ndarray:
    """For each level the index of the next level with a nonzero count (or ``L``)."""
    L = cnt.shape[1]
    pos = np.where(cnt > 0, np.arange(L), L)
    nxt = np.full(cnt.shape, L)
    nxt[:, :-1] = np.minimum.accumulate(pos[:, :0:-1], axis=1)[:, ::-1]
    return nxt


def grow_tree(
    coded: CodedFeatures,
    criterion,
    rows: np.ndarray,
    params: TreeParams,
    rng: np.random.Generator | None = None,
    m_try: int | None = None,
) -> TreeModel:
    """CART growth on the training rows ``rows`` (repeats allowed), one depth level at a time.

    A node is split only when it holds at least ``min_split`` rows, both
    children hold ``min_bucket``, and the criterion gain is at least ``cp``
    times the root deviance and above the criterion's rounding level.
    Among thresholds the smallest best one wins; among features the lowest
    index. With
    ``m_try < n_features`` each node draws its candidate features from
    ``rng``. Nodes are numbered breadth-first.
    """
    rows = np.asarray(rows, dtype=np.int64)
    p = coded.n_features
    m_try = p if m_try is None else m_try
    root_dev = criterion.deviance(rows)
    min_gain = max(params.cp * root_dev, criterion.gain_floor(rows))
    split_w = [w[rows] for w in criterion.split_weights]
    leaf_w = [w[rows] for w in criterion.leaf_weights]
    codes = [c[rows] for c in coded.codes]
    code_mat = np.stack(codes)
    n_levels = [lv.size for lv in coded.levels]

    feature, threshold, left, right = [LEAF], [np.nan], [LEAF], [LEAF]
    value = [float(criterion.leaf_value([w.sum() for w in leaf_w]))]
    n_node = [rows.size]

    pos = np.arange(rows.size)  # row positions still inside frontier nodes
    local = np.zeros(rows.size, dtype=np.int64)  # their frontier index
    frontier = np.array([0])
    depth = 0
    while frontier.size and depth < params.max_depth:
        nn = frontier.size
        counts = np.bincount(local, minlength=nn)
        eligible = counts >= params.min_split
        if not eligible.any():
            break
        if m_try < p:
            draws = np.argsort(rng.random((nn, p)), axis=1)[:, :m_try]
            considers = np.zeros((nn, p), dtype=bool)
            considers[np.arange(nn)[:, None], draws] = True
        else:
            considers = np.ones((nn, p), dtype=bool)
        best_gain = np.full(nn, -np.inf)
        best_f = np.full(nn, -1)
        best_lo = np.zeros(nn, dtype=np.int64)
        best_hi = np.zeros(nn, dtype=np.int64)
        for f in range(p):
            nodes = np.flatnonzero(considers[:, f] & eligible)
            if nodes.size == 0:
                continue
            L = n_levels[f]
            remap = np.full(nn, -1)
            remap[nodes] = np.arange(nodes.size)
            sel = remap[local] >= 0
            key = remap[local[sel]] * L + codes[f][pos[sel]]
            size = nodes.size * L
            cnt = np.bincount(key, minlength=size).reshape(nodes.size, L)
            sums = [np.bincount(key, weights=w[pos[sel]], minlength=size).reshape(nodes.size, L) for w in split_w]
            cc = np.cumsum(cnt, axis=1)
            tc = cc[:, -1:]
            rc = tc - cc
            cum = [np.cumsum(s, axis=1) for s in sums]
            tot = [c[:, -1:] for c in cum]
            rest = [t - c for t, c in zip(tot, cum)]
            g, ok = criterion.gain(cum, rest, tot, cc, rc)
            nxt = _next_present(cnt)
            ok = ok & (cnt > 0) & (nxt < L) & (cc >= params.min_bucket) & (rc >= params.min_bucket)
            g = np.where(ok, g, -np.inf)
            k = np.argmax(g, axis=1)
            gk = g[np.arange(nodes.size), k]
            better = gk > best_gain[nodes]
            upd = nodes[better]
            best_gain[upd] = gk[better]
            best_f[upd] = f
            best_lo[upd] = k[better]
            best_hi[upd] = nxt[np.arange(nodes.size), k][better]
        split = eligible & (best_f >= 0) & (best_gain >= min_gain)
        if not split.any():
            break
        # children of splitting nodes, in frontier order
        child_left = np.full(nn, -1)
        child_right = np.full(nn, -1)
        for i in np.flatnonzero(split):
            node = int(frontier[i])
            f = int(best_f[i])
            vals = coded.levels[f]
            feature[node] = f
            threshold[node] = float(0.5 * (vals[best_lo[i]] + vals[best_hi[i]]))
            for side, store in ((left, child_left), (right, child_right)):
                feature.append(LEAF)
                threshold.append(np.nan)
                left.append(LEAF)
                right.append(LEAF)
                value.append(0.0)
                n_node.append(0)
                side[node] = len(feature) - 1
                store[i] = len(feature) - 1
        keep = split[local]
        pos, local = pos[keep], local[keep]
        f_row = best_f[local]
        code = code_mat[f_row, pos]
        go_left = code <= best_lo[local]
        child = np.where(go_left, child_left[local], child_right[local])
        frontier, local = np.unique(child, return_inverse=True)
        local = local.ravel()
        csum = [np.bincount(local, weights=w[pos], minlength=frontier.size) for w in leaf_w]
        vals = criterion.leaf_value(csum)
        cnts = np.bincount(local, minlength=frontier.size)
        for j, node in enumerate(frontier):
            value[node] = float(vals[j])
            n_node[node] = int(cnts[j])
        depth += 1
    return TreeModel(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=float),
        np.asarray(n_node, dtype=float),
        params,
    )


def grow_poisson_tree(X, D, d, params: TreeParams, rows=None, rng=None, m_try=None) -> TreeModel:
    coded = X if isinstance(X, CodedFeatures) else CodedFeatures(X)
    rows = np.arange(coded.X.shape[0]) if rows is None else rows
    return grow_tree(coded, _PoissonCriterion(D, d), rows, params, rng, m_try)


def grow_regression_tree(X, r, params: TreeParams, rows=None, hessian=None) -> TreeModel:
    """Squared-error tree on ``r``; leaves hold ``sum r / sum hessian`` over their rows."""
    coded = X if isinstance(X, CodedFeatures) else CodedFeatures(X)
    rows = np.arange(coded.X.shape[0]) if rows is None else rows
    return grow_tree(coded, _SquaredErrorCriterion(r, hessian), rows, params)
