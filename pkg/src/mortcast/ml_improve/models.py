"""Improvement-factor models: single tree, random forest and Poisson gradient boosting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numcore.irls import poisson_deviance
from .trees import CodedFeatures, TreeModel, TreeParams, grow_poisson_tree, grow_regression_tree


@dataclass
class ForestParams:
    n_trees: int = 500
    m_try: int = 1
    min_node: int = 5
    bootstrap: bool = True
    max_depth: int = 30
    seed: int = 0


@dataclass
class GbmParams:
    n_iter: int = 500
    shrinkage: float = 0.05
    depth: int = 3
    bag_fraction: float = 0.5
    min_obs: int = 10
    seed: int = 0


@dataclass
class ForestModel:
    trees: list[TreeModel]
    params: ForestParams
    seeds: list[int] = field(default_factory=list)
    oob_prediction: np.ndarray | None = None

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        total = np.zeros(X.shape[0])
        for tree in self.trees:
            total = total + tree.predict(X)
        return total / len(self.trees)

    def to_dict(self) -> dict:
        return {
            "model": "rf",
            "params": vars(self.params),
            "seeds": list(self.seeds),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        return cls([TreeModel.from_dict(t) for t in d["trees"]], ForestParams(**d["params"]), d.get("seeds", []))


@dataclass
class GbmModel:
    """Boosted log-scale model; ``q = exp(initial + sum_j shrinkage * h_j)``.

    ``step_scale[j]`` records any step halving applied to stage ``j``; it is
    folded into ``trees[j]`` leaf values, so the staged identity holds with
    the stored trees as-is.
    """

    initial: float
    trees: list[TreeModel]
    shrinkage: float
    params: GbmParams
    step_scale: list[float] = field(default_factory=list)
    train_deviance: list[float] = field(default_factory=list)

    def decision_function(self, X, n_stages: int | None = None) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        F = np.full(X.shape[0], self.initial)
        for tree in self.trees[:n_stages]:
            F = F + self.shrinkage * tree.predict(X)
        return F

    def predict(self, X, n_stages: int | None = None) -> np.ndarray:
        return np.exp(self.decision_function(X, n_stages))

    def staged_decision(self, X):
        X = np.asarray(X, dtype=float)
        F = np.full(X.shape[0], self.initial)
        yield F.copy()
        for tree in self.trees:
            F = F + self.shrinkage * tree.predict(X)
            yield F.copy()

    def to_dict(self) -> dict:
        return {
            "model": "gbm",
            "initial": self.initial,
            "shrinkage": self.shrinkage,
            "params": vars(self.params),
            "step_scale": list(self.step_scale),
            "train_deviance": list(self.train_deviance),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbmModel":
        return cls(
            d["initial"],
            [TreeModel.from_dict(t) for t in d["trees"]],
            d["shrinkage"],
            GbmParams(**d["params"]),
            d.get("step_scale", []),
            d.get("train_deviance", []),
        )


def fit_poisson_tree(X, D, d, params: TreeParams | None = None) -> TreeModel:
    params = params or TreeParams()
    if len(D) < params.min_split:
        raise ValueError(f"need at least min_split={params.min_split} rows, got {len(D)}")
    return grow_poisson_tree(X, D, d, params)


def fit_poisson_forest(X, D, d, params: ForestParams | None = None) -> ForestModel:
    params = params or ForestParams()
    if params.n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    coded = CodedFeatures(X)
    n = coded.X.shape[0]
    tree_params = TreeParams(
        min_split=2 * params.min_node, min_bucket=params.min_node, cp=0.0, max_depth=params.max_depth
    )
    children = np.random.SeedSequence(params.seed).spawn(params.n_trees)
    seeds = [int(c.generate_state(1)[0]) for c in children]
    trees = []
    oob_sum = np.zeros(n)
    oob_cnt = np.zeros(n)
    m_try = min(params.m_try, coded.n_features)
    for s in seeds:
        rng = np.random.default_rng(s)
        rows = rng.integers(0, n, n) if params.bootstrap else np.arange(n)
        tree = grow_poisson_tree(coded, D, d, tree_params, rows, rng, m_try)
        trees.append(tree)
        if params.bootstrap:
            oob = np.ones(n, dtype=bool)
            oob[rows] = False
            oob_sum[oob] += tree.predict(coded.X[oob])
            oob_cnt[oob] += 1
    oob_pred = None
    if params.bootstrap:
        with np.errstate(invalid="ignore", divide="ignore"):
            oob_pred = np.where(oob_cnt > 0, oob_sum / oob_cnt, np.nan)
    return ForestModel(trees, params, seeds, oob_pred)


def fit_poisson_gbm(X, D, d, params: GbmParams | None = None) -> GbmModel:
    """Stagewise Poisson boosting of ``log q`` with exposure ``d``.

    Each stage fits a depth-limited squared-error tree to the gradient
    ``D - d * exp(F)`` on a subsample, then sets each leaf to the Newton
    step ``sum(D - w) / sum(w)`` over its in-bag rows, ``w = d * exp(F)``.
    A stage that would raise the full training deviance is halved until it
    does not (and dropped to zero after 30 halvings).
    """
    params = params or GbmParams()
    if params.n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    D = np.asarray(D, dtype=float)
    d = np.asarray(d, dtype=float)
    coded = CodedFeatures(X)
    n = D.size
    rng = np.random.default_rng(params.seed)
    F0 = float(np.log(D.sum() / d.sum()))
    F = np.full(n, F0)
    tp = TreeParams(min_split=2 * params.min_obs, min_bucket=params.min_obs, cp=0.0, max_depth=params.depth)
    n_bag = max(int(np.floor(params.bag_fraction * n)), 1) if params.bag_fraction < 1 else n
    trees, scales = [], []
    dev = poisson_deviance(D, d * np.exp(F))
    devs = [dev]
    for _ in range(params.n_iter):
        w = d * np.exp(F)
        r = D - w
        rows = np.sort(rng.choice(n, size=n_bag, replace=False)) if n_bag < n else np.arange(n)

        tree = grow_regression_tree(coded, r, tp, rows, hessian=w)
        h = tree.value[tree.apply(coded.X)]
        scale = 1.0
        for _halving in range(30):
            new_F = F + params.shrinkage * scale * h
            new_dev = poisson_deviance(D, d * np.exp(new_F))
            if new_dev <= dev:
                break
            scale *= 0.5
        else:
            scale = 0.0
            new_F, new_dev = F, dev
        if scale != 1.0:
            tree.value = tree.value * scale
            new_F = F + params.shrinkage * tree.value[tree.apply(coded.X)]
            new_dev = poisson_deviance(D, d * np.exp(new_F))
        F, dev = new_F, new_dev
        trees.append(tree)
        scales.append(scale)
        devs.append(dev)
    return GbmModel(F0, trees, params.shrinkage, params, scales, devs)
