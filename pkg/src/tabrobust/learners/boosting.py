"""Logistic-loss gradient boosting with first-order (GBM) and Newton (XGBoost) trees."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .tree import Binner, FitError, PredictionError, Tree, grow


@dataclass
class BoostParams:
    learning_rate: float = 0.1
    n_estimators: int = 100
    max_depth: int | None = 3
    min_split_loss: float = 0.0
    col_subsample_tree: float = 1.0
    col_subsample_level: float = 1.0
    order: str = "first"  # first | second
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    min_child_weight: float = 1.0  # hessian floor, second order only
    reg_lambda: float = 1.0  # second order only
    max_bins: int = 256
    growth: str = "depthwise"  # depthwise | lossguide
    max_leaves: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.order not in ("first", "second"):
            raise ValueError(f"order must be first or second, got {self.order!r}")
        if self.growth not in ("depthwise", "lossguide"):
            raise ValueError(f"growth must be depthwise or lossguide, got {self.growth!r}")
        if not 0 < self.col_subsample_tree <= 1 or not 0 < self.col_subsample_level <= 1:
            raise ValueError("column subsample ratios must lie in (0, 1]")
        if self.learning_rate < 0 or self.n_estimators < 0:
            raise ValueError("learning_rate and n_estimators must be nonnegative")


@dataclass
class BoostedEnsemble:
    base_score: float
    trees: list[Tree]
    learning_rate: float
    order: str
    n_features: int
    params: dict = field(default_factory=dict)
    train_loss: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise PredictionError(f"expected {self.n_features} columns, got shape {X.shape}")
        f = np.full(len(X), self.base_score)
        for t in self.trees:
            f += self.learning_rate * t.predict(X)
        return f

    def predict(self, X) -> np.ndarray:
        return expit(self.decision_function(X))


def log_loss_from_margin(y: np.ndarray, f: np.ndarray) -> float:
    # log(1 + e^f) - y f, stable for large |f|
    return float(np.mean(np.logaddexp(0.0, f) - y * f))


def _newton_leaf_values(leaf_of: np.ndarray, resid: np.ndarray, hess: np.ndarray, n_nodes: int):
    num = np.bincount(leaf_of, weights=resid, minlength=n_nodes)
    den = np.bincount(leaf_of, weights=hess, minlength=n_nodes)
    out = np.zeros(n_nodes)
    ok = np.abs(den) >= 1e-150
    out[ok] = num[ok] / den[ok]
    return out


def fit_boosted(X, y, params: BoostParams | None = None, **overrides) -> BoostedEnsemble:
    """Boost regression trees on the logistic loss.

    ``first`` order fits variance-reduction trees to the residuals ``y - p``
    and sets each leaf to the Newton step sum(y - p) / sum(p (1 - p)).
    ``second`` order grows trees on gradient/hessian statistics with the
    regularized gain and leaf value ``-G / (H + lambda)``.
    """
    p = params or BoostParams()
    if overrides:
        p = BoostParams(**(asdict(p) | overrides))
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(X) == 0 or len(y) != len(X):
        raise FitError("need a nonempty X with matching y")
    prior = y.mean()
    if prior <= 0 or prior >= 1:
        raise FitError("training labels contain a single class")
    n, d = X.shape
    base = float(np.log(prior / (1 - prior)))
    binner = Binner(p.max_bins).fit(X)
    Xb = binner.transform(X)
    sparse = Binner.sparse(Xb)
    rng = np.random.default_rng(p.seed)
    f = np.full(n, base)
    ones = np.ones(n)
    rows = np.arange(n, dtype=np.int64)
    trees: list[Tree] = []
    losses = [log_loss_from_margin(y, f)]
    k_tree = max(1, int(p.col_subsample_tree * d))
    for _ in range(p.n_estimators):
        if k_tree < d:
            feats = np.sort(rng.choice(d, size=k_tree, replace=False))
        else:
            feats = np.arange(d)
        tree_seed = int(rng.integers(2**31))
        prob = expit(f)
        hess = prob * (1 - prob)
        common = dict(sparse=sparse, tree_feats=feats, max_depth=p.max_depth, min_samples_split=p.min_samples_split,
                      min_samples_leaf=p.min_samples_leaf, colsample_level=p.col_subsample_level,
                      max_leaves=p.max_leaves, best_first=p.growth == "lossguide", seed=tree_seed)
        if p.order == "first":
            resid = y - prob
            tree, leaf_of = grow(binner, Xb, resid, ones, ones, rows, mode=0, **common)
            tree.value = _newton_leaf_values(leaf_of, resid, hess, tree.node_count)
        else:
            tree, leaf_of = grow(binner, Xb, prob - y, hess, ones, rows, mode=1, lam=p.reg_lambda,
                                 gamma=p.min_split_loss, min_child_weight=p.min_child_weight, **common)
        f = f + p.learning_rate * tree.value[leaf_of]
        trees.append(tree)
        losses.append(log_loss_from_margin(y, f))
    return BoostedEnsemble(base_score=base, trees=trees, learning_rate=p.learning_rate,
                           order=p.order, n_features=d, params=asdict(p),
                           train_loss=np.asarray(losses))
