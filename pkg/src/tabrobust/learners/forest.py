"""Bootstrap random forest of Gini trees with optional cost-complexity pruning."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .tree import Binner, FitError, PredictionError, Tree, grow, resolve_max_features


@dataclass
class ForestParams:
    n_estimators: int = 100
    max_features: str | int | float | None = "sqrt"
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    ccp_alpha: float = 0.0
    max_depth: int | None = None
    bootstrap: bool = True
    max_bins: int | None = 256
    seed: int = 0


@dataclass
class ForestEnsemble:
    trees: list[Tree]
    n_features: int
    params: dict = field(default_factory=dict)

    def predict(self, X) -> np.ndarray:
        """Mean over trees of the leaf positive-class fraction."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise PredictionError(f"expected {self.n_features} columns, got shape {X.shape}")
        out = np.zeros(len(X))
        for t in self.trees:
            out += t.predict(X)
        return out / len(self.trees)


def fit_forest(X, y, params: ForestParams | None = None, **overrides) -> ForestEnsemble:
    """Each tree sees a size-n bootstrap sample, carried as integer row weights.

    Min-samples rules count distinct rows, so a row drawn twice counts once
    there but twice in the class fractions.
    """
    p = params or ForestParams()
    if overrides:
        p = ForestParams(**(asdict(p) | overrides))
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(X) == 0 or len(y) != len(X):
        raise FitError("need a nonempty X with matching y")
    if len(np.unique(y)) < 2:
        raise FitError("training labels contain a single class")
    if p.n_estimators < 1:
        raise FitError("n_estimators must be positive")
    n, d = X.shape
    binner = Binner(p.max_bins).fit(X)
    Xb = binner.transform(X)
    sparse = Binner.sparse(Xb)
    k = resolve_max_features(p.max_features, d)
    rng = np.random.default_rng(p.seed)
    ones = np.ones(n)
    trees = []
    for _ in range(p.n_estimators):
        if p.bootstrap:
            w = np.bincount(rng.integers(0, n, n), minlength=n).astype(np.float64)
        else:
            w = ones
        tree_seed = int(rng.integers(2**31))
        rows = np.nonzero(w > 0)[0]
        tree, _ = grow(binner, Xb, w * y, w, ones, rows, sparse=sparse, mode=0,
                       max_depth=p.max_depth, min_samples_split=p.min_samples_split,
                       min_samples_leaf=p.min_samples_leaf, max_features=k, seed=tree_seed,
                       impurity_scale=2.0)
        trees.append(tree.prune(p.ccp_alpha))
    return ForestEnsemble(trees=trees, n_features=d, params=asdict(p))
