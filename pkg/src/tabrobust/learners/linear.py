"""L2-regularized linear classifiers trained by full-batch gradient descent.

The objective per example is ``loss(y, w.x + b) + ||w||^2 / (2 C n)``, i.e.
``C * sum(loss) + ||w||^2 / 2`` rescaled by ``1 / (C n)``. The optional
random-Fourier-feature map approximates an RBF kernel of bandwidth gamma.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .tree import FitError, PredictionError

logger = logging.getLogger(__name__)

KINDS = ("logistic", "squared_hinge")


@dataclass
class RandomFourierFeatures:
    omega: np.ndarray  # d x m, entries ~ N(0, 2 gamma)
    phase: np.ndarray  # m, ~ U[0, 2 pi)
    gamma: float

    @classmethod
    def sample(cls, d: int, n_components: int, gamma: float, seed: int) -> RandomFourierFeatures:
        rng = np.random.default_rng(seed)
        omega = rng.normal(0.0, np.sqrt(2.0 * gamma), size=(d, n_components))
        phase = rng.uniform(0.0, 2 * np.pi, size=n_components)
        return cls(omega, phase, float(gamma))

    def transform(self, X) -> np.ndarray:
        m = self.omega.shape[1]
        return np.sqrt(2.0 / m) * np.cos(np.asarray(X, dtype=np.float64) @ self.omega + self.phase)


@dataclass
class LinearParams:
    kind: str = "logistic"
    l2_c: float = 1.0
    lr: float | None = None  # None: 1 / (smoothness bound)
    iters: int = 1000
    tol: float = 1e-6
    n_components: int = 0  # > 0 switches on the RFF map
    gamma: float = 1.0
    seed: int = 0


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float
    kind: str
    n_features: int
    rff: RandomFourierFeatures | None = None
    params: dict = field(default_factory=dict)
    n_iter: int = 0

    def features(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise PredictionError(f"expected {self.n_features} columns, got shape {X.shape}")
        return self.rff.transform(X) if self.rff is not None else X

    def margin(self, X) -> np.ndarray:
        return self.features(X) @ self.weights + self.bias

    def predict(self, X) -> np.ndarray:
        # both kinds report sigmoid(margin) so 0.5 is the decision threshold
        return expit(self.margin(X))


def objective_and_grad(theta: np.ndarray, Z: np.ndarray, y: np.ndarray, C: float, kind: str):
    """Mean regularized loss and its gradient; theta = (w, b), y in {0, 1}."""
    n = len(y)
    w, b = theta[:-1], theta[-1]
    m = Z @ w + b
    if kind == "logistic":
        loss = np.logaddexp(0.0, m) - y * m
        dm = expit(m) - y
    elif kind == "squared_hinge":
        s = 2 * y - 1
        slack = np.maximum(0.0, 1 - s * m)
        loss = slack**2
        dm = -2 * s * slack
    else:
        raise FitError(f"unknown linear kind {kind!r}; expected one of {KINDS}")
    obj = loss.mean() + w @ w / (2 * C * n)
    grad = np.empty_like(theta)
    grad[:-1] = Z.T @ dm / n + w / (C * n)
    grad[-1] = dm.mean()
    return float(obj), grad


def _smoothness(Z: np.ndarray, C: float, kind: str) -> float:
    n = len(Z)
    Za = np.hstack([Z, np.ones((n, 1))])
    top = np.linalg.norm(Za, 2) ** 2 / n
    curv = 0.25 if kind == "logistic" else 2.0
    return curv * top + 1.0 / (C * n)


def fit_linear(X, y, params: LinearParams | None = None, **overrides) -> LinearModel:
    p = params or LinearParams()
    if overrides:
        p = LinearParams(**(asdict(p) | overrides))
    if p.l2_c <= 0:
        raise FitError("l2_c must be positive")
    if p.kind not in KINDS:
        raise FitError(f"unknown linear kind {p.kind!r}; expected one of {KINDS}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(X) == 0 or len(y) != len(X):
        raise FitError("need a nonempty X with matching y")
    if np.abs(X).max(initial=0.0) > 1e3:
        logger.warning("features look unstandardized (max |x| = %.3g)", np.abs(X).max())
    d = X.shape[1]
    rff = None
    if p.n_components > 0:
        rff = RandomFourierFeatures.sample(d, p.n_components, p.gamma, p.seed)
        Z = rff.transform(X)
    else:
        Z = X
    theta = np.zeros(Z.shape[1] + 1)
    lr = p.lr if p.lr is not None else 1.0 / _smoothness(Z, p.l2_c, p.kind)
    it = 0
    for it in range(1, p.iters + 1):
        _, g = objective_and_grad(theta, Z, y, p.l2_c, p.kind)
        if np.linalg.norm(g) < p.tol:
            break
        theta -= lr * g
        if not np.all(np.isfinite(theta)):
            raise FitError("gradient descent diverged")
    return LinearModel(weights=theta[:-1].copy(), bias=float(theta[-1]), kind=p.kind,
                       n_features=d, rff=rff, params=asdict(p), n_iter=it)
