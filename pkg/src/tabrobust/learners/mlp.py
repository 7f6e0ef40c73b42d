"""ReLU multilayer perceptron trained with momentum SGD and best-epoch checkpointing."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from ..robust import GroupWeights, Objective, ObjectiveError, batch_loss, validation_objective
from .tree import FitError, PredictionError

logger = logging.getLogger(__name__)


class TrainingDiverged(FitError):
    pass


@dataclass
class MlpParams:
    num_layers: int = 2
    hidden_units: int = 64
    lr: float = 0.01
    weight_decay: float = 0.0
    momentum: float = 0.0
    epochs: int = 50
    batch_size: int = 128
    seed: int = 0


def layer_sizes(d: int, num_layers: int, hidden_units: int) -> tuple[int, ...]:
    return (d,) + (hidden_units,) * num_layers + (1,)


def n_params(sizes) -> int:
    return sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))


def unpack(theta: np.ndarray, sizes) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views (W, b) per layer into the flat parameter vector."""
    out = []
    i = 0
    for a, b in zip(sizes[:-1], sizes[1:]):
        W = theta[i:i + a * b].reshape(a, b)
        i += a * b
        out.append((W, theta[i:i + b]))
        i += b
    return out


def init_params(sizes, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    theta = np.zeros(n_params(sizes))
    for (W, _), a, b in zip(unpack(theta, sizes), sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (a + b))
        W[...] = rng.uniform(-lim, lim, size=(a, b))
    return theta


def forward(theta: np.ndarray, sizes, X: np.ndarray):
    """Output logits and the hidden activations needed for backprop."""
    acts = [X]
    h = X
    layers = unpack(theta, sizes)
    for W, b in layers[:-1]:
        h = np.maximum(h @ W + b, 0.0)
        acts.append(h)
    W, b = layers[-1]
    return (h @ W + b)[:, 0], acts


def example_losses(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    # BCE from logits: softplus(z) - y z
    return np.logaddexp(0.0, z) - y * z


def weighted_loss_grad(theta: np.ndarray, sizes, X, y, q) -> tuple[float, np.ndarray]:
    """sum_i q_i l_i(theta) and its gradient, q held fixed."""
    z, acts = forward(theta, sizes, X)
    losses = example_losses(z, y)
    grad = np.zeros_like(theta)
    g_layers = unpack(grad, sizes)
    layers = unpack(theta, sizes)
    delta = (q * (expit(z) - y))[:, None]
    for j in range(len(layers) - 1, -1, -1):
        gW, gb = g_layers[j]
        gW[...] = acts[j].T @ delta
        gb[...] = delta.sum(axis=0)
        if j > 0:
            delta = (delta @ layers[j][0].T) * (acts[j] > 0)
    return float(q @ losses), grad


@dataclass
class MlpModel:
    sizes: tuple[int, ...]
    theta: np.ndarray
    params: dict = field(default_factory=dict)
    objective: dict = field(default_factory=dict)
    best_epoch: int = -1
    val_history: list[float] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return self.sizes[0]

    def logits(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.sizes[0]:
            raise PredictionError(f"expected {self.sizes[0]} columns, got shape {X.shape}")
        return forward(self.theta, self.sizes, X)[0]

    def predict(self, X) -> np.ndarray:
        return expit(self.logits(X))


def fit_mlp(X, y, g, X_val, y_val, g_val, params: MlpParams | None = None,
            objective: Objective | None = None, **overrides) -> MlpModel:
    """Momentum SGD (v <- mu v - lr grad; theta <- theta + v) with decoupled decay.

    Weight decay subtracts ``lr * wd * theta`` each step. After every epoch
    the objective's validation functional is evaluated and the parameters
    with the lowest value are returned.
    """
    p = params or MlpParams()
    if overrides:
        p = MlpParams(**(asdict(p) | overrides))
    obj = objective or Objective()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    g = np.asarray(g, dtype=np.int64)
    if len(X) == 0 or len(X_val) == 0:
        raise FitError("train and validation splits must be nonempty")
    rng = np.random.default_rng(p.seed)
    sizes = layer_sizes(X.shape[1], p.num_layers, p.hidden_units)
    theta = init_params(sizes, rng)
    v = np.zeros_like(theta)
    state = GroupWeights(eta=obj.eta) if obj.variant == "group_dro" else None
    best = theta.copy()
    best_val = np.inf
    best_epoch = -1
    history = []
    n = len(X)
    for epoch in range(p.epochs):
        perm = rng.permutation(n)
        for s in range(0, n, p.batch_size):
            idx = perm[s:s + p.batch_size]
            z, _ = forward(theta, sizes, X[idx])
            losses = example_losses(z, y[idx])
            try:
                bl = batch_loss(obj, losses, g[idx], state)
            except ObjectiveError as e:
                if not np.all(np.isfinite(losses)):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch}") from e
                logger.debug("batch skipped: %s", e)
                continue
            if not np.isfinite(bl.loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            state = bl.state
            _, grad = weighted_loss_grad(theta, sizes, X[idx], y[idx], bl.weights)
            if obj.l2:
                grad += obj.l2 * theta
            v = p.momentum * v - p.lr * grad
            theta = theta + v - p.lr * p.weight_decay * theta
            if not np.all(np.isfinite(theta)):
                raise TrainingDiverged(f"parameters diverged at epoch {epoch}")
        score = expit(forward(theta, sizes, np.asarray(X_val, dtype=np.float64))[0])
        val = validation_objective(obj, score, y_val, g_val)
        history.append(val)
        if not np.isfinite(val):
            raise TrainingDiverged(f"non-finite validation objective at epoch {epoch}")
        if val < best_val:
            best_val, best, best_epoch = val, theta.copy(), epoch
    return MlpModel(sizes=sizes, theta=best, params=asdict(p), objective=obj.to_dict(),
                    best_epoch=best_epoch, val_history=history)
