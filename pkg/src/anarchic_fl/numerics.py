"""Local objectives and their gradient oracles.

Three families are supported:

* :class:`Quadratic` -- ``f_i(x) = 0.5 * ||x - c_i||^2``
* :class:`ShiftedSquare` -- the one-dimensional pair ``(x + G)^2`` / ``(x - G)^2``
  used for the arrival lower bound
* :class:`LogReg` -- multinomial logistic regression (softmax cross-entropy)
  over a worker's local samples

Parameters are flat ``float64`` arrays.  For :class:`LogReg` the layout is
the row-major ``C x d`` weight matrix followed by ``C`` biases.

Analytic families ignore ``data`` and emulate sampling noise with additive
isotropic Gaussian noise whose total variance is ``sigma_l**2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import ConfigurationError, DataError

__all__ = [
    "Quadratic",
    "ShiftedSquare",
    "LogReg",
    "GradSample",
    "FederatedProblem",
    "full_gradient",
    "stochastic_gradient",
    "loss_eval",
    "accuracy",
    "finite_diff_check",
    "smoothness_bound",
    "quadratic_problem",
    "shifted_square_pair",
    "logreg_problem",
]


@dataclass(frozen=True, eq=False)
class Quadratic:
    center: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=np.float64))
        if c.ndim != 1 or not np.all(np.isfinite(c)):
            raise ConfigurationError("Quadratic center must be a finite 1-d vector")
        object.__setattr__(self, "center", c)

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    smoothness = 1.0


@dataclass(frozen=True)
class ShiftedSquare:
    """``(x - sign * G)^2``; ``sign=-1`` gives ``(x + G)^2``."""

    sign: int
    G: float

    def __post_init__(self):
        if self.sign not in (-1, 1):
            raise ConfigurationError("ShiftedSquare sign must be -1 or +1")

    dim = 1
    smoothness = 2.0


@dataclass(frozen=True)
class LogReg:
    n_features: int
    n_classes: int
    l2: float = 0.0

    def __post_init__(self):
        if self.n_features < 1 or self.n_classes < 2:
            raise ConfigurationError("LogReg needs n_features >= 1 and n_classes >= 2")
        if self.l2 < 0:
            raise ConfigurationError("l2 must be non-negative")

    @property
    def dim(self) -> int:
        return self.n_classes * (self.n_features + 1)

    def unpack(self, x):
        C, d = self.n_classes, self.n_features
        return x[: C * d].reshape(C, d), x[C * d :]


@dataclass
class GradSample:
    grad: np.ndarray
    is_stochastic: bool
    batch_size: int = 1


def _check_x(model, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.dim:
        raise ConfigurationError(
            f"parameter vector has shape {x.shape}, model expects ({model.dim},)"
        )
    return x


def _xy(data):
    if data is None:
        raise DataError("LogReg requires worker data")
    X, y = data.features, data.labels
    if len(y) == 0:
        raise DataError("empty partition")
    return X, y


def _softmax_residual(model: LogReg, X, y, x):
    W, b = model.unpack(x)
    logits = X @ W.T + b
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(len(y)), y] -= 1.0
    return p


def _logreg_grad(model: LogReg, X, y, x):
    W, _ = model.unpack(x)
    r = _softmax_residual(model, X, y, x)
    n = len(y)
    gW = r.T @ X / n
    if model.l2:
        gW = gW + model.l2 * W
    gb = r.sum(axis=0) / n
    return np.concatenate([gW.ravel(), gb])


def full_gradient(model, data, x) -> np.ndarray:
    """Exact local gradient over the worker's whole local dataset."""
    x = _check_x(model, x)
    if isinstance(model, Quadratic):
        return x - model.center
    if isinstance(model, ShiftedSquare):
        return 2.0 * (x - model.sign * model.G)
    if isinstance(model, LogReg):
        X, y = _xy(data)
        return _logreg_grad(model, X, y, x)
    raise ConfigurationError(f"unknown model family {type(model).__name__}")


def stochastic_gradient(model, data, x, batch_size=None, rng=None, sigma_l=0.0) -> GradSample:
    """Unbiased stochastic estimate of :func:`full_gradient`.

    LogReg draws a mini-batch without replacement; a batch covering the whole
    partition (or ``batch_size=None``) returns the exact gradient.  Analytic
    families add ``N(0, sigma_l^2 / d)`` noise per coordinate.
    """
    if isinstance(model, LogReg):
        X, y = _xy(data)
        n = len(y)
        if batch_size is None or batch_size == n:
            return GradSample(full_gradient(model, data, x), False, n)
        if batch_size < 1 or batch_size > n:
            raise DataError(f"batch size {batch_size} exceeds partition size {n}")
        idx = rng.choice(n, size=batch_size, replace=False)
        x = _check_x(model, x)
        return GradSample(_logreg_grad(model, X[idx], y[idx], x), True, batch_size)

    g = full_gradient(model, data, x)
    if sigma_l == 0:
        return GradSample(g, False, 1)
    if sigma_l < 0:
        raise ConfigurationError("sigma_l must be non-negative")
    noise = rng.normal(0.0, sigma_l / np.sqrt(model.dim), size=model.dim)
    return GradSample(g + noise, True, 1)


def loss_eval(model, data, x) -> float:
    x = _check_x(model, x)
    if isinstance(model, Quadratic):
        r = x - model.center
        return 0.5 * float(r @ r)
    if isinstance(model, ShiftedSquare):
        return float((x[0] - model.sign * model.G) ** 2)
    if isinstance(model, LogReg):
        X, y = _xy(data)
        W, b = model.unpack(x)
        logits = X @ W.T + b
        m = logits.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
        loss = float(np.mean(lse - logits[np.arange(len(y)), y]))
        if model.l2:
            loss += 0.5 * model.l2 * float(np.sum(W * W))
        return loss
    raise ConfigurationError(f"unknown model family {type(model).__name__}")


def accuracy(model: LogReg, data, x) -> float:
    x = _check_x(model, x)
    X, y = _xy(data)
    W, b = model.unpack(x)
    return float(np.mean(np.argmax(X @ W.T + b, axis=1) == y))


def finite_diff_check(model, data, x, h=1e-5) -> float:
    """Max over coordinates of ``|central_diff - analytic| / (|analytic| + h)``."""
    if h <= 0:
        raise ConfigurationError("h must be positive")
    x = _check_x(model, x)
    g = full_gradient(model, data, x)
    worst = 0.0
    e = np.zeros_like(x)
    for j in range(x.shape[0]):
        e[j] = h
        fd = (loss_eval(model, data, x + e) - loss_eval(model, data, x - e)) / (2 * h)
        e[j] = 0.0
        worst = max(worst, abs(fd - g[j]) / (abs(g[j]) + h))
    return worst


def smoothness_bound(model, data=None) -> float:
    """Upper bound on the local gradient's Lipschitz constant.

    For LogReg the softmax Hessian block is at most 1/2 in spectral norm, so
    ``L <= lambda_max(E[x x^T]) / 2 + l2`` with ``x`` the bias-augmented features.
    """
    if isinstance(model, (Quadratic, ShiftedSquare)):
        return model.smoothness
    X, _ = _xy(data)
    Xa = np.hstack([X, np.ones((X.shape[0], 1))])
    second_moment = Xa.T @ Xa / X.shape[0]
    return 0.5 * float(np.linalg.eigvalsh(second_moment)[-1]) + model.l2


@dataclass
class FederatedProblem:
    """One local objective per worker; the global objective is their plain mean."""

    models: list
    data: list = field(default=None)
    test_data: list | None = None

    def __post_init__(self):
        if not self.models:
            raise ConfigurationError("a problem needs at least one worker")
        if self.data is None:
            self.data = [None] * len(self.models)
        if len(self.data) != len(self.models):
            raise ConfigurationError("models and data must have one entry per worker")
        dims = {m.dim for m in self.models}
        if len(dims) != 1:
            raise ConfigurationError(f"workers disagree on model dimension: {sorted(dims)}")

    @property
    def n_workers(self) -> int:
        return len(self.models)

    @property
    def dim(self) -> int:
        return self.models[0].dim

    def smoothness(self) -> float:
        """Largest local smoothness bound across workers."""
        return max(smoothness_bound(m, d) for m, d in zip(self.models, self.data))

    def local_gradient(self, i, x):
        return full_gradient(self.models[i], self.data[i], x)

    def gradient(self, x):
        total = np.zeros(self.dim)
        for i in range(self.n_workers):
            total = total + self.local_gradient(i, x)
        return total / self.n_workers

    def loss(self, x) -> float:
        total = 0.0
        for m, d in zip(self.models, self.data):
            total += loss_eval(m, d, x)
        return total / self.n_workers

    def test_accuracy(self, x) -> float | None:
        if self.test_data is None or not isinstance(self.models[0], LogReg):
            return None
        correct = 0
        count = 0
        for m, d in zip(self.models, self.test_data):
            n = len(d.labels)
            correct += accuracy(m, d, x) * n
            count += n
        return correct / count


def quadratic_problem(centers: Sequence) -> FederatedProblem:
    return FederatedProblem([Quadratic(np.asarray(c, dtype=np.float64)) for c in centers])


def shifted_square_pair(G: float) -> FederatedProblem:
    """Two workers with ``f_1 = (x + G)^2`` and ``f_2 = (x - G)^2``."""
    return FederatedProblem([ShiftedSquare(-1, G), ShiftedSquare(1, G)])


def logreg_problem(partitions, l2=0.0, test_partitions=None) -> FederatedProblem:
    ds = partitions[0].dataset
    model = LogReg(ds.n_features, ds.n_classes, l2)
    return FederatedProblem([model] * len(partitions), list(partitions), test_partitions)
