"""Worker-side procedure: pick K, run K local steps, return the averaged gradient."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import ConfigurationError, DivergenceError
from .numerics import full_gradient, stochastic_gradient

__all__ = [
    "Constant",
    "DynamicUniform",
    "PerWorkerFixed",
    "PlainSGD",
    "FedProx",
    "Scaffold",
    "WorkerUpdate",
    "choose_local_steps",
    "local_update",
    "delta_on_trajectory",
]


# -- local step policies -----------------------------------------------------


@dataclass(frozen=True)
class Constant:
    c: int

    def __post_init__(self):
        if self.c < 1:
            raise ConfigurationError("local steps must be >= 1")


@dataclass(frozen=True)
class DynamicUniform:
    """K drawn uniformly from the integers ``1..2c``."""

    c: int

    def __post_init__(self):
        if self.c < 1:
            raise ConfigurationError("local steps must be >= 1")


@dataclass(frozen=True)
class PerWorkerFixed:
    steps: tuple

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(int(k) for k in self.steps))
        if not self.steps or min(self.steps) < 1:
            raise ConfigurationError("per-worker steps must be a nonempty list of ints >= 1")


def choose_local_steps(policy, worker_id, round_, rng) -> int:
    if isinstance(policy, Constant):
        return policy.c
    if isinstance(policy, DynamicUniform):
        return int(rng.integers(1, 2 * policy.c + 1))
    if isinstance(policy, PerWorkerFixed):
        return policy.steps[worker_id]
    raise ConfigurationError(f"unknown step policy {policy!r}")


# -- worker optimizers -------------------------------------------------------


@dataclass(frozen=True)
class PlainSGD:
    pass


@dataclass(frozen=True)
class FedProx:
    mu: float = 0.1

    def __post_init__(self):
        if not np.isfinite(self.mu) or self.mu < 0:
            raise ConfigurationError("FedProx mu must be finite and >= 0")


@dataclass(frozen=True, eq=False)
class Scaffold:
    """Control variates for one local run: the worker's ``c_i`` and the server's ``c``.

    ``None`` stands for a zero variate; the simulator substitutes the
    variates it tracks before each local run.
    """

    local_cv: np.ndarray | None = None
    server_cv: np.ndarray | None = None


@dataclass(eq=False)
class WorkerUpdate:
    worker_id: int
    pulled_version: int
    K_used: int
    G: np.ndarray
    grad_sum: np.ndarray
    trajectory: list | None = None
    control_variate: np.ndarray | None = None


def local_update(
    x_pulled,
    version,
    K,
    eta_l,
    opt,
    model,
    worker_data,
    batch_size=None,
    rng=None,
    *,
    sigma_l=0.0,
    worker_id=0,
    record_trajectory=False,
) -> WorkerUpdate:
    """Run ``K`` local steps from ``x_pulled`` and return the rescaled gradient sum.

    PlainSGD and Scaffold average the raw stochastic gradients; FedProx
    averages the proximal-corrected directions it actually applied.
    """
    if eta_l <= 0:
        raise ConfigurationError("eta_l must be positive")
    if K < 1:
        raise ConfigurationError("K must be >= 1")
    x0 = np.asarray(x_pulled, dtype=np.float64)
    x = x0.copy()
    traj = [x0.copy()] if record_trajectory else None
    correction = None
    if isinstance(opt, Scaffold):
        c_local = np.zeros_like(x0) if opt.local_cv is None else opt.local_cv
        c_server = np.zeros_like(x0) if opt.server_cv is None else opt.server_cv
        correction = c_server - c_local

    total = np.zeros_like(x)
    for k in range(K):
        g = stochastic_gradient(model, worker_data, x, batch_size, rng, sigma_l).grad
        if isinstance(opt, FedProx):
            direction = g + opt.mu * (x - x0)
            total = total + direction
        else:
            total = total + g
            direction = g if correction is None else g + correction
        with np.errstate(over="ignore", invalid="ignore"):
            x = x - eta_l * direction
        if not np.all(np.isfinite(x)):
            raise DivergenceError(
                f"worker {worker_id}: non-finite iterate at local step {k}",
                step=k,
                worker=worker_id,
            )
        if record_trajectory:
            traj.append(x.copy())

    cv = None
    if isinstance(opt, Scaffold):
        cv = c_local - c_server + (x0 - x) / (K * eta_l)
    return WorkerUpdate(worker_id, version, K, total / K, total, traj, cv)


def delta_on_trajectory(model, worker_data, trajectory: Sequence) -> np.ndarray:
    """Average full gradient over the iterates a local run actually visited.

    Pass the ``K`` pre-step iterates, i.e. ``update.trajectory[:-1]``.
    """
    if len(trajectory) == 0:
        raise ConfigurationError("empty trajectory")
    total = np.zeros_like(np.asarray(trajectory[0], dtype=np.float64))
    for xj in trajectory:
        total = total + full_gradient(model, worker_data, xj)
    return total / len(trajectory)
