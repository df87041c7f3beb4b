"""Server-side aggregation (AFA-CD, AFA-CS) and learning-rate condition checks.

The server applies the two-sided step ``x_{t+1} = x_t - eta * eta_l * G_t``
where ``G_t`` is the plain average of the rescaled worker returns.
"""

from __future__ import annotations

import warnings
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .exceptions import (
    BoundedDelayError,
    ConfigurationError,
    StaleOverwriteWarning,
    WarmStartError,
)

__all__ = [
    "VersionRing",
    "Slot",
    "MemoryTable",
    "ServerState",
    "StepStats",
    "Inequality",
    "ConditionReport",
    "afa_cd_aggregate",
    "afa_cs_ingest",
    "afa_cs_aggregate",
    "step_stats",
    "check_lr_conditions",
    "scaffold_server_update",
    "THEOREMS",
]

THEOREMS = ("cd-general", "cd-uniform", "cs")


class VersionRing:
    """The most recent ``capacity`` global models, keyed by round."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigurationError("ring capacity must be >= 1")
        self.capacity = capacity
        self._models: OrderedDict[int, np.ndarray] = OrderedDict()

    def push(self, version: int, x: np.ndarray) -> None:
        if self._models and version != self.latest + 1:
            raise ConfigurationError(f"ring expects version {self.latest + 1}, got {version}")
        self._models[version] = x
        while len(self._models) > self.capacity:
            self._models.popitem(last=False)

    @property
    def latest(self) -> int:
        return next(reversed(self._models))

    @property
    def oldest(self) -> int:
        return next(iter(self._models))

    def get(self, version: int) -> np.ndarray:
        try:
            return self._models[version]
        except KeyError:
            raise BoundedDelayError(
                f"model version {version} not held (ring covers {self.oldest}..{self.latest})"
            ) from None

    def __contains__(self, version):
        return version in self._models

    def __len__(self):
        return len(self._models)


@dataclass(frozen=True, eq=False)
class Slot:
    G: np.ndarray | None = None
    version: int = -1
    K: int = 0

    @property
    def initialized(self) -> bool:
        return self.G is not None


@dataclass(frozen=True, eq=False)
class MemoryTable:
    """Latest return from every worker (AFA-CS)."""

    slots: tuple

    @classmethod
    def empty(cls, n_workers: int) -> "MemoryTable":
        return cls(tuple(Slot() for _ in range(n_workers)))

    @property
    def n_workers(self) -> int:
        return len(self.slots)

    @property
    def all_initialized(self) -> bool:
        return all(s.initialized for s in self.slots)

    def fresh_count(self, t: int) -> int:
        return sum(1 for s in self.slots if s.version == t)

    def staleness(self, t: int) -> list[int]:
        return [t - s.version for s in self.slots]


@dataclass
class ServerState:
    t: int
    x: np.ndarray
    ring: VersionRing
    mode: str = "cd"
    memory: MemoryTable | None = None
    server_cv: np.ndarray | None = None
    local_cvs: list | None = None
    last_round: object = None
    last_updates: list | None = None

    @classmethod
    def initial(cls, x0, max_staleness: int, mode="cd", n_workers=None) -> "ServerState":
        x0 = np.asarray(x0, dtype=np.float64).copy()
        ring = VersionRing(max_staleness + 1)
        ring.push(0, x0)
        memory = MemoryTable.empty(n_workers) if mode == "cs" else None
        return cls(0, x0, ring, mode, memory)


def _check_staleness(t, versions, max_staleness):
    if t is None or max_staleness is None:
        return
    for wid, v in versions:
        if t - v > max_staleness:
            raise BoundedDelayError(
                f"worker {wid}: staleness {t - v} exceeds bound {max_staleness} at round {t}"
            )


def _apply(x_t, grads, eta, eta_l):
    x_t = np.asarray(x_t, dtype=np.float64)
    total = np.zeros_like(x_t)
    for g in grads:
        if g.shape != x_t.shape:
            raise ConfigurationError(f"update shape {g.shape} != model shape {x_t.shape}")
        total = total + g
    return x_t - (eta * eta_l) * (total / len(grads))


def afa_cd_aggregate(x_t, updates, eta, eta_l, *, t=None, max_staleness=None):
    """Average the round's ``m`` returns (duplicates allowed) and step.

    Summation runs in ascending worker id, ties kept in arrival order.
    """
    if not updates:
        raise ConfigurationError("AFA-CD needs at least one update")
    _check_staleness(t, [(u.worker_id, u.pulled_version) for u in updates], max_staleness)
    ordered = sorted(updates, key=lambda u: u.worker_id)
    return _apply(x_t, [u.G for u in ordered], eta, eta_l)


def afa_cs_ingest(memory: MemoryTable, update) -> MemoryTable:
    """Store ``update`` in its worker's slot; older versions are rejected."""
    i = update.worker_id
    if not 0 <= i < memory.n_workers:
        raise ConfigurationError(f"worker id {i} outside [0, {memory.n_workers})")
    old = memory.slots[i]
    if old.initialized and update.pulled_version < old.version:
        warnings.warn(
            f"worker {i}: version {update.pulled_version} older than stored {old.version}; ignored",
            StaleOverwriteWarning,
            stacklevel=2,
        )
        return memory
    slots = list(memory.slots)
    slots[i] = Slot(update.G, update.pulled_version, update.K_used)
    return replace(memory, slots=tuple(slots))


def afa_cs_aggregate(x_t, memory: MemoryTable, eta, eta_l, *, t=None, max_staleness=None):
    for i, s in enumerate(memory.slots):
        if not s.initialized:
            raise WarmStartError(f"memory slot for worker {i} is empty", worker=i)
    _check_staleness(t, [(i, s.version) for i, s in enumerate(memory.slots)], max_staleness)
    return _apply(x_t, [s.G for s in memory.slots], eta, eta_l)


def scaffold_server_update(server_cv, deltas, n_workers):
    """``c <- c + (1/M) * sum(delta c_i)`` over the workers heard from this round."""
    total = np.zeros_like(server_cv)
    for d in deltas:
        total = total + d
    return server_cv + total / n_workers


# -- local step statistics -------------------------------------------------------


@dataclass(frozen=True)
class StepStats:
    inv_K: float
    K_bar: float
    K_hat_sq: float


def step_stats(K_values: Sequence[int]) -> StepStats:
    """Harmonic reciprocal, mean, and mean square of the round's step counts."""
    ks = [int(k) for k in K_values]
    if not ks:
        raise ConfigurationError("step_stats needs at least one K value")
    if min(ks) < 1:
        raise ConfigurationError("K values must be >= 1")
    m = len(ks)
    return StepStats(
        sum(1.0 / k for k in ks) / m,
        sum(ks) / m,
        sum(k * k for k in ks) / m,
    )


# -- learning-rate conditions --------------------------------------------------------


@dataclass(frozen=True)
class Inequality:
    label: str
    lhs: float
    rhs: float
    strict: bool = False

    @property
    def passed(self) -> bool:
        return self.lhs < self.rhs if self.strict else self.lhs <= self.rhs


@dataclass
class ConditionReport:
    theorem: str
    inequalities: list = field(default_factory=list)
    alpha_L: float = float("nan")
    alpha_G: float = float("nan")
    error_term: float | None = None
    bound: float | None = None

    @property
    def passed(self) -> bool:
        return all(q.passed for q in self.inequalities)

    def rows(self):
        for q in self.inequalities:
            yield {
                "theorem": self.theorem,
                "label": q.label,
                "lhs": q.lhs,
                "rhs": q.rhs,
                "relation": "<" if q.strict else "<=",
                "pass": q.passed,
            }

    def summary(self) -> str:
        lines = [f"theorem {self.theorem}: {'PASS' if self.passed else 'FAIL'}"]
        for q in self.inequalities:
            rel = "<" if q.strict else "<="
            mark = "ok" if q.passed else "VIOLATED"
            lines.append(f"  {q.label}: {q.lhs!r} {rel} {q.rhs!r}  [{mark}]")
        lines.append(f"  alpha_L = {self.alpha_L!r}")
        lines.append(f"  alpha_G = {self.alpha_G!r}")
        if self.error_term is not None:
            lines.append(f"  variance error term = {self.error_term!r}")
        if self.bound is not None:
            lines.append(f"  bound on mean ||grad f||^2 = {self.bound!r}")
        return "\n".join(lines)


def _as_rounds(K_values):
    rounds = list(K_values)
    if not rounds:
        raise ConfigurationError("need K values for at least one round")
    if np.isscalar(rounds[0]):
        rounds = [rounds]
    return [list(map(int, r)) for r in rounds]


def check_lr_conditions(
    theorem,
    eta,
    eta_l,
    L,
    tau,
    m,
    K_values,
    *,
    M=None,
    fresh_count=0,
    sigma_l=None,
    sigma_g=None,
    T=None,
    f_gap=None,
) -> ConditionReport:
    """Evaluate the step-size preconditions of one convergence theorem.

    ``K_values`` is either one list of step counts (a worst-case round) or a
    list of per-round lists.  For ``"cs"`` each round's list holds the step
    counts of all ``M`` memory slots and ``fresh_count`` is the number of
    slots refreshed at the current round (``m'``); smaller is worse.

    Per-``(t, i)`` conditions are reported at their worst case over all
    supplied K values.
    """
    if theorem not in THEOREMS:
        raise ConfigurationError(f"theorem must be one of {THEOREMS}, got {theorem!r}")
    rounds = _as_rounds(K_values)
    stats = [step_stats(r) for r in rounds]
    T = T or len(rounds)
    mean_inv = sum(s.inv_K for s in stats) / len(stats)
    mean_bar = sum(s.K_bar for s in stats) / len(stats)
    mean_hat = sum(s.K_hat_sq for s in stats) / len(stats)
    k_max = max(max(r) for r in rounds)
    lr = eta * eta_l

    report = ConditionReport(theorem)
    ineq = report.inequalities
    ineq.append(
        Inequality(
            "6 eta_L^2 (2K^2 - 3K + 1) L^2 <= 1",
            6 * eta_l**2 * (2 * k_max**2 - 3 * k_max + 1) * L**2,
            1.0,
        )
    )

    if theorem == "cd-general":
        ineq.append(
            Inequality("180 eta_L^2 K^2 L^2 tau < 1", 180 * eta_l**2 * k_max**2 * L**2 * tau, 1.0, True)
        )
        ineq.append(
            Inequality(
                "2 L eta eta_L + 6 tau^2 L^2 eta^2 eta_L^2 <= 1",
                2 * L * lr + 6 * tau**2 * L**2 * lr**2,
                1.0,
            )
        )
        report.alpha_L = (
            L * lr / m * mean_inv
            + 3 * tau**2 * L**2 * lr**2 / m * mean_inv
            + 15 * eta_l**2 * L**2 / 2 * mean_bar
        )
        report.alpha_G = 1.5 + 45 * L**2 * eta_l**2 * mean_hat
        scale = 4.0
    elif theorem == "cd-uniform":
        if M is None:
            raise ConfigurationError("the uniform-arrival theorem needs the total worker count M")
        ineq.append(
            Inequality(
                "L eta eta_L + L^2 eta^2 eta_L^2 tau^2 <= 1/(2M)",
                L * lr + L**2 * lr**2 * tau**2,
                1.0 / (2 * M),
            )
        )
        worst_hat = max(s.K_hat_sq for s in stats)
        ineq.append(
            Inequality(
                "120 L^2 Khat_t^2 eta_L^2 tau < 1",
                120 * L**2 * worst_hat * eta_l**2 * tau,
                1.0,
                True,
            )
        )
        report.alpha_L = (
            L * lr / m * mean_inv
            + 2 * tau**2 * L**2 * lr**2 / m * mean_inv
            + 5 * eta_l**2 * L**2 * mean_bar
        )
        report.alpha_G = 30 * L**2 * eta_l**2 * mean_hat
        scale = 4.0
    else:
        M = m if M is None else M
        gap = M - fresh_count
        ineq.append(
            Inequality(
                "(eta eta_L (M-m')^2 L^2 tau^2 / M^2 + L/2) eta eta_L <= 1/4",
                (lr * gap**2 * L**2 * tau**2 / M**2 + L / 2) * lr,
                0.25,
            )
        )
        worst_sq = max(sum(k * k for k in r) for r in rounds)
        ineq.append(
            Inequality(
                "30 L^2 eta_L^2 tau / M * sum_i K_i^2 <= 1/4",
                30 * L**2 * eta_l**2 * tau / M * worst_sq,
                0.25,
            )
        )
        report.alpha_L = (4.0 / M) * (
            5 * L**2 * eta_l**2 * mean_bar
            + (2 * lr**2 * gap**2 * L**2 * tau**2 / M**2 + L * lr) * mean_inv
        )
        report.alpha_G = 120 * L**2 * eta_l**2 / M * mean_hat
        scale = 1.0

    if sigma_l is not None and sigma_g is not None:
        report.error_term = scale * (report.alpha_L * sigma_l**2 + report.alpha_G * sigma_g**2)
        if f_gap is not None:
            report.bound = 4 * f_gap / (lr * T) + report.error_term
    return report
