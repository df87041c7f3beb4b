"""Round-indexed simulation of anarchic federated training.

Each round the arrival process decides which workers return, the delay model
decides which past global model each of them pulled, the workers run their
local steps, and the server aggregates (AFA-CD) or refreshes its memory and
aggregates all slots (AFA-CS).

Randomness is split into independent substreams keyed by
``(seed, purpose, round, ...)`` so a round's worker updates could be computed
in any order, or concurrently, without changing the result.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import BoundedDelayError, ConfigurationError, DivergenceError
from .numerics import FederatedProblem, stochastic_gradient
from .server import (
    ServerState,
    StepStats,
    afa_cd_aggregate,
    afa_cs_aggregate,
    afa_cs_ingest,
    scaffold_server_update,
    step_stats,
)
from .worker import (
    Constant,
    PlainSGD,
    Scaffold,
    choose_local_steps,
    local_update,
)

log = logging.getLogger(__name__)

__all__ = [
    "UniformNoReplacement",
    "Weighted",
    "AdversarialSingle",
    "Trace",
    "Zero",
    "UniformLastR",
    "BoundedRandom",
    "RunConfig",
    "RoundRecord",
    "MetricsTrace",
    "Constants",
    "substream",
    "sample_arrivals",
    "sample_staleness",
    "initial_state",
    "run_round",
    "run_experiment",
    "estimate_constants",
    "BIASED_ARRIVAL_PROBS",
]

# Skewed 10-worker arrival probabilities (two frequent, two rare workers).
BIASED_ARRIVAL_PROBS = (0.19, 0.19, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.01, 0.01)

_ARRIVALS, _STALENESS, _STEPS, _LOCAL, _BOOT = range(5)


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


# -- arrival processes ----------------------------------------------------------------


@dataclass(frozen=True)
class UniformNoReplacement:
    m: int


@dataclass(frozen=True)
class Weighted:
    """``m`` distinct workers by successive draws proportional to remaining mass."""

    probs: tuple
    m: int

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ConfigurationError("arrival probabilities must be >= 0 and sum to 1")
        if self.m > np.count_nonzero(p):
            raise ConfigurationError("m exceeds the number of workers with positive probability")
        object.__setattr__(self, "probs", tuple(float(v) for v in p))


@dataclass(frozen=True)
class AdversarialSingle:
    worker: int = 0


@dataclass(frozen=True)
class Trace:
    rounds: tuple

    def __post_init__(self):
        rounds = tuple(tuple(int(w) for w in r) for r in self.rounds)
        if any(len(r) == 0 for r in rounds):
            raise ConfigurationError("every trace round needs at least one worker")
        object.__setattr__(self, "rounds", rounds)


def sample_arrivals(process, M: int, t: int, rng) -> list[int]:
    if isinstance(process, UniformNoReplacement):
        if not 1 <= process.m <= M:
            raise ConfigurationError(f"m={process.m} must lie in [1, {M}]")
        if process.m == M:
            return list(range(M))
        return sorted(int(w) for w in rng.choice(M, size=process.m, replace=False))
    if isinstance(process, Weighted):
        if len(process.probs) != M:
            raise ConfigurationError(f"{len(process.probs)} probabilities for {M} workers")
        p = np.array(process.probs)
        chosen = []
        for _ in range(process.m):
            w = int(rng.choice(M, p=p / p.sum()))
            chosen.append(w)
            p[w] = 0.0
        return chosen
    if isinstance(process, AdversarialSingle):
        return [process.worker]
    if isinstance(process, Trace):
        if t >= len(process.rounds):
            raise ConfigurationError(f"arrival trace exhausted at round {t}")
        return list(process.rounds[t])
    raise ConfigurationError(f"unknown arrival process {process!r}")


# -- delay models ---------------------------------------------------------------------


@dataclass(frozen=True)
class Zero:
    @property
    def bound(self) -> int:
        return 0


@dataclass(frozen=True)
class UniformLastR:
    """Pull one of the ``R`` most recent global models uniformly."""

    R: int

    def __post_init__(self):
        if self.R < 1:
            raise ConfigurationError("R must be >= 1")

    @property
    def bound(self) -> int:
        return self.R - 1


@dataclass(frozen=True)
class BoundedRandom:
    """Staleness drawn from ``probs`` over ``0..tau_max`` (uniform if omitted)."""

    tau_max: int
    probs: tuple | None = None

    def __post_init__(self):
        if self.tau_max < 0:
            raise ConfigurationError("tau_max must be >= 0")
        if self.probs is not None:
            p = np.asarray(self.probs, dtype=np.float64)
            if len(p) != self.tau_max + 1 or np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
                raise ConfigurationError("probs must be a distribution over 0..tau_max")
            object.__setattr__(self, "probs", tuple(float(v) for v in p))

    @property
    def bound(self) -> int:
        return self.tau_max


def sample_staleness(delay, t: int, worker: int, rng) -> int:
    if isinstance(delay, Zero):
        return 0
    if isinstance(delay, UniformLastR):
        return int(rng.integers(0, min(delay.R - 1, t) + 1))
    if isinstance(delay, BoundedRandom):
        if delay.probs is None:
            tau = int(rng.integers(0, delay.tau_max + 1))
        else:
            tau = int(rng.choice(delay.tau_max + 1, p=delay.probs))
        return min(tau, delay.tau_max, t)
    raise ConfigurationError(f"unknown delay model {delay!r}")


# -- configuration and metrics -----------------------------------------------------------


@dataclass
class RunConfig:
    problem: FederatedProblem
    T: int
    seed: int
    arrivals: object = None
    delay: object = field(default_factory=Zero)
    steps: object = field(default_factory=lambda: Constant(1))
    optimizer: object = field(default_factory=PlainSGD)
    eta: float = 1.0
    eta_l: float = 0.1
    batch_size: int | None = 64
    sigma_l: float = 0.0
    mode: str = "cd"
    x0: np.ndarray | None = None
    max_staleness: int | None = None
    cs_bootstrap: bool = True
    record_trajectories: bool = False

    def __post_init__(self):
        if self.arrivals is None:
            self.arrivals = UniformNoReplacement(self.problem.n_workers)
        if self.mode not in ("cd", "cs"):
            raise ConfigurationError(f"mode must be 'cd' or 'cs', got {self.mode!r}")
        if self.T < 0:
            raise ConfigurationError("T must be >= 0")
        if self.eta <= 0 or self.eta_l <= 0:
            raise ConfigurationError("learning rates must be positive")
        if self.sigma_l < 0:
            raise ConfigurationError("sigma_l must be >= 0")
        if self.x0 is None:
            self.x0 = np.zeros(self.problem.dim)
        self.x0 = np.asarray(self.x0, dtype=np.float64)
        if self.x0.shape != (self.problem.dim,):
            raise ConfigurationError(f"x0 has shape {self.x0.shape}, expected ({self.problem.dim},)")

    @property
    def n_workers(self) -> int:
        return self.problem.n_workers

    @property
    def staleness_bound(self) -> int:
        """Bound enforced on every aggregated return."""
        if self.max_staleness is not None:
            return self.max_staleness
        return self.delay.bound if self.mode == "cd" else None


@dataclass
class RoundRecord:
    round: int
    grad_norm_sq: float
    loss: float
    test_acc: float | None
    stale_min: int
    stale_mean: float
    stale_max: int
    inv_K: float
    K_bar: float
    K_hat_sq: float
    fresh_count: int


@dataclass
class MetricsTrace:
    records: list = field(default_factory=list)
    final_x: np.ndarray | None = None
    final_grad_norm_sq: float = float("nan")
    final_loss: float = float("nan")
    diverged: bool = False
    diverged_at: int | None = None
    state: ServerState | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.records)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)

    def rounds_to_threshold(self, fraction=0.1):
        """First round whose ``||grad f||^2`` is at most ``fraction`` of round 0's."""
        if not self.records:
            return None
        target = fraction * self.records[0].grad_norm_sq
        for r in self.records:
            if r.grad_norm_sq <= target:
                return r.round
        if self.final_grad_norm_sq <= target:
            return len(self.records)
        return None


@dataclass
class RoundInfo:
    arrivals: list
    staleness: list
    K_values: list
    fresh_count: int
    stats: StepStats


# -- engine -----------------------------------------------------------------------------------


def initial_state(cfg: RunConfig) -> ServerState:
    """Round-0 server state; AFA-CS also collects one bootstrap return per worker."""
    state = ServerState.initial(cfg.x0, cfg.delay.bound, cfg.mode, cfg.n_workers)
    if isinstance(cfg.optimizer, Scaffold):
        state.server_cv = np.zeros(cfg.problem.dim)
        state.local_cvs = [np.zeros(cfg.problem.dim) for _ in range(cfg.n_workers)]
    if cfg.mode == "cs" and cfg.cs_bootstrap:
        for i in range(cfg.n_workers):
            rng = substream(cfg.seed, _BOOT, i)
            K = choose_local_steps(cfg.steps, i, 0, rng)
            upd = _worker_run(state, cfg, i, 0, K, rng)
            state.memory = afa_cs_ingest(state.memory, upd)
    return state


def _worker_run(state, cfg, worker, version, K, rng, record=False):
    opt = cfg.optimizer
    if isinstance(opt, Scaffold):
        opt = Scaffold(state.local_cvs[worker], state.server_cv)
    return local_update(
        state.ring.get(version),
        version,
        K,
        cfg.eta_l,
        opt,
        cfg.problem.models[worker],
        cfg.problem.data[worker],
        cfg.batch_size,
        rng,
        sigma_l=cfg.sigma_l,
        worker_id=worker,
        record_trajectory=record,
    )


def run_round(state: ServerState, cfg: RunConfig) -> ServerState:
    """Advance ``state`` by one aggregation, in place; the state is also returned.

    Details of the round (arrivals, staleness, step counts) are left on
    ``state.last_round``.
    """
    t = state.t
    M = cfg.n_workers
    arrivals = sample_arrivals(cfg.arrivals, M, t, substream(cfg.seed, _ARRIVALS, t))
    for w in arrivals:
        if not 0 <= w < M:
            raise ConfigurationError(f"arrival of unknown worker {w}")

    seen: dict[int, int] = {}
    updates = []
    for j, w in enumerate(arrivals):
        occ = seen.get(w, 0)
        seen[w] = occ + 1
        tau = sample_staleness(cfg.delay, t, w, substream(cfg.seed, _STALENESS, t, j))
        version = t - tau
        K = choose_local_steps(cfg.steps, w, version, substream(cfg.seed, _STEPS, t, j))
        rng = substream(cfg.seed, _LOCAL, t, w, occ)
        updates.append(_worker_run(state, cfg, w, version, K, rng, cfg.record_trajectories))

    if cfg.mode == "cd":
        x_next = afa_cd_aggregate(
            state.x, updates, cfg.eta, cfg.eta_l, t=t, max_staleness=cfg.staleness_bound
        )
        staleness = [t - u.pulled_version for u in updates]
        K_values = [u.K_used for u in updates]
        fresh = sum(1 for s in staleness if s == 0)
    else:
        memory = state.memory
        for u in updates:
            if t - u.pulled_version > cfg.delay.bound:
                raise BoundedDelayError(
                    f"worker {u.worker_id}: return staleness {t - u.pulled_version} "
                    f"exceeds delay bound {cfg.delay.bound}"
                )
            memory = afa_cs_ingest(memory, u)
        state.memory = memory
        x_next = afa_cs_aggregate(
            state.x, memory, cfg.eta, cfg.eta_l, t=t, max_staleness=cfg.staleness_bound
        )
        staleness = memory.staleness(t)
        K_values = [s.K for s in memory.slots]
        fresh = memory.fresh_count(t)

    if isinstance(cfg.optimizer, Scaffold):
        deltas = []
        for u in sorted(updates, key=lambda u: u.worker_id):
            deltas.append(u.control_variate - state.local_cvs[u.worker_id])
            state.local_cvs[u.worker_id] = u.control_variate
        state.server_cv = scaffold_server_update(state.server_cv, deltas, M)

    if not np.all(np.isfinite(x_next)):
        raise DivergenceError(f"global model became non-finite at round {t}")
    state.last_round = RoundInfo(arrivals, staleness, K_values, fresh, step_stats(K_values))
    state.last_updates = updates
    state.t = t + 1
    state.x = x_next
    state.ring.push(t + 1, x_next)
    return state


def _objective(problem, x):
    with np.errstate(over="ignore", invalid="ignore"):
        g = problem.gradient(x)
        return float(g @ g), problem.loss(x)


def _finite_or_nan(v):
    return v if math.isfinite(v) else float("nan")


def run_experiment(cfg: RunConfig, state: ServerState | None = None) -> MetricsTrace:
    """Run ``cfg.T`` rounds and collect one record per round.

    Each record describes ``x_t`` before round ``t``'s update together with
    the statistics of the returns aggregated in that round.  A divergence
    stops the run and sets ``trace.diverged``.
    """
    problem = cfg.problem
    trace = MetricsTrace()
    try:
        if state is None:
            state = initial_state(cfg)
        for _ in range(cfg.T):
            x = state.x
            t = state.t
            gn, loss = _objective(problem, x)
            if not (math.isfinite(gn) and math.isfinite(loss)):
                raise DivergenceError(f"objective overflowed at round {t}")
            acc = problem.test_accuracy(x)
            state = run_round(state, cfg)
            info = state.last_round
            st = info.staleness
            trace.records.append(
                RoundRecord(
                    t,
                    gn,
                    loss,
                    acc,
                    min(st),
                    sum(st) / len(st),
                    max(st),
                    info.stats.inv_K,
                    info.stats.K_bar,
                    info.stats.K_hat_sq,
                    info.fresh_count,
                )
            )
    except DivergenceError as exc:
        log.warning("run diverged: %s", exc)
        trace.diverged = True
        trace.diverged_at = state.t if state is not None else 0
    if state is not None:
        trace.final_x = state.x.copy()
        gn, loss = _objective(problem, state.x)
        trace.final_grad_norm_sq = _finite_or_nan(gn)
        trace.final_loss = _finite_or_nan(loss)
    trace.state = state
    return trace


# -- constant estimation --------------------------------------------------------------------------


@dataclass(frozen=True)
class Constants:
    """Empirical smoothness and variance witnesses.

    ``sigma_l_sq`` and ``sigma_g_sq`` are squared bounds, matching how they
    enter the variance assumptions; ``L`` is a lower witness of the global
    smoothness constant.
    """

    sigma_l_sq: float
    sigma_g_sq: float
    L: float


def estimate_constants(
    problem: FederatedProblem,
    probes: Sequence,
    samples_per_point: int = 100,
    *,
    sigma_l=0.0,
    batch_size=None,
    seed=0,
) -> Constants:
    if len(probes) < 2:
        raise ConfigurationError("need at least two probe points")
    probes = [np.asarray(p, dtype=np.float64) for p in probes]
    rng = np.random.default_rng(seed)
    sg = 0.0
    sl = 0.0
    for x in probes:
        gbar = problem.gradient(x)
        for i in range(problem.n_workers):
            gi = problem.local_gradient(i, x)
            diff = gi - gbar
            sg = max(sg, float(diff @ diff))
            acc = 0.0
            for _ in range(samples_per_point):
                s = stochastic_gradient(
                    problem.models[i], problem.data[i], x, batch_size, rng, sigma_l
                ).grad
                r = s - gi
                acc += float(r @ r)
            sl = max(sl, acc / samples_per_point)
    L = 0.0
    grads = [problem.gradient(x) for x in probes]
    for a in range(len(probes)):
        for b in range(a + 1, len(probes)):
            dx = np.linalg.norm(probes[a] - probes[b])
            if dx == 0:
                continue
            L = max(L, float(np.linalg.norm(grads[a] - grads[b]) / dx))
    return Constants(sl, sg, L)
