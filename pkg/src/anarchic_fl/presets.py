"""Canned experiments: the arrival lower bound and the comparison sweeps."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .data import PartitionPlan, gen_synthetic_logreg, partition_by_label
from .exceptions import ConfigurationError
from .metrics import export_metrics, format_number
from .numerics import logreg_problem, quadratic_problem, shifted_square_pair
from .sim import (
    BIASED_ARRIVAL_PROBS,
    AdversarialSingle,
    RunConfig,
    UniformLastR,
    UniformNoReplacement,
    Weighted,
    Zero,
    run_experiment,
)
from .worker import Constant, DynamicUniform

log = logging.getLogger(__name__)

__all__ = [
    "LowerBound",
    "SpeedupSweep",
    "HeterogeneitySweep",
    "StalenessAblation",
    "CsVsCd",
    "PRESETS",
    "make_preset",
    "run_preset",
    "synthetic_logreg_task",
]

_SEEDS = (0, 1, 2, 3, 4)


def synthetic_logreg_task(
    seed,
    p=2,
    n_workers=10,
    n=2000,
    d=20,
    n_classes=10,
    per_worker=100,
    separation=3.0,
    n_test=1000,
    data_seed=0,
):
    """Label-skewed synthetic LogReg problem.

    The blobs are fixed by ``data_seed``; ``seed`` only drives how samples
    are dealt to workers.  Each worker's test partition covers the same
    classes as its training partition; test shares are half the training
    density so that pinned classes cannot run dry.
    """
    full = gen_synthetic_logreg(n + n_test, d, n_classes, separation, data_seed)
    train = type(full)(full.features[:n], full.labels[:n], n_classes)
    test = type(full)(full.features[n:], full.labels[n:], n_classes)
    parts = partition_by_label(train, PartitionPlan(n_workers, p, seed, per_worker))
    test_parts = partition_by_label(
        test,
        PartitionPlan(n_workers, p, seed + 10_000, n_test // (4 * n_workers)),
        classes=[q.classes_present for q in parts],
    )
    return logreg_problem(parts, test_partitions=test_parts)


def _nonempty(name, values):
    if len(values) == 0:
        raise ConfigurationError(f"{name} must be nonempty")


def _enough_seeds(seeds):
    if len(seeds) < 3:
        raise ConfigurationError("sweeps average over at least 3 seeds")


@dataclass(frozen=True)
class LowerBound:
    G: float = 1.0
    T: int = 200
    eta: float = 1.0
    eta_l: float = 0.1


@dataclass(frozen=True)
class SpeedupSweep:
    m_list: tuple = (2, 4, 8)
    K_list: tuple = (5,)
    seeds: tuple = _SEEDS
    T: int = 300
    R: int = 3
    p: int = 2
    threshold: float = 0.1

    def __post_init__(self):
        _nonempty("m_list", self.m_list)
        _nonempty("K_list", self.K_list)
        _enough_seeds(self.seeds)


@dataclass(frozen=True)
class HeterogeneitySweep:
    p_list: tuple = (1, 2, 5, 10)
    seeds: tuple = _SEEDS
    T: int = 150
    m: int = 5

    def __post_init__(self):
        _nonempty("p_list", self.p_list)
        _enough_seeds(self.seeds)


@dataclass(frozen=True)
class StalenessAblation:
    """Final loss for each delay window ``R`` (1 = synchronous), constant vs dynamic steps."""

    R_list: tuple = (1, 3, 5)
    seeds: tuple = _SEEDS
    T: int = 150
    m: int = 5
    c: int = 5
    p: int = 2

    def __post_init__(self):
        _nonempty("R_list", self.R_list)
        _enough_seeds(self.seeds)


@dataclass(frozen=True)
class CsVsCd:
    """AFA-CD vs AFA-CS under the biased 10-worker arrival probabilities."""

    seeds: tuple = (0, 1, 2)
    T: int = 300
    m: int = 5
    K: int = 5
    model: str = "quadratic"

    def __post_init__(self):
        _enough_seeds(self.seeds)
        if self.model not in ("quadratic", "logreg"):
            raise ConfigurationError("CsVsCd model must be quadratic or logreg")


PRESETS = {
    "lower-bound": LowerBound,
    "speedup": SpeedupSweep,
    "heterogeneity": HeterogeneitySweep,
    "staleness": StalenessAblation,
    "cs-vs-cd": CsVsCd,
}


def make_preset(name: str, params: dict | None = None):
    """Build a preset from ``k=v`` string parameters (lists are comma-separated)."""
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    cls = PRESETS[name]
    kinds = {f.name: f.default for f in fields(cls)}
    kwargs = {}
    for key, raw in (params or {}).items():
        if key not in kinds:
            raise ConfigurationError(f"preset {name} has no parameter {key!r}")
        default = kinds[key]
        try:
            if isinstance(default, tuple):
                conv = float if default and isinstance(default[0], float) else int
                kwargs[key] = tuple(conv(v) for v in raw.split(",") if v)
            elif isinstance(default, bool):
                kwargs[key] = raw.lower() in ("1", "true", "yes")
            else:
                kwargs[key] = type(default)(raw)
        except ValueError as exc:
            raise ConfigurationError(f"{key}: cannot parse {raw!r}") from exc
    return cls(**kwargs)


def _write_rows(path, rows):
    cols = list(rows[0]) if rows else []
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([v if isinstance(v, str) else format_number(v) for v in r.values()])


def _run(cfg, out_dir, name):
    trace = run_experiment(cfg)
    if out_dir is not None:
        export_metrics(trace, out_dir / "runs" / f"{name}.csv")
    return trace


def _lower_bound(pr: LowerBound, out):
    cfg = RunConfig(
        shifted_square_pair(pr.G),
        T=pr.T,
        seed=0,
        arrivals=AdversarialSingle(0),
        eta=pr.eta,
        eta_l=pr.eta_l,
        batch_size=None,
    )
    tr = _run(cfg, out, "lower_bound")
    floor = 4 * pr.G**2
    rows = [
        {
            "x_hat": float(tr.final_x[0]),
            "grad_norm_sq": tr.final_grad_norm_sq,
            "sigma_g_sq": floor,
            "ratio": tr.final_grad_norm_sq / floor,
        }
    ]
    text = (
        f"only worker 0 participates; x_hat = {float(tr.final_x[0])!r} (minimizer of f_1 is {-pr.G!r})\n"
        f"||grad f(x_hat)||^2 = {tr.final_grad_norm_sq!r}\n"
        f"heterogeneity floor sigma_G^2 = 4 G^2 = {floor!r}  (error is Omega(sigma_G^2))"
    )
    return rows, text


def _mean_rounds(counts, T):
    # runs that never reach the threshold count as T (right-censored)
    return float(np.mean([T if c is None else c for c in counts]))


def _speedup(pr: SpeedupSweep, out):
    rows = []
    for K in pr.K_list:
        for m in pr.m_list:
            counts = []
            for s in pr.seeds:
                cfg = RunConfig(
                    synthetic_logreg_task(s, p=pr.p),
                    T=pr.T,
                    seed=s,
                    arrivals=UniformNoReplacement(m),
                    delay=UniformLastR(pr.R),
                    steps=Constant(K),
                )
                tr = _run(cfg, out, f"speedup_m{m}_K{K}_s{s}")
                counts.append(tr.rounds_to_threshold(pr.threshold))
            rows.append(
                {
                    "m": m,
                    "K": K,
                    "mean_rounds": _mean_rounds(counts, pr.T),
                    "per_seed": " ".join("censored" if c is None else str(c) for c in counts),
                }
            )
    lines = [f"rounds until ||grad f||^2 <= {pr.threshold} x initial (mean over {len(pr.seeds)} seeds)"]
    lines += [f"  m={r['m']:<3} K={r['K']:<3} {r['mean_rounds']!r}" for r in rows]
    return rows, "\n".join(lines)


def _final_stats(traces):
    return {
        "final_loss": float(np.mean([t.final_loss for t in traces])),
        "final_grad_norm_sq": float(np.mean([t.final_grad_norm_sq for t in traces])),
    }


def _heterogeneity(pr: HeterogeneitySweep, out):
    rows = []
    for p in pr.p_list:
        traces = []
        for s in pr.seeds:
            cfg = RunConfig(
                synthetic_logreg_task(s, p=p),
                T=pr.T,
                seed=s,
                arrivals=UniformNoReplacement(pr.m),
                steps=Constant(5),
            )
            traces.append(_run(cfg, out, f"heterogeneity_p{p}_s{s}"))
        acc = [t.records[-1].test_acc for t in traces if t.records]
        rows.append({"p": p, **_final_stats(traces), "test_acc": float(np.mean(acc)) if acc else math.nan})
    text = "\n".join(
        f"  p={r['p']:<3} loss={r['final_loss']!r} acc={r['test_acc']!r}" for r in rows
    )
    return rows, "non-i.i.d. index sweep (AFA-CD, uniform arrivals)\n" + text


def _staleness(pr: StalenessAblation, out):
    rows = []
    for R in pr.R_list:
        for label, steps in (("constant", Constant(pr.c)), ("dynamic", DynamicUniform(pr.c))):
            traces = []
            for s in pr.seeds:
                cfg = RunConfig(
                    synthetic_logreg_task(s, p=pr.p),
                    T=pr.T,
                    seed=s,
                    arrivals=UniformNoReplacement(pr.m),
                    delay=Zero() if R == 1 else UniformLastR(R),
                    steps=steps,
                )
                traces.append(_run(cfg, out, f"staleness_R{R}_{label}_s{s}"))
            rows.append({"R": R, "steps": label, **_final_stats(traces)})
    base = rows[0]["final_loss"]
    for r in rows:
        r["rel_gap"] = abs(r["final_loss"] - base) / base
    text = "\n".join(
        f"  R={r['R']:<2} {r['steps']:<8} loss={r['final_loss']!r} gap={r['rel_gap']!r}" for r in rows
    )
    return rows, "staleness / dynamic-step ablation (relative to first row)\n" + text


def _cs_vs_cd(pr: CsVsCd, out):
    rows = []
    for mode in ("cd", "cs"):
        traces = []
        for s in pr.seeds:
            if pr.model == "quadratic":
                problem = quadratic_problem(np.random.default_rng(s).standard_normal((10, 2)))
                batch = None
            else:
                problem = synthetic_logreg_task(s, p=2)
                batch = 64
            cfg = RunConfig(
                problem,
                T=pr.T,
                seed=s,
                arrivals=Weighted(BIASED_ARRIVAL_PROBS, pr.m),
                steps=Constant(pr.K),
                batch_size=batch,
                mode=mode,
            )
            traces.append(_run(cfg, out, f"cs_vs_cd_{mode}_s{s}"))
        rows.append({"mode": mode, **_final_stats(traces)})
    text = "\n".join(f"  {r['mode']}: ||grad f||^2 = {r['final_grad_norm_sq']!r}" for r in rows)
    return rows, "biased arrivals, final squared gradient norm\n" + text


_RUNNERS = {
    LowerBound: _lower_bound,
    SpeedupSweep: _speedup,
    HeterogeneitySweep: _heterogeneity,
    StalenessAblation: _staleness,
    CsVsCd: _cs_vs_cd,
}


def run_preset(preset, out_dir=None) -> dict:
    """Run ``preset``; with ``out_dir`` also write summary.csv, summary.txt and per-run traces."""
    runner = _RUNNERS.get(type(preset))
    if runner is None:
        raise ConfigurationError(f"unknown preset {preset!r}")
    out = None
    if out_dir is not None:
        out = Path(out_dir)
        (out / "runs").mkdir(parents=True, exist_ok=True)
    rows, text = runner(preset, out)
    if out is not None:
        _write_rows(out / "summary.csv", rows)
        (out / "summary.txt").write_text(text + "\n", encoding="utf-8")
    return {"preset": preset, "rows": rows, "text": text}
