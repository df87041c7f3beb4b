"""Command-line entry point.

    afl run --config exp.ini [--out DIR] [--mnist-images F --mnist-labels F]
    afl preset NAME [--param k=v ...] [--out DIR]
    afl check-conditions --config exp.ini --theorem {cd-general,cd-uniform,cs}
    afl gradcheck --model logreg:d=5,C=3

Log verbosity follows the ``AFL_LOG_LEVEL`` environment variable.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import build_run_config, load_settings
from .data import Dataset, Partition
from .exceptions import AFLError
from .metrics import export_conditions, export_metrics
from .numerics import LogReg, Quadratic, ShiftedSquare, finite_diff_check
from .presets import make_preset, run_preset
from .server import THEOREMS, check_lr_conditions
from .sim import run_experiment
from .worker import Constant, DynamicUniform, PerWorkerFixed

log = logging.getLogger("anarchic_fl")

GRADCHECK_TOL = 1e-5


def _worst_K(steps, count):
    if isinstance(steps, Constant):
        return [steps.c] * count
    if isinstance(steps, DynamicUniform):
        return [2 * steps.c] * count
    if isinstance(steps, PerWorkerFixed):
        return sorted(steps.steps, reverse=True)[:count]
    raise AFLError(f"unsupported step policy {steps!r}")


def conditions_for(settings, cfg, theorem):
    """Worst-case condition report for a parsed config."""
    L = settings["model"]["smoothness"] or cfg.problem.smoothness()
    M = cfg.n_workers
    m = settings["sim"]["m"]
    tau = cfg.delay.bound
    if theorem == "cs":
        if cfg.max_staleness is not None:
            tau = cfg.max_staleness
        else:
            log.warning(
                "memory-slot staleness also grows while a worker is absent; "
                "set server.max_staleness to check the CS conditions at the true bound"
            )
        return check_lr_conditions(
            theorem, cfg.eta, cfg.eta_l, L, tau, M, _worst_K(cfg.steps, M), M=M,
            T=cfg.T or None,
        )
    return check_lr_conditions(
        theorem, cfg.eta, cfg.eta_l, L, tau, m, _worst_K(cfg.steps, m), M=M, T=cfg.T or None
    )


def _settings(args):
    settings = load_settings(args.config)
    for key in ("mnist_images", "mnist_labels", "mnist_test_images", "mnist_test_labels"):
        value = getattr(args, key, None)
        if value:
            settings["data"][key] = value
    return settings


def _add_mnist_flags(p):
    p.add_argument("--mnist-images", dest="mnist_images", help="IDX training images (overrides data.mnist_images)")
    p.add_argument("--mnist-labels", dest="mnist_labels")
    p.add_argument("--mnist-test-images", dest="mnist_test_images")
    p.add_argument("--mnist-test-labels", dest="mnist_test_labels")


def cmd_run(args):
    settings = _settings(args)
    cfg = build_run_config(settings)
    trace = run_experiment(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    export_metrics(trace, out / "metrics.csv")
    theorem = "cs" if cfg.mode == "cs" else "cd-general"
    export_conditions(conditions_for(settings, cfg, theorem), out / "conditions.csv")
    print(f"rounds: {len(trace)}  diverged: {trace.diverged}")
    print(f"final ||grad f||^2 = {trace.final_grad_norm_sq!r}")
    print(f"final loss = {trace.final_loss!r}")
    if trace.records and trace.records[-1].test_acc is not None:
        print(f"last test accuracy = {trace.records[-1].test_acc!r}")
    rt = trace.rounds_to_threshold(settings["sim"]["threshold"])
    print(f"rounds to threshold: {'not reached' if rt is None else rt}")
    print(f"metrics written to {out / 'metrics.csv'}")
    return 1 if trace.diverged else 0


def _params(pairs):
    out = {}
    for p in pairs or []:
        if "=" not in p:
            raise AFLError(f"--param expects k=v, got {p!r}")
        k, v = p.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def cmd_preset(args):
    preset = make_preset(args.name, _params(args.param))
    summary = run_preset(preset, args.out)
    print(summary["text"])
    return 0


def cmd_check(args):
    settings = _settings(args)
    cfg = build_run_config(settings)
    report = conditions_for(settings, cfg, args.theorem)
    print(report.summary())
    if args.out:
        export_conditions(report, args.out)
    return 0 if report.passed else 1


def _gradcheck_model(spec, rng):
    name, _, rest = spec.partition(":")
    opts = {}
    for item in filter(None, rest.split(",")):
        k, _, v = item.partition("=")
        opts[k.strip()] = v.strip()
    if name == "quadratic":
        d = int(opts.get("d", 3))
        return Quadratic(rng.standard_normal(d)), None
    if name == "shifted_square":
        return ShiftedSquare(int(opts.get("sign", -1)), float(opts.get("G", 1.0))), None
    if name == "logreg":
        d, C, n = int(opts.get("d", 5)), int(opts.get("C", 3)), int(opts.get("n", 50))
        ds = Dataset(rng.standard_normal((n, d)), np.arange(n) % C, C)
        part = Partition(0, np.arange(n), frozenset(range(C)), ds)
        return LogReg(d, C, float(opts.get("l2", 0.0))), part
    raise AFLError(f"unknown model spec {spec!r}")


def cmd_gradcheck(args):
    rng = np.random.default_rng(args.seed)
    model, data = _gradcheck_model(args.model, rng)
    worst = 0.0
    for _ in range(args.points):
        x = rng.uniform(-1, 1, model.dim)
        worst = max(worst, finite_diff_check(model, data, x, args.h))
    ok = worst < GRADCHECK_TOL
    print(f"{args.model}: max relative error {worst:.3e} over {args.points} points "
          f"({'ok' if ok else 'FAIL'}, tolerance {GRADCHECK_TOL:g})")
    return 0 if ok else 1


def build_parser():
    ap = argparse.ArgumentParser(prog="afl", description="AFA-CD / AFA-CS federated training simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="afl_out")
    _add_mnist_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("preset", help="run a canned experiment")
    p.add_argument("name", choices=["lower-bound", "speedup", "heterogeneity", "staleness", "cs-vs-cd"])
    p.add_argument("--param", action="append", metavar="K=V")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_preset)

    p = sub.add_parser("check-conditions", help="evaluate learning-rate preconditions")
    p.add_argument("--config", required=True)
    p.add_argument("--theorem", required=True, choices=THEOREMS)
    p.add_argument("--out", default=None, help="optional CSV path for the report")
    _add_mnist_flags(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("gradcheck", help="finite-difference check of a model family")
    p.add_argument("--model", required=True, help="quadratic[:d=3] | shifted_square[:G=1] | logreg[:d=5,C=3,l2=0]")
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None):
    logging.basicConfig(
        level=os.environ.get("AFL_LOG_LEVEL", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AFLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
