"""Experiment configuration files.

A config is an INI document with five sections::

    [model]
    family = logreg          ; quadratic | shifted_square | logreg

    [data]
    p = 2

    [server]
    mode = cd                ; cd | cs

    [worker]
    steps = 5
    step_policy = dynamic

    [sim]
    M = 10
    m = 5
    T = 150
    seed = 0

Keys are case-sensitive.  Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import difflib
from pathlib import Path

import numpy as np

from .data import PartitionPlan, gen_synthetic_logreg, load_idx, partition_by_label
from .exceptions import ConfigurationError
from .numerics import logreg_problem, quadratic_problem, shifted_square_pair
from .sim import (
    BIASED_ARRIVAL_PROBS,
    AdversarialSingle,
    BoundedRandom,
    RunConfig,
    Trace,
    UniformLastR,
    UniformNoReplacement,
    Weighted,
    Zero,
)
from .worker import Constant, DynamicUniform, FedProx, PerWorkerFixed, PlainSGD, Scaffold

__all__ = ["SCHEMA", "load_settings", "build_run_config", "parse_config", "parse_vector"]

_REQUIRED = object()

# section -> key -> (parser, default)
SCHEMA = {
    "model": {
        "family": (str, _REQUIRED),
        "centers": (str, None),
        "G": (float, 1.0),
        "l2": (float, 0.0),
        "smoothness": (float, None),
    },
    "data": {
        "n": (int, 2000),
        "n_test": (int, 1000),
        "d": (int, 20),
        "classes": (int, 10),
        "separation": (float, 3.0),
        "p": (int, None),
        "per_worker": (int, None),
        "per_worker_test": (int, None),
        "seed": (int, None),
        "mnist_images": (str, None),
        "mnist_labels": (str, None),
        "mnist_test_images": (str, None),
        "mnist_test_labels": (str, None),
    },
    "server": {
        "mode": (str, "cd"),
        "eta": (float, 1.0),
        "max_staleness": (int, None),
    },
    "worker": {
        "eta_l": (float, 0.1),
        "steps": (int, 5),
        "step_policy": (str, "constant"),
        "per_worker_steps": (str, None),
        "optimizer": (str, "sgd"),
        "mu": (float, 0.1),
        "batch_size": (int, 64),
        "sigma_l": (float, 0.0),
    },
    "sim": {
        "M": (int, _REQUIRED),
        "m": (int, None),
        "T": (int, _REQUIRED),
        "seed": (int, _REQUIRED),
        "arrivals": (str, "uniform"),
        "probs": (str, None),
        "adversary": (int, 0),
        "trace": (str, None),
        "delay": (str, "zero"),
        "R": (int, 5),
        "tau_max": (int, None),
        "delay_probs": (str, None),
        "x0": (str, None),
        "threshold": (float, 0.1),
        "record_trajectories": (str, "false"),
    },
}

# Common spellings mapped to the canonical key, used only for suggestions.
_ALIASES = {
    "learning_rate": "worker.eta_l",
    "local_learning_rate": "worker.eta_l",
    "local_lr": "worker.eta_l",
    "lr": "worker.eta_l",
    "server_learning_rate": "server.eta",
    "global_learning_rate": "server.eta",
    "server_lr": "server.eta",
    "rounds": "sim.T",
    "workers": "sim.M",
    "num_workers": "sim.M",
    "local_steps": "worker.steps",
    "batch": "worker.batch_size",
    "staleness": "sim.delay",
}


def parse_vector(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.replace(" ", "").split(",") if v], dtype=np.float64)


def _parse_vectors(text: str) -> list:
    return [parse_vector(chunk) for chunk in text.split(";") if chunk.strip()]


def _suggest(section, key):
    canon = [f"{s}.{k}" for s, keys in SCHEMA.items() for k in keys]
    pool = {c.split(".", 1)[1]: c for c in canon}
    pool.update(_ALIASES)
    hits = difflib.get_close_matches(key, list(pool), n=1, cutoff=0.6)
    if hits:
        return f"; did you mean {pool[hits[0]]!r}?"
    return f"; valid keys in [{section}]: {', '.join(SCHEMA[section])}"


def load_settings(path) -> dict:
    """Read and validate a config file into ``{section: {key: value}}`` with defaults."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file {path} not found")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(path.read_text())
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc

    out = {s: {} for s in SCHEMA}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigurationError(
                f"unknown section [{section}]; expected one of {', '.join(SCHEMA)}"
            )
        for key, raw in cp.items(section):
            if key not in SCHEMA[section]:
                raise ConfigurationError(
                    f"unknown key {section}.{key}" + _suggest(section, key)
                )
            parser, _ = SCHEMA[section][key]
            try:
                out[section][key] = parser(raw.strip())
            except ValueError as exc:
                raise ConfigurationError(f"{section}.{key}: cannot parse {raw!r}") from exc
    for section, keys in SCHEMA.items():
        for key, (_, default) in keys.items():
            if key in out[section]:
                continue
            if default is _REQUIRED:
                raise ConfigurationError(f"missing required key {section}.{key}")
            out[section][key] = default
    _validate(out)
    return out


def _validate(s):
    sim, w, srv = s["sim"], s["worker"], s["server"]
    if w["eta_l"] <= 0:
        raise ConfigurationError("worker.eta_l must be positive")
    if srv["eta"] <= 0:
        raise ConfigurationError("server.eta must be positive")
    if sim["M"] < 1:
        raise ConfigurationError("sim.M must be >= 1")
    if sim["T"] < 0:
        raise ConfigurationError("sim.T must be >= 0")
    if sim["m"] is None:
        sim["m"] = sim["M"]
    if not 1 <= sim["m"] <= sim["M"]:
        raise ConfigurationError("sim.m must lie in [1, M]")
    if w["steps"] < 1:
        raise ConfigurationError("worker.steps must be >= 1")
    if w["mu"] < 0:
        raise ConfigurationError("worker.mu must be >= 0")
    if w["sigma_l"] < 0:
        raise ConfigurationError("worker.sigma_l must be >= 0")
    if w["batch_size"] < 1:
        raise ConfigurationError("worker.batch_size must be >= 1")
    if srv["mode"] not in ("cd", "cs"):
        raise ConfigurationError("server.mode must be cd or cs")
    if s["model"]["family"] not in ("quadratic", "shifted_square", "logreg"):
        raise ConfigurationError(
            f"model.family must be quadratic, shifted_square or logreg, got {s['model']['family']!r}"
        )
    flag = sim["record_trajectories"].lower()
    if flag not in ("true", "false", "1", "0", "yes", "no"):
        raise ConfigurationError("sim.record_trajectories must be a boolean")
    sim["record_trajectories"] = flag in ("true", "1", "yes")


def _build_problem(s):
    model, data, sim = s["model"], s["data"], s["sim"]
    M = sim["M"]
    family = model["family"]
    if family == "shifted_square":
        if M != 2:
            raise ConfigurationError("shifted_square is a two-worker construction; set M = 2")
        return shifted_square_pair(model["G"])
    if family == "quadratic":
        if model["centers"]:
            centers = _parse_vectors(model["centers"])
            if len(centers) != M:
                raise ConfigurationError(f"{len(centers)} centers given for M = {M} workers")
        else:
            seed = sim["seed"] if data["seed"] is None else data["seed"]
            centers = list(np.random.default_rng(seed).standard_normal((M, data["d"])))
        return quadratic_problem(centers)

    data_seed = sim["seed"] if data["seed"] is None else data["seed"]
    if data["mnist_images"]:
        if not data["mnist_labels"]:
            raise ConfigurationError("data.mnist_labels is required with data.mnist_images")
        train = load_idx(data["mnist_images"], data["mnist_labels"])
        test = None
        if data["mnist_test_images"] and data["mnist_test_labels"]:
            test = load_idx(data["mnist_test_images"], data["mnist_test_labels"])
    else:
        n, nt = data["n"], data["n_test"]
        full = gen_synthetic_logreg(n + nt, data["d"], data["classes"], data["separation"], data_seed)
        train = type(full)(full.features[:n], full.labels[:n], full.n_classes)
        test = type(full)(full.features[n:], full.labels[n:], full.n_classes) if nt > 0 else None
    p = data["p"] or train.n_classes
    per = data["per_worker"] or len(train) // (2 * M)
    parts = partition_by_label(train, PartitionPlan(M, p, data_seed, per))
    test_parts = None
    if test is not None:
        per_t = data["per_worker_test"] or len(test) // (4 * M)
        test_parts = partition_by_label(
            test,
            PartitionPlan(M, p, data_seed + 1, per_t),
            classes=[q.classes_present for q in parts],
        )
    return logreg_problem(parts, model["l2"], test_parts)


def _arrivals(sim):
    kind, M, m = sim["arrivals"], sim["M"], sim["m"]
    if kind == "uniform":
        return UniformNoReplacement(m)
    if kind == "weighted":
        if not sim["probs"]:
            raise ConfigurationError("sim.probs is required for weighted arrivals")
        return Weighted(tuple(parse_vector(sim["probs"])), m)
    if kind == "biased":
        if M != len(BIASED_ARRIVAL_PROBS):
            raise ConfigurationError("biased arrivals need M = 10")
        return Weighted(BIASED_ARRIVAL_PROBS, m)
    if kind == "adversarial":
        return AdversarialSingle(sim["adversary"])
    if kind == "trace":
        if not sim["trace"]:
            raise ConfigurationError("sim.trace is required for trace arrivals")
        rounds = [[int(v) for v in chunk.split(",") if v.strip()] for chunk in sim["trace"].split(";")]
        return Trace(tuple(tuple(r) for r in rounds))
    if kind == "alternating":
        return Trace(tuple((t % M,) for t in range(sim["T"])))
    raise ConfigurationError(f"unknown arrival process {kind!r}")


def _delay(sim):
    kind = sim["delay"]
    if kind == "zero":
        return Zero()
    if kind == "last_r":
        return UniformLastR(sim["R"])
    if kind == "bounded":
        if sim["tau_max"] is None:
            raise ConfigurationError("sim.tau_max is required for bounded delay")
        probs = tuple(parse_vector(sim["delay_probs"])) if sim["delay_probs"] else None
        return BoundedRandom(sim["tau_max"], probs)
    raise ConfigurationError(f"unknown delay model {kind!r}")


def _steps(w, M):
    kind = w["step_policy"]
    if kind == "constant":
        return Constant(w["steps"])
    if kind == "dynamic":
        return DynamicUniform(w["steps"])
    if kind == "per_worker":
        if not w["per_worker_steps"]:
            raise ConfigurationError("worker.per_worker_steps is required")
        ks = tuple(int(v) for v in w["per_worker_steps"].split(","))
        if len(ks) != M:
            raise ConfigurationError(f"{len(ks)} step counts for M = {M} workers")
        return PerWorkerFixed(ks)
    raise ConfigurationError(f"unknown step policy {kind!r}")


def _optimizer(w):
    kind = w["optimizer"]
    if kind == "sgd":
        return PlainSGD()
    if kind == "fedprox":
        return FedProx(w["mu"])
    if kind == "scaffold":
        return Scaffold()
    raise ConfigurationError(f"unknown worker optimizer {kind!r}")


def build_run_config(s: dict) -> RunConfig:
    sim, w, srv = s["sim"], s["worker"], s["server"]
    problem = _build_problem(s)
    x0 = parse_vector(sim["x0"]) if sim["x0"] else None
    return RunConfig(
        problem=problem,
        T=sim["T"],
        seed=sim["seed"],
        arrivals=_arrivals(sim),
        delay=_delay(sim),
        steps=_steps(w, sim["M"]),
        optimizer=_optimizer(w),
        eta=srv["eta"],
        eta_l=w["eta_l"],
        batch_size=w["batch_size"],
        sigma_l=w["sigma_l"],
        mode=srv["mode"],
        x0=x0,
        max_staleness=srv["max_staleness"],
        record_trajectories=sim["record_trajectories"],
    )


def parse_config(path) -> RunConfig:
    return build_run_config(load_settings(path))
