import textwrap

import numpy as np
import pytest

from anarchic_fl.config import load_settings, parse_config
from anarchic_fl.exceptions import ConfigurationError
from anarchic_fl.sim import BoundedRandom, Trace, UniformLastR, UniformNoReplacement, Weighted
from anarchic_fl.worker import Constant, DynamicUniform, FedProx, PerWorkerFixed, PlainSGD, Scaffold


def write(tmp_path, body, name="exp.ini"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(body))
    return p


MINIMAL = """
    [model]
    family = logreg
    [sim]
    M = 10
    m = 5
    T = 20
    seed = 0
"""


def test_minimal_config_defaults(tmp_path):
    cfg = parse_config(write(tmp_path, MINIMAL))
    assert cfg.eta == 1.0 and cfg.eta_l == 0.1
    assert cfg.batch_size == 64
    assert cfg.arrivals == UniformNoReplacement(5)
    assert isinstance(cfg.optimizer, PlainSGD)
    assert cfg.n_workers == 10 and cfg.T == 20 and cfg.mode == "cd"


def test_fedprox_default_mu(tmp_path):
    cfg = parse_config(write(tmp_path, MINIMAL + "    [worker]\n    optimizer = fedprox\n"))
    assert cfg.optimizer == FedProx(0.1)


def test_negative_local_rate_rejected(tmp_path):
    with pytest.raises(ConfigurationError, match="eta_l"):
        parse_config(write(tmp_path, MINIMAL + "    [worker]\n    eta_l = -0.1\n"))


def test_unknown_key_suggests(tmp_path):
    with pytest.raises(ConfigurationError) as ei:
        parse_config(write(tmp_path, MINIMAL + "    [worker]\n    lerning_rate = 0.1\n"))
    msg = str(ei.value)
    assert "lerning_rate" in msg and "did you mean" in msg and "eta_l" in msg


def test_unknown_section_rejected(tmp_path):
    with pytest.raises(ConfigurationError, match="section"):
        parse_config(write(tmp_path, MINIMAL + "    [extras]\n    a = 1\n"))


@pytest.mark.parametrize("key", ["M", "T", "seed"])
def test_missing_required_key_named(tmp_path, key):
    body = "\n".join(line for line in MINIMAL.splitlines() if not line.strip().startswith(f"{key} ="))
    with pytest.raises(ConfigurationError, match=key):
        parse_config(write(tmp_path, body))


def test_missing_model_named(tmp_path):
    with pytest.raises(ConfigurationError, match="family"):
        parse_config(write(tmp_path, "[sim]\nM = 2\nT = 1\nseed = 0\n"))


def test_missing_file():
    with pytest.raises(ConfigurationError):
        load_settings("/nonexistent/exp.ini")


def test_quadratic_with_centers_and_cs(tmp_path):
    cfg = parse_config(
        write(
            tmp_path,
            """
            [model]
            family = quadratic
            centers = 1.0, 2.0; -1.0, 0.0
            [server]
            mode = cs
            max_staleness = 3
            [worker]
            step_policy = per_worker
            per_worker_steps = 2,7
            optimizer = scaffold
            [sim]
            M = 2
            T = 5
            seed = 1
            arrivals = alternating
            delay = bounded
            tau_max = 1
            delay_probs = 0.25, 0.75
            x0 = 0.5, 0.5
            """,
        )
    )
    assert cfg.mode == "cs" and cfg.max_staleness == 3
    assert cfg.steps == PerWorkerFixed((2, 7))
    assert isinstance(cfg.optimizer, Scaffold)
    assert cfg.arrivals == Trace(((0,), (1,), (0,), (1,), (0,)))
    assert cfg.delay == BoundedRandom(1, (0.25, 0.75))
    np.testing.assert_array_equal(cfg.x0, [0.5, 0.5])
    np.testing.assert_array_equal(cfg.problem.models[1].center, [-1.0, 0.0])


def test_arrival_and_delay_variants(tmp_path):
    cfg = parse_config(
        write(tmp_path, MINIMAL.replace("m = 5", "m = 3") + "    arrivals = biased\n    delay = last_r\n    R = 5\n"
              + "    [worker]\n    step_policy = dynamic\n    steps = 5\n")
    )
    assert isinstance(cfg.arrivals, Weighted) and cfg.arrivals.m == 3
    assert cfg.delay == UniformLastR(5)
    assert cfg.steps == DynamicUniform(5)


def test_shifted_square_needs_two_workers(tmp_path):
    with pytest.raises(ConfigurationError, match="M = 2"):
        parse_config(write(tmp_path, "[model]\nfamily = shifted_square\n[sim]\nM = 3\nT = 1\nseed = 0\n"))


def test_bad_number(tmp_path):
    with pytest.raises(ConfigurationError, match="sim.T"):
        parse_config(write(tmp_path, MINIMAL.replace("T = 20", "T = lots")))


def test_m_above_M_rejected(tmp_path):
    with pytest.raises(ConfigurationError):
        parse_config(write(tmp_path, MINIMAL.replace("m = 5", "m = 11")))


def test_synthetic_logreg_has_test_split(tmp_path):
    cfg = parse_config(write(tmp_path, MINIMAL + "    [data]\n    p = 2\n"))
    prob = cfg.problem
    assert prob.test_data is not None
    for tr, te in zip(prob.data, prob.test_data):
        assert tr.classes_present == te.classes_present
        assert len(tr.classes_present) == 2
    assert prob.test_accuracy(np.zeros(prob.dim)) is not None


def test_case_sensitive_keys(tmp_path):
    with pytest.raises(ConfigurationError):
        parse_config(write(tmp_path, MINIMAL.replace("M = 10", "m_total = 10")))
