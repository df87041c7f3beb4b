import struct
import subprocess
import sys
import textwrap

import numpy as np
import pytest

from anarchic_fl.cli import main
from anarchic_fl.metrics import CSV_HEADER, read_metrics

QUAD = """
    [model]
    family = quadratic
    centers = 1.0; -1.0
    [server]
    mode = cs
    max_staleness = 3
    [worker]
    eta_l = 0.05
    steps = 1
    [sim]
    M = 2
    T = 40
    seed = 0
    arrivals = alternating
    x0 = 1.0
"""


@pytest.fixture
def quad_cfg(tmp_path):
    p = tmp_path / "q.ini"
    p.write_text(textwrap.dedent(QUAD))
    return p


def test_run_writes_metrics_and_conditions(quad_cfg, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(quad_cfg), "--out", str(out)]) == 0
    assert (out / "metrics.csv").read_text().splitlines()[0] == CSV_HEADER
    assert len(read_metrics(out / "metrics.csv")) == 40
    assert (out / "conditions.csv").read_text().startswith("theorem,label")
    assert "final ||grad f||^2" in capsys.readouterr().out


def test_check_conditions_exit_codes(quad_cfg, capsys):
    assert main(["check-conditions", "--config", str(quad_cfg), "--theorem", "cs"]) == 0
    assert "theorem cs: PASS" in capsys.readouterr().out


def test_check_conditions_failing(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text(textwrap.dedent(QUAD).replace("eta_l = 0.05", "eta_l = 5.0"))
    assert main(["check-conditions", "--config", str(p), "--theorem", "cd-general"]) == 1
    assert "VIOLATED" in capsys.readouterr().out


@pytest.mark.parametrize("spec", ["quadratic", "shifted_square", "logreg:d=4,C=3,l2=0.1"])
def test_gradcheck(spec, capsys):
    assert main(["gradcheck", "--model", spec, "--points", "20"]) == 0
    assert "ok" in capsys.readouterr().out


def test_preset_lower_bound(tmp_path, capsys):
    assert main(["preset", "lower-bound", "--param", "T=200", "--out", str(tmp_path)]) == 0
    assert "4.0" in capsys.readouterr().out
    assert (tmp_path / "summary.txt").exists()


def test_config_error_exit_code(tmp_path, capsys):
    p = tmp_path / "x.ini"
    p.write_text("[model]\nfamily = logreg\n[sim]\nM = 2\nT = 1\nseed = 0\nlerning_rate = 1\n")
    assert main(["run", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert "did you mean" in capsys.readouterr().err


def test_bad_param_syntax(capsys):
    assert main(["preset", "speedup", "--param", "oops"]) == 2


def test_mnist_flags(tmp_path, capsys):
    rng = np.random.default_rng(0)
    n = 200
    labels = np.arange(n) % 10
    imgs = (rng.random((n, 4, 4)) * 255).astype(np.uint8)
    ip, lp = tmp_path / "i.idx", tmp_path / "l.idx"
    ip.write_bytes(struct.pack(">IIII", 0x803, n, 4, 4) + imgs.tobytes())
    lp.write_bytes(struct.pack(">II", 0x801, n) + labels.astype(np.uint8).tobytes())
    cfg = tmp_path / "m.ini"
    cfg.write_text("[model]\nfamily = logreg\n[data]\np = 10\n[worker]\nbatch_size = 5\n[sim]\nM = 4\nT = 3\nseed = 0\n")
    rc = main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--mnist-images", str(ip), "--mnist-labels", str(lp)])
    assert rc == 0
    assert len(read_metrics(tmp_path / "o" / "metrics.csv")) == 3


def test_log_level_env_and_module_entry(quad_cfg, tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "anarchic_fl", "check-conditions", "--config", str(quad_cfg), "--theorem", "cs"],
        capture_output=True, text=True, env={"AFL_LOG_LEVEL": "debug", "PATH": ""},
    )
    assert res.returncode == 0, res.stderr
