import subprocess
import sys

import pytest

from d2dfl.cli import main

CFG = """[network]
n = 10
link_prob = 0.3
[data]
n_per_class = 60
[train]
T = 10
tau = 5
[sampling]
method = "dpp"
S = 3
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "exp.toml"
    p.write_text(CFG)
    return p


def test_run(cfg_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--config", str(cfg_file), "--offload", "off", "--out", str(out)]) == 0
    assert (out / "metrics.csv").exists() and (out / "config.toml").exists()
    assert "dpp" in capsys.readouterr().out


def test_sweep(cfg_file, tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", "--config", str(cfg_file), "--param", "gamma", "--grid", "1e-4,1e-2",
                 "--out", str(out)]) == 0
    assert len((out / "sweep_gamma.csv").read_text().splitlines()) == 3


def test_diag(cfg_file, tmp_path):
    out = tmp_path / "dg"
    assert main(["diag", "--bounds", "--config", str(cfg_file), "--out", str(out)]) == 0
    assert (out / "bounds.csv").read_text().startswith("t,k,measured_gap,bound")


def test_train_gcn(tmp_path):
    out = tmp_path / "w.bin"
    assert main(["train-gcn", "--n", "4", "--s", "2", "--realizations", "2", "--epochs", "5",
                 "--out", str(out), "--save-realizations", str(tmp_path / "rs")]) == 0
    assert out.exists() and len(list((tmp_path / "rs").iterdir())) == 2


def test_bad_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[network]\nbogus = 1\n")
    assert main(["run", "--config", str(bad)]) == 2
    assert "bogus" in capsys.readouterr().err


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "d2dfl.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "train-gcn" in r.stdout
