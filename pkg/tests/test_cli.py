import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from kinwkb import cli

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
FLAT = str(CONFIGS / "flat_d1.toml")
KAPPA = str(CONFIGS / "kappa.toml")


def _rows(path):
    lines = Path(path).read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    return list(csv.DictReader(lines[1:]))


@pytest.mark.parametrize("sub", ["flow", "bvp", "action", "kernel"])
def test_basic_subcommands(tmp_path, sub):
    assert cli.main([sub, "--config", FLAT, "--out", str(tmp_path)]) == 0
    man = json.loads((tmp_path / f"manifest-{sub}.json").read_text())
    assert man["status"] == "ok"
    for name in man["outputs"]:
        assert (tmp_path / name).exists()


def test_flat_kernel_row(tmp_path):
    assert cli.main(["kernel", "--config", FLAT, "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "kernel.csv")
    r0 = rows[0]
    assert float(r0["x1"]) == 0.0 and float(r0["y1"]) == 0.0
    assert float(r0["u_bvp"]) == pytest.approx(0.551329, abs=1e-6)
    assert float(r0["u_series"]) == pytest.approx(float(r0["u_bvp"]), rel=1e-10)


def test_flow_conserves_energy(tmp_path):
    assert cli.main(["flow", "--config", KAPPA, "--out", str(tmp_path),
                     "--set", "scenario.flow_q0=[0.3, -0.1]",
                     "--set", "scenario.flow_p0=[1.0, 0.5]"]) == 0
    H = np.array([float(r["H"]) for r in _rows(tmp_path / "flow.csv")])
    assert np.ptp(H) <= 1e-10 * max(1.0, abs(H[0]))


def test_expand(tmp_path):
    assert cli.main(["expand", "--config", KAPPA, "--out", str(tmp_path)]) == 0
    man = json.loads((tmp_path / "manifest-expand.json").read_text())
    assert man["report"]["residual_zero"] is True
    assert (tmp_path / "expand-diff.json").exists()


def test_residual_and_trace_flat(tmp_path):
    assert cli.main(["residual", "--config", KAPPA, "--out", str(tmp_path)]) == 0
    slope = json.loads((tmp_path / "residual.json").read_text())["slope"]
    assert slope == pytest.approx(2.0, abs=0.2)
    assert cli.main(["trace", "--config", FLAT, "--out", str(tmp_path),
                     "--set", "scenario.t_grid=[0.5]", "--set", "scenario.h=1.0"]) == 0
    tr = json.loads((tmp_path / "trace.json").read_text())
    assert tr["estimates"][0]["value"] == pytest.approx(7.0898154, abs=1e-6)


def test_mc_requires_seed(tmp_path):
    assert cli.main(["mc", "--config", KAPPA, "--out", str(tmp_path)]) == 2
    man = json.loads((tmp_path / "manifest-mc.json").read_text())
    assert man["status"] == "config-error"


def test_mc_deterministic_and_binary(tmp_path):
    args = ["mc", "--config", KAPPA, "--seed", "5", "--set", "oracle.n_paths=20000",
            "--set", "oracle.n_steps=20"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(args + ["--out", str(a)]) == 0
    assert cli.main(args + ["--out", str(b), "--threads", "3"]) == 0
    assert (a / "mc-samples.csv").read_bytes() == (b / "mc-samples.csv").read_bytes()
    assert (a / "mc-density.json").read_bytes() == (b / "mc-density.json").read_bytes()
    c = tmp_path / "c"
    assert cli.main(args + ["--out", str(c), "--set", "oracle.binary=true"]) == 0
    head, z = cli.read_samples_binary(c / "mc-samples.bin")
    ref = np.loadtxt(a / "mc-samples.csv", delimiter=",", skiprows=2)
    assert np.array_equal(z, ref)
    assert head["seed"] == 5 and head["d"] == 2 and head["n"] == 20000


def test_compare(tmp_path):
    assert cli.main(["compare", "--config", FLAT, "--out", str(tmp_path), "--assert"]) == 0
    code = cli.main(["compare", "--config", FLAT, "--out", str(tmp_path), "--assert",
                     "--seed", "1", "--set", "oracle.n_paths=20000", "--set", "oracle.n_steps=20",
                     "--set", "oracle.rel_tol=1e-9", "--set", "oracle.n_sigma=1e-9"])
    assert code == 4


def test_bad_config(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[metric]\ndim = 9\n")
    assert cli.main(["flow", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert cli.main(["flow", "--out", str(tmp_path), "--set", "solver.nope=1"]) == 2
    assert cli.main(["flow", "--config", str(tmp_path / "missing.toml")]) == 2


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "kinwkb.cli", "bvp", "--config", FLAT,
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
