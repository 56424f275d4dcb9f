import json
import subprocess
import sys

import pytest

from fscx import toys
from fscx.cli import run_cli


@pytest.fixture(scope="module")
def toy_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("toys")
    toys.write_toys(str(d))
    return d


def test_verify_prints_value(toy_dir, tmp_path, capsys):
    rc = run_cli(["verify", "--model", str(toy_dir / "cue.pomdp"), "--fsc", str(toy_dir / "cue.fsc"),
                  "--out", str(tmp_path / "v")])
    assert rc == 0
    assert "J = 1 " in capsys.readouterr().out
    snap = json.loads((tmp_path / "v" / "config.snapshot").read_text())
    assert snap["command"] == "verify"


def test_usage_error_exit_code(capsys):
    assert run_cli(["verify"]) == 2


def test_missing_file_is_runtime_error(tmp_path, capsys):
    rc = run_cli(["verify", "--model", str(tmp_path / "nope.pomdp"), "--fsc", str(tmp_path / "x.fsc"),
                  "--out", str(tmp_path / "v")])
    assert rc == 1
    assert capsys.readouterr().err.startswith("fscx: error")


def test_simulate_then_extract(toy_dir, tmp_path, capsys):
    sim = tmp_path / "sim"
    assert run_cli(["simulate", "--model", str(toy_dir / "alternate.pomdp"), "--fsc", str(toy_dir / "alternate.fsc"),
                    "--lanes", "16", "--steps", "50", "--out", str(sim)]) == 0
    ext = tmp_path / "ext"
    assert run_cli(["extract", "--model", str(toy_dir / "alternate.pomdp"), "--dataset", str(sim / "dataset.traj"),
                    "--out", str(ext)]) == 0
    assert "J = 1" in capsys.readouterr().out
    assert (ext / "controller.fsc").exists()


def test_stats_sign_test(tmp_path, capsys):
    csv = tmp_path / "r.csv"
    csv.write_text("seed,value\n" + "".join(f"{i},{1 + i}\n" for i in range(10)))
    assert run_cli(["stats", "--csv", str(csv), "--column", "value", "--baseline", "0", "--out",
                    str(tmp_path / "s")]) == 0
    assert "10/10 above, p = 9.8e-04" in capsys.readouterr().out


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "fscx", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("fscx ")
