import csv
import subprocess
import sys

import pytest

from thinchannel import cli
from thinchannel.runner import fmt

SMALL = {
    "tau-sweep": "[mesh]\nnx = 16\nny = 16\n[sweep]\nepsilon_grid = 0.5, 0.25\n",
    "bounds-check": "",
    "robin-limit": "",
    "mesh-convergence": ("[profile]\nfamily = direct\ncoefficients = 0.05\n"
                         "[mesh]\nnx = 8\nny = 4\n"),
    "dumbbell-sweep": ("[profile]\nfamily = direct\ncoefficients = 0.05\n"
                       "[sweep]\nepsilon_grid = 0.5, 0.25\n"
                       "[mesh]\nh_base = 0.0625\nchannel_nx = 16\nchannel_ny = 4\n"
                       "nx = 16\nny = 8\n[solver]\nk = 4\n"),
    "dirichlet-example": ("[sweep]\nepsilon_grid = 0.25, 0.03125\n"
                          "[mesh]\nosc_nx = 256\nosc_ny = 64\n[solver]\nk = 2\n"),
    "bracketing-check": ("[profile]\ncoefficients = 0.35, 0, 0.15\ncenter = 0.6\n"
                         "[mesh]\nnx = 16\nny = 16\n"),
    "scaling-check": "[mesh]\nnx = 16\nny = 16\n",
}


def write_config(tmp_path, name, body):
    path = tmp_path / f"{name}.ini"
    path.write_text(f"[experiment]\nname = {name}\n{body}")
    return path


def run_cli(*args):
    return cli.main([str(a) for a in args])


@pytest.mark.parametrize("name", sorted(SMALL))
def test_run_every_experiment(tmp_path, name, capsys):
    cfg = write_config(tmp_path, name, SMALL[name])
    out = tmp_path / "out"
    code = run_cli("run", "--config", cfg, "--out", out)
    printed = capsys.readouterr().out
    assert code == 0, printed
    assert "FAIL" not in printed
    rows = list(csv.reader((out / f"{name}.csv").open()))
    assert len(rows) >= 2
    assert all(len(r) == len(rows[0]) for r in rows)
    summary = (out / f"{name}_summary.txt").read_text()
    assert "result: PASS" in summary


def test_output_deterministic_across_runs_and_jobs(tmp_path):
    cfg = write_config(tmp_path, "tau-sweep", SMALL["tau-sweep"])
    assert run_cli("run", "--config", cfg, "--out", tmp_path / "a") == 0
    assert run_cli("run", "--config", cfg, "--out", tmp_path / "b", "--jobs", "2") == 0
    a = (tmp_path / "a" / "tau-sweep.csv").read_bytes()
    b = (tmp_path / "b" / "tau-sweep.csv").read_bytes()
    assert a == b
    rows = list(csv.reader((tmp_path / "a" / "tau-sweep.csv").open()))
    assert [float(r[0]) for r in rows[1:]] == [0.5, 0.25]


def test_csv_full_precision(tmp_path):
    cfg = write_config(tmp_path, "robin-limit", "")
    run_cli("run", "--config", cfg, "--out", tmp_path)
    rows = list(csv.reader((tmp_path / "robin-limit.csv").open()))
    lam = rows[1][1]
    assert float(lam) == float(format(float(lam), ".17g"))
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(None) == "" and fmt(True) == "true" and fmt(3) == "3"


def test_assertion_failure_exit_code(tmp_path, capsys):
    # a non-convergent constant channel in the bounds chain: tau stays flat
    body = ("[profile]\nfamily = direct\ncoefficients = 0.05\n"
            "[mesh]\nnx = 8\nny = 4\n[sweep]\nepsilon_grid = 0.5, 0.25\n")
    cfg = write_config(tmp_path, "bounds-check", body)
    code = run_cli("run", "--config", cfg, "--out", tmp_path)
    assert code == 2
    assert "FAIL" in capsys.readouterr().out


def test_config_error_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, "tau-sweep", "[sweep]\nepsilon_grid = 0.5, 0\n")
    assert run_cli("run", "--config", cfg) == 1
    err = capsys.readouterr().err
    assert "sweep.epsilon_grid[1]" in err and "line 4" in err


def test_missing_config_file(tmp_path, capsys):
    assert run_cli("validate", "--config", tmp_path / "missing.ini") == 1
    assert "cannot read config" in capsys.readouterr().err


def test_execution_error_exit_code(tmp_path, capsys):
    # channel wider than the base: every sweep row fails
    body = ("[profile]\nfamily = direct\ncoefficients = 0.5\n"
            "[sweep]\nepsilon_grid = 0.5\n[mesh]\nh_base = 0.125\n"
            "channel_nx = 8\nchannel_ny = 4\n[solver]\nk = 3\n")
    cfg = write_config(tmp_path, "dumbbell-sweep", body)
    assert run_cli("run", "--config", cfg, "--out", tmp_path) == 1
    assert "ERROR" in capsys.readouterr().out


def test_validate(tmp_path, capsys):
    cfg = write_config(tmp_path, "tau-sweep", "")
    assert run_cli("validate", "--config", cfg) == 0
    assert "ok: tau-sweep" in capsys.readouterr().out


def test_dump_mesh(tmp_path):
    cfg = write_config(tmp_path, "dumbbell-sweep", SMALL["dumbbell-sweep"])
    run_cli("run", "--config", cfg, "--out", tmp_path, "--dump-mesh")
    base = (tmp_path / "dumbbell-sweep_base_mesh.txt").read_text().splitlines()
    channel = (tmp_path / "dumbbell-sweep_channel_mesh.txt").read_text().splitlines()
    assert any(line.endswith("interface") for line in base)
    assert sum(line.startswith("quad") for line in channel) == 16 * 4


def test_help_lists_defaults():
    proc = subprocess.run([sys.executable, "-m", "thinchannel", "run", "--help"],
                          capture_output=True, text=True, check=True)
    assert "epsilon_grid" in proc.stdout and "--dump-mesh" in proc.stdout


def test_console_entry_point(tmp_path):
    cfg = write_config(tmp_path, "robin-limit", "")
    proc = subprocess.run(["thinchannel", "run", "--config", str(cfg), "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "PASS ratio_in_(0.9,1]" in proc.stdout
