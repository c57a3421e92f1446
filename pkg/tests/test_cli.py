import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from gapflow import cli, experiments
from gapflow.dynamics import CSV_COLUMNS

HEADER = "t,loss,gamma,beta,tau,delta,margin,uniformity,dbeta_dt"
CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(argv):
    return cli.main([str(a) for a in argv])


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_header_contract():
    assert ",".join(CSV_COLUMNS) == HEADER


def test_simulate_ufm_outputs(tmp_path, capsys):
    out = tmp_path / "ufm"
    code = run(["simulate", "ufm", "--horizon", "0.2", "--dt", "0.01", "--set", "integrator.sample_every=5", "--out", str(out), "--self-check"])
    assert code == 0
    echoed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert echoed["experiment"]["kind"] == "ufm" and echoed["integrator"]["horizon"] == 0.2
    text = (out / "trajectory.csv").read_text()
    assert text.splitlines()[0] == HEADER
    assert "\r" not in text
    rows = read_rows(out / "trajectory.csv")[1:]
    assert len(rows) == 5
    data = np.array(rows, dtype=float)
    assert np.all(np.abs(data[:, 4] * data[:, 3] - 1) < 1e-15)
    summary = json.loads((out / "summary.json").read_text())
    for key in ("config_hash", "version", "wall_time_s", "bounds", "rng", "final"):
        assert key in summary
    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved == echoed
    assert (out / "diagnostics.csv").read_text().startswith("t,dscale_dt")


def test_values_round_trip_exactly(tmp_path):
    out = tmp_path / "s"
    assert run(["simulate", "scalar", "--horizon", "0.5", "--dt", "0.01", "--out", str(out), "-q"]) == 0
    cfg = json.loads((out / "resolved_config.json").read_text())
    record, _, _ = experiments.simulate(cfg)
    rows = read_rows(out / "trajectory.csv")[1:]
    for text_row, row in zip(rows, record.rows):
        parsed = [float(v) for v in text_row]
        assert all((a == b) or (np.isnan(a) and np.isnan(b)) for a, b in zip(parsed, row))


@pytest.mark.parametrize("kind", ["scalar", "reduced-theta", "reduced-etf", "reduced-gamma"])
def test_simulate_kinds(tmp_path, kind):
    out = tmp_path / kind
    assert run(["simulate", kind, "--horizon", "1", "--dt", "0.01", "--out", str(out), "-q", "--self-check"]) == 0
    assert (out / "trajectory.csv").exists()


def test_shipped_config_kind_conflict(tmp_path):
    code = run(["simulate", "scalar", "--config", CONFIGS / "mismatch5.toml", "--out", str(tmp_path / "x"), "-q"])
    assert code == 2


def test_exit_code_bad_config(tmp_path, capsys):
    out = tmp_path / "bad"
    assert run(["simulate", "ufm", "--set", "experiment.bogus=1", "--out", str(out), "-q"]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["exit_code"] == 2 and err["error"] == "ConfigError"
    assert json.loads((out / "error.json").read_text())["exit_code"] == 2
    assert run(["simulate", "ufm", "--n", "1", "--out", str(out), "-q"]) == 2


def test_exit_code_divergence(tmp_path):
    out = tmp_path / "div"
    with np.errstate(all="ignore"):
        code = run(["simulate", "ufm", "--set", "init.beta0=1e200", "--set", "temperature.cap=false", "--out", str(out), "-q"])
    assert code == 3
    assert json.loads((out / "error.json").read_text())["exit_code"] == 3


def test_exit_code_invariant(tmp_path, monkeypatch):
    monkeypatch.setattr(experiments, "self_check", lambda kind, record: ["forced violation"])
    out = tmp_path / "inv"
    args = ["simulate", "scalar", "--horizon", "0.1", "--out", str(out), "-q"]
    assert run(args + ["--self-check"]) == 4
    assert json.loads((out / "error.json").read_text())["exit_code"] == 4
    # without the flag the violation is only reported, and the stale error is cleared
    assert run(args) == 0
    assert not (out / "error.json").exists()
    assert json.loads((out / "summary.json").read_text())["self_check"]["violations"] == ["forced violation"]


def test_verify_suites(tmp_path):
    for suite in ("coupling", "lemma3", "bessel"):
        out = tmp_path / suite
        assert run(["verify", suite, "--out", str(out), "-q", "--self-check"]) == 0
        assert json.loads((out / "summary.json").read_text())["passed"] is True
    out = tmp_path / "thm1"
    assert run(["verify", "thm1", "--horizon", "100", "--samples", "20", "--lemma1-horizon", "10", "--out", str(out), "-q"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["lemma1_conservation"]["passed"]
    assert read_rows(out / "trajectory.csv")[0] == list(CSV_COLUMNS)


def test_mc_small(tmp_path, monkeypatch):
    monkeypatch.setenv("GAPFLOW_THREADS", "2")
    out = tmp_path / "mc"
    assert run(["mc", "thm2", "--n", "64", "--d", "8", "--trials", "100", "--out", str(out), "-q"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["workers"] == 2 and summary["trials"] == 100
    assert summary["fraction_positive"] == 1.0


def test_bad_thread_count(tmp_path, monkeypatch):
    monkeypatch.setenv("GAPFLOW_THREADS", "zero")
    assert run(["mc", "thm2", "--trials", "100", "--out", str(tmp_path / "m"), "-q"]) == 2
    monkeypatch.setenv("GAPFLOW_THREADS", "0")
    with pytest.raises(Exception):
        cli.worker_count()


def test_sweep(tmp_path, monkeypatch):
    monkeypatch.setenv("GAPFLOW_THREADS", "2")
    out = tmp_path / "sw"
    args = [
        "sweep", "--config", CONFIGS / "etf256_fixed.toml", "--axis", "temperature.tau_star", "--values", "0.04,0.1",
        "--set", "experiment.n=8", "--set", "experiment.d=9", "--set", "integrator.horizon=0.4",
        "--set", "integrator.dt=0.1", "--out", str(out), "-q",
    ]
    assert run(args) == 0
    agg = read_rows(out / "aggregate.csv")
    assert agg[0][0] == "temperature.tau_star" and agg[0][1:] == ["final_" + c for c in CSV_COLUMNS]
    assert [r[0] for r in agg[1:]] == ["0.04", "0.1"]
    assert float(agg[1][4]) == pytest.approx(25.0)
    assert (out / "temperature.tau_star=0.1" / "trajectory.csv").exists()


def test_deterministic_bytes(tmp_path):
    args = ["simulate", "ufm", "--config", CONFIGS / "etf256_hard_swap.toml", "--set", "experiment.n=6",
            "--set", "experiment.d=7", "--horizon", "1", "-q"]
    assert run(args + ["--out", str(tmp_path / "a")]) == 0
    assert run(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("trajectory.csv", "diagnostics.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    a, b = (json.loads((tmp_path / k / "summary.json").read_text()) for k in "ab")
    a.pop("wall_time_s"), b.pop("wall_time_s")
    assert a == b


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "gapflow.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("gapflow ")
