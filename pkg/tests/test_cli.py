import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from specsurg.cli import run


@pytest.fixture
def example_file(tmp_path):
    path = tmp_path / "ex.json"
    assert run(["catalog", "--emit", "example89", "--out", str(path)]) == 0
    return path


def test_catalog_list(capsys):
    assert run(["catalog", "--list"]) == 0
    names = [line.split("\t")[0] for line in capsys.readouterr().out.splitlines()]
    assert "free" in names and "example89" in names


def test_scatter_csv_layout(tmp_path, example_file):
    out = tmp_path / "s.csv"
    assert run(["scatter", "--problem", str(example_file), "--kmin", "0.5", "--kmax", "2", "--points", "4", "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["k", "S11_re", "S11_im"]
    k, re, im = map(float, rows[2])
    assert k == 1.0
    ref = -(k + 1j) / (k - 1j)
    assert abs(complex(re, im) - ref) < 1e-6


def test_scatter_matrix_columns_and_threads(tmp_path):
    prob = tmp_path / "free2.json"
    assert run(["catalog", "--emit", "free", "--n", "2", "--boundary", "neumann", "--out", str(prob)]) == 0
    outs = []
    for threads in ("1", "3"):
        out = tmp_path / f"s{threads}.csv"
        args = ["scatter", "--problem", str(prob), "--kmin", "0.1", "--kmax", "5", "--points", "600", "--threads", threads, "--out", str(out)]
        assert run(args) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    header = outs[0].decode().splitlines()[0].split(",")
    assert header == ["k"] + [f"S{i}{j}_{p}" for i in (1, 2) for j in (1, 2) for p in ("re", "im")]
    data = np.loadtxt(tmp_path / "s1.csv", delimiter=",", skiprows=1)
    assert np.abs(data[:, 1::2] - np.array([1, 0, 0, 1])).max() < 1e-10


def test_spectrum_and_surgery(tmp_path, example_file, capsys):
    spec = tmp_path / "spec.json"
    assert run(["spectrum", "--problem", str(example_file), "--out", str(spec)]) == 0
    assert json.loads(spec.read_text())["states"] == []
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({"kind": "add", "kappa": 1.0, "C": [[4.0, 0.0]]}))
    out, grid = tmp_path / "r.json", tmp_path / "v.csv"
    args = ["surgery", "--problem", str(example_file), "--plan", str(plan), "--out", str(out), "--grid-out", str(grid)]
    assert run(args) == 0
    first = out.read_bytes()
    assert run(args) == 0
    assert out.read_bytes() == first
    header = grid.read_text().splitlines()[0]
    assert header == "x,V11_re,V11_im"
    # the transformed problem now holds the state; adding it again collides
    assert run(["surgery", "--problem", str(out), "--plan", str(plan), "--out", str(tmp_path / "r2.json")]) == 1
    assert "distinct from κ_j" in capsys.readouterr().err


@pytest.mark.parametrize(
    "args,message",
    [
        (["scatter", "--problem", "missing.json", "--kmin", "1", "--kmax", "2", "--points", "2"], "must exist"),
        (["verify", "--suite", "battery"], "needs --problem"),
        (["scatter", "--problem", "{ex}", "--kmin", "2", "--kmax", "1", "--points", "2"], "kmin < kmax"),
        (["scatter", "--problem", "{ex}", "--kmin", "1", "--kmax", "2", "--points", "2", "--out", "/nonexistent/s.csv"], "must exist"),
        (["scatter", "--problem", "{ex}", "--kmin", "1", "--kmax", "2", "--points", "2", "--out", "{ex}"], "overwrite"),
        (["catalog", "--emit", "nope"], "unknown catalog"),
    ],
)
def test_input_errors_exit_one(args, message, example_file, capsys):
    args = [a.replace("{ex}", str(example_file)) for a in args]
    assert run(args) == 1
    assert message in capsys.readouterr().err


def test_invalid_problem_names_the_failed_check(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n": 1, "kind": "catalog", "catalog": "free", "boundary": {"A": [[1, 0]], "B": [[0, 1]]}}))
    assert run(["spectrum", "--problem", str(bad)]) == 1
    assert "-B^dag A + A^dag B = 0" in capsys.readouterr().err


def test_bad_tolerance_env(monkeypatch, example_file, capsys):
    monkeypatch.setenv("SPECSURG_TOL", "-1")
    assert run(["scatter", "--problem", str(example_file), "--kmin", "1", "--kmax", "2", "--points", "2"]) == 1
    assert "SPECSURG_TOL" in capsys.readouterr().err


def test_unknown_subcommand_exits_one():
    assert run(["plot"]) == 1


def test_verify_golden_via_module(tmp_path):
    out = tmp_path / "g.json"
    proc = subprocess.run([sys.executable, "-m", "specsurg", "verify", "--suite", "golden", "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert "suite golden: PASS" in proc.stdout
    report = json.loads(out.read_text())
    assert report["passed"] and all(c["pass"] for c in report["checks"])


def test_verify_parseval_exit_code(tmp_path):
    prob = tmp_path / "free.json"
    assert run(["catalog", "--emit", "free", "--out", str(prob)]) == 0
    assert run(["verify", "--suite", "parseval", "--problem", str(prob)]) == 0
