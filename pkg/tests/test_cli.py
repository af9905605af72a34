import json

import numpy as np
import pytest

from dynadmm.cli import build_parser, main
from dynadmm.diagnostics import read_csv

LQ_TEXT = """
[instance]
kind = lq
n = 4
d = 2
seed = 3

[admm]
rho = 5
eta = 10
max_iter = 4000
kkt_tol = 1e-7
feas_tol = 1e-9
step_tol = none
inner_tol = 1e-12
"""


def _write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_usage_errors_exit_2(capsys):
    for argv in ([], ["frobnicate"], ["burgers", "--dt", "0.05"], ["solve"]):
        with pytest.raises(SystemExit) as info:
            main(argv)
        assert info.value.code == 2
    capsys.readouterr()


def test_global_flags_on_either_side():
    a = build_parser().parse_args(["--max-iter", "5", "lorenz4dvar"])
    b = build_parser().parse_args(["lorenz4dvar", "--max-iter", "5"])
    assert a.max_iter == b.max_iter == 5


def test_bad_config_exit_2(tmp_path, capsys):
    bad = _write(tmp_path, "[instance]\nkind = lq\nbogus = 1\n")
    assert main(["solve", bad, "--out", str(tmp_path / "o")]) == 2
    assert main(["solve", str(tmp_path / "missing.ini")]) == 2
    assert main(["solve", "no-such-bundle"]) == 2
    # penalties are checked against n when the solve starts
    neg = _write(tmp_path, LQ_TEXT.replace("rho = 5", "rho = -1"), "neg.ini")
    assert main(["solve", neg, "--out", str(tmp_path / "o")]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_solve_lq_writes_outputs(tmp_path):
    out = tmp_path / "o"
    assert main(["solve", _write(tmp_path, LQ_TEXT), "--out", str(out)]) == 0
    summ = json.loads((out / "summary.json").read_text())
    assert summ["status"] == "kkt"
    assert summ["oracle_gap_inf"] <= 1e-5
    sol = np.loadtxt(out / "solution.csv", delimiter=",", skiprows=1)
    assert sol.shape == (5, 2)
    assert len(read_csv(out / "iterations.csv")) == summ["iterations"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 3 and manifest["started"] is None


def test_tol_and_max_iter_overrides(tmp_path):
    out = tmp_path / "o"
    assert main(["solve", _write(tmp_path, LQ_TEXT), "--out", str(out), "--max-iter", "3"]) == 0
    assert len(read_csv(out / "iterations.csv")) == 3
    assert main(["solve", _write(tmp_path, LQ_TEXT), "--out", str(out), "--tol", "1e-3"]) == 0
    assert json.loads((out / "summary.json").read_text())["constraint_inf"] <= 1e-3


def test_tune_bundled_synthetic(tmp_path):
    out = tmp_path / "o"
    assert main(["tune", "synthetic", "--out", str(out)]) == 0
    cert = json.loads((out / "certificate.json").read_text())["certificate"]
    assert cert["certified"] is True


def test_tune_uncertified_exit_1(tmp_path):
    # a long chain with a weak contraction cannot be certified
    text = ("[instance]\nkind = synthetic\nn = 40\nd = 2\nseed = 0\ncontraction = 0.9\n"
            "[tuning]\neta = 1.0\nlevel_set_floor = false\n")
    assert main(["tune", _write(tmp_path, text), "--out", str(tmp_path / "o")]) == 1


def test_lorenz_runs_are_byte_identical(tmp_path):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["lorenz4dvar", "--seed", "7", "--max-iter", "20", "--out", str(out)]) == 0
    for name in ("iterations.csv", "trajectory.csv", "summary.json", "manifest.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_lorenz_baseline_outputs(tmp_path):
    out = tmp_path / "o"
    assert main(["lorenz4dvar", "--max-iter", "20", "--baseline", "cg", "--out", str(out)]) == 0
    summ = json.loads((out / "summary.json").read_text())
    assert {"rmse_admm", "rmse_init", "rmse_cg"} <= set(summ)
    trace = np.loadtxt(out / "trace_cg.csv", delimiter=",", skiprows=1)
    assert np.all(np.diff(trace[:, 0]) <= 0)


def test_burgers_schemes(tmp_path):
    for scheme in ("explicit", "implicit"):
        out = tmp_path / scheme
        assert main(["burgers", "--dt", "0.1", "--scheme", scheme, "--out", str(out)]) == 0
        u = np.loadtxt(out / "solution.csv", delimiter=",", skiprows=1)
        assert u.shape == (21, 101)
    out = tmp_path / "admm"
    assert main(["burgers", "--dt", "0.1", "--max-iter", "10", "--svg", "--out", str(out)]) == 0
    assert len(read_csv(out / "iterations.csv")) == 10
    assert (out / "iterations.svg").exists()
    assert "newton_gap_inf" in json.loads((out / "summary.json").read_text())


@pytest.mark.slow
def test_burgers_admm_reaches_tolerance(tmp_path):
    out = tmp_path / "o"
    assert main(["burgers", "--dt", "0.1", "--scheme", "admm", "--out", str(out)]) == 0
    recs = read_csv(out / "iterations.csv")
    summ = json.loads((out / "summary.json").read_text())
    # the bundled config stops on feasibility 1e-6
    assert summ["status"] == "feas" and recs[-1].constraint_inf <= 1e-6
    assert summ["newton_gap_inf"] <= 1e-4


@pytest.mark.parametrize("name", ["lorenz4dvar", "burgers", "synthetic", "lq"])
def test_checkgrad_bundled(name, capsys):
    assert main(["checkgrad", name]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) >= 3 and all(line.endswith("ok") for line in lines)


def test_wall_clock_records_times(tmp_path):
    out = tmp_path / "o"
    assert main(["solve", _write(tmp_path, LQ_TEXT), "--max-iter", "5", "--wall-clock",
                 "--out", str(out)]) == 0
    assert json.loads((out / "manifest.json").read_text())["started"] is not None
    assert any(r.wall_ms > 0 for r in read_csv(out / "iterations.csv"))
