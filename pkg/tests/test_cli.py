import json
import subprocess
import sys

import numpy as np
import pytest

from acpomdp import io
from acpomdp.cli import OUT_ENV, main
from acpomdp.model import builtin


def run(tmp_path, *argv):
    return main(list(argv) + ["--out", str(tmp_path)])


def report(tmp_path, name):
    return json.loads((tmp_path / f"{name}.json").read_text())


def test_check_ex1(tmp_path):
    assert run(tmp_path, "check", "--builtin", "ex1", "--param", "eps=0.1") == 0
    rep = report(tmp_path, "assumptions")
    assert rep["k2"] == pytest.approx(0.8, abs=1e-12)
    assert rep["passes_main_assumption"] is True
    assert rep["alpha_label"].startswith("grid alpha")


def test_check_invalid_model_file(tmp_path, capsys):
    doc = io.model_to_dict(builtin("ex1"))
    doc["transitions"][0][1] = [0.5, 0.5, 0.5, 0.0]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    assert main(["check", "--model", str(path), "--out", str(tmp_path)]) == 1
    assert "RowNotStochastic" in capsys.readouterr().err


def test_model_file_round_trip(tmp_path):
    m = builtin("ex1")
    io.save_model(m, tmp_path / "ex1.json")
    back = io.load_model(tmp_path / "ex1.json")
    assert np.array_equal(back.transitions, m.transitions) and back.metric_kind == "discrete"
    from acpomdp.model import discretize
    line = discretize(builtin("ex2"), 6)
    io.save_model(line, tmp_path / "line.json")
    assert np.array_equal(io.load_model(tmp_path / "line.json").metric, line.metric)


def test_model_file_declared_sizes(tmp_path):
    doc = io.model_to_dict(builtin("ex1"))
    doc["n_obs"] = 3
    (tmp_path / "m.json").write_text(json.dumps(doc))
    assert main(["check", "--model", str(tmp_path / "m.json"), "--out", str(tmp_path)]) == 1


def test_exit_codes(tmp_path, capsys):
    assert run(tmp_path, "check", "--builtin", "ex1", "--param", "eps=0.6") == 1
    assert run(tmp_path, "check", "--builtin", "ex3", "--param", "sigma=0.001", "--grid", "40") == 2
    assert run(tmp_path, "check", "--model", str(tmp_path / "missing.json")) == 3
    (tmp_path / "junk.json").write_text("{not json")
    assert run(tmp_path, "check", "--model", str(tmp_path / "junk.json")) == 3
    assert run(tmp_path, "check") == 4
    with pytest.raises(SystemExit) as err:
        main(["nonsense"])
    assert err.value.code == 4
    assert run(tmp_path, "check", "--builtin", "ex1", "--param", "nope=1") == 1
    assert run(tmp_path, "robustness", "--builtin", "ex1", "--resolution", "4", "--nu", "1,0,0,0") == 1


def test_solve_outputs(tmp_path):
    assert run(tmp_path, "solve", "--builtin", "ex1", "--resolution", "6", "--beta-schedule", "0.9,0.99") == 0
    sol = report(tmp_path, "solution")
    assert [row["beta"] for row in sol["beta_trace"]] == [0.9, 0.99]
    header, rows = io.read_csv(tmp_path / "relative_value.csv")
    assert header == ["rep", "z0", "z1", "z2", "z3", "h", "action"] and len(rows) == 84
    header, rows = io.read_csv(tmp_path / "beta_trace.csv")
    assert header == ["beta", "rho", "span_h"] and len(rows) == 2


def test_other_commands(tmp_path):
    assert run(tmp_path, "simulate", "--builtin", "ex1", "--horizon", "30", "--policy", "constant:1") == 0
    header, rows = io.read_csv(tmp_path / "trajectory.csv")
    assert header[:5] == ["t", "state", "obs", "action", "cost"] and len(rows) == 30
    assert run(tmp_path, "stability", "--builtin", "ex1", "--horizon", "10", "--runs", "5",
               "--nu", "0.7,0.1,0.1,0.1") == 0
    assert io.read_csv(tmp_path / "tv.csv")[0] == ["t", "mean_tv"]
    assert run(tmp_path, "qlearn", "--builtin", "ex1", "--variant", "window", "--steps", "3000") == 0
    assert io.read_csv(tmp_path / "qtable.csv")[0] == ["state", "action", "value", "visits"]
    side = json.loads((tmp_path / "qtable.states.json").read_text())
    assert side["state_kind"] == "window(1)" and len(side["states"]) == 8
    assert run(tmp_path, "window", "--builtin", "ex1", "--runs", "5", "--t-max", "3") == 0
    assert report(tmp_path, "window")["loss_caveat"] == "supremum sampled, not exact"
    assert run(tmp_path, "robustness", "--builtin", "ex1", "--resolution", "4", "--horizon", "50",
               "--runs", "3", "--beta", "0.9") == 0
    assert "bound" in report(tmp_path, "robustness")


def test_reproducible_csv(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["simulate", "--builtin", "ex1", "--horizon", "200", "--seed", "7", "--out", str(out)]) == 0
    assert (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
    assert main(["check", "--builtin", "ex1"]) == 0
    assert (tmp_path / "env" / "assumptions.json").exists()


def test_csv_float_precision(tmp_path):
    io.write_csv(tmp_path / "x.csv", ["v"], [(1 / 3,)])
    assert io.read_csv(tmp_path / "x.csv")[1] == [["0.33333333333333331"]]


def test_console_script(tmp_path):
    out = subprocess.run([sys.executable, "-m", "acpomdp.cli", "check", "--builtin", "ex1",
                          "--format", "report", "--out", str(tmp_path)], capture_output=True, text=True)
    assert out.returncode == 0
    assert json.loads(out.stdout)["alpha_bar"] == pytest.approx(0.65, abs=1e-12)
