import csv
import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from gradeq import cli
from gradeq.io import IngestError, ingest_csv, read_csv

SPECS = {
    "uniform": {"kind": "uniform", "length": 300, "seed": 3, "params": {"half_width": 1.0}},
    "bernoulli": {"kind": "bernoulli-calibrated", "length": 300, "seed": 4},
    "grouped": {"kind": "grouped", "length": 300, "seed": 5, "b": 3.0,
                "params": {"assignment": "disjoint", "d": 3, "offsets": [0.0, 1.0, -0.5], "labels": ["A", "B", "C"]}},
    "grouped-bern": {"kind": "grouped", "length": 300, "seed": 6,
                     "params": {"base": "bernoulli", "assignment": "overlapping", "d": 2, "probs": [0.5, 0.5],
                                "offsets": [0.05, -0.05]}},
    "shift": {"kind": "piecewise-shift", "length": 400, "seed": 7,
              "params": {"segments": [[200, 0, 1], [200, 2, 1]]}},
    "battles": {"kind": "bradley-terry", "length": 400, "seed": 8, "params": {"strengths": [0.0, 0.5, -0.5]}},
}

# (command flags, spec key)
RUNS = [
    (["debias", "--kind", "regression", "--eta", "0.05"], "uniform"),
    (["debias", "--kind", "classification", "--eta", "0.2"], "bernoulli"),
    (["multigroup", "--eta", "0.1", "--disjoint"], "grouped"),
    (["multigroup", "--kind", "classification", "--eta", "0.1"], "grouped-bern"),
    (["multigroup", "--regularizer", "ridge", "--eta", "0.1", "--lam", "0.01"], "grouped"),
    (["multigroup", "--kind", "classification", "--regularizer", "lasso", "--eta", "0.1"], "grouped-bern"),
    (["track-quantile", "--tau", "0.9", "--eta", "0.1"], "shift"),
    (["ensemble", "--tau", "0.8", "--nus", "0.01,0.1,1"], "shift"),
    (["elo", "--eta", "0.1"], "battles"),
    (["diagnose", "--loss", "squared", "--eta", "0.1"], "uniform"),
    (["diagnose", "--loss", "quantile", "--eta", "0.1", "--tau", "0.3"], "uniform"),
    (["diagnose", "--loss", "absolute", "--c", "0.5", "--alpha", "0.5"], "uniform"),
    (["diagnose", "--loss", "logistic", "--eta", "0.5", "--range-a", "-2", "--range-b", "2"], "uniform"),
]


def _ids(runs):
    return [" ".join(r[0][:3]) for r in runs]


def _run(argv):
    return cli.main([str(a) for a in argv])


def _csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def _summary(d):
    with open(os.path.join(d, "summary.json"), encoding="utf-8") as fh:
        return json.load(fh)


def _bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


@pytest.fixture(autouse=True)
def _no_seed_env(monkeypatch):
    monkeypatch.delenv("GEQ_SEED", raising=False)


@pytest.mark.parametrize("flags, key", RUNS, ids=_ids(RUNS))
def test_round_trip_byte_identical(tmp_path, flags, key):
    spec = json.dumps(SPECS[key])
    data = tmp_path / "data.csv"
    assert _run(["simulate", "--spec", spec, "--output", data, "--output-dir", tmp_path / "sim"]) == 0
    assert _run(flags + ["--input", data, "--output-dir", tmp_path / "a"]) == 0
    assert _run(flags + ["--generate", spec, "--output-dir", tmp_path / "b"]) == 0
    assert _bytes(tmp_path / "a" / "metrics.csv") == _bytes(tmp_path / "b" / "metrics.csv")
    for extra in ("elo.csv", "groups.csv"):
        if (tmp_path / "a" / extra).exists():
            assert _bytes(tmp_path / "a" / extra) == _bytes(tmp_path / "b" / extra)


@pytest.mark.parametrize("flags, key", RUNS, ids=_ids(RUNS))
def test_outputs_parse_with_constant_width(tmp_path, flags, key):
    assert _run(flags + ["--generate", json.dumps(SPECS[key]), "--output-dir", tmp_path]) == 0
    for name in os.listdir(tmp_path):
        if name.endswith(".csv"):
            header, rows = read_csv(str(tmp_path / name))
            assert all(len(r) == len(header) for r in rows)
    s = _summary(tmp_path)
    for key_ in ("T", "final_bias_norms", "coverage_gap", "bound_satisfaction_fraction", "runtime_seconds"):
        assert key_ in s
    prov = s["provenance"]
    assert prov["version"] and prov["seed"] == SPECS[key]["seed"]
    assert prov["config"]["command"] == flags[0]


@pytest.mark.parametrize("flags, key", [r for r in RUNS if r[0][0] != "ensemble"], ids=_ids(
    [r for r in RUNS if r[0][0] != "ensemble"]))
def test_satisfaction_fraction_recomputable(tmp_path, flags, key):
    assert _run(flags + ["--generate", json.dumps(SPECS[key]), "--output-dir", tmp_path]) == 0
    rows = _csv(tmp_path / "metrics.csv")
    col = rows[0].index("satisfied")
    cells = [r[col] for r in rows[1:]]
    s = _summary(tmp_path)
    if all(c == "" for c in cells):
        assert s["bound_satisfaction_fraction"] is None
    else:
        assert s["bound_satisfaction_fraction"] == sum(c == "true" for c in cells) / len(cells)


def test_debias_smoke(tmp_path):
    data = tmp_path / "stream.csv"
    data.write_text("f,y\n0,1\n0.5,0.2\n0.1,-0.3\n")
    assert _run(["debias", "--kind", "regression", "--eta", "0.05", "--input", data, "--output-dir", tmp_path / "o"]) == 0
    rows = _csv(tmp_path / "o" / "metrics.csv")
    assert rows[0] == ["t", "f", "y", "adjustment", "adjusted", "avg_grad_norm", "identity_residual", "bound", "satisfied"]
    assert len(rows) == 4
    assert float(rows[1][3]) == 0.0
    assert float(rows[2][3]) == pytest.approx(0.05)
    s = _summary(tmp_path / "o")
    assert s["T"] == 3 and s["bound_satisfaction_fraction"] == 1.0


def test_counterexample_squared(tmp_path):
    argv = ["counterexample", "--name", "nr-not-geq-squared", "--a", "-1", "--b", "2", "--n", "2", "--m", "1",
            "--reps", "10", "--output-dir", tmp_path]
    assert _run(argv) == 0
    s = _summary(tmp_path)
    assert s["avg_gradient"] == pytest.approx(0.81650, abs=5e-6)
    assert s["avg_gradient"] == pytest.approx(math.sqrt(6) / 3, abs=1e-12)
    assert s["measured"]["avg_regret"] == pytest.approx(0.0, abs=1e-9)


def test_counterexample_spiral(tmp_path):
    assert _run(["counterexample", "--name", "spiral", "--eta", "0.1", "--L", "2", "--T", "50",
                 "--output-dir", tmp_path]) == 0
    s = _summary(tmp_path)
    assert s["final_sq_norm"] == pytest.approx(1 + 0.04 * 50, abs=1e-10)
    assert s["bound_satisfaction_fraction"] == 1.0


def test_counterexample_zero_regret_bias_uses_seed(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(["counterexample", "--name", "zero-regret-bias", "--T", "20", "--seed", "4", "--output-dir", a]) == 0
    assert _run(["counterexample", "--name", "zero-regret-bias", "--T", "20", "--seed", "4", "--output-dir", b]) == 0
    assert _bytes(a / "metrics.csv") == _bytes(b / "metrics.csv")


def test_elo_table(tmp_path):
    data = tmp_path / "battles.csv"
    data.write_text("model_a,model_b,winner\nx,y,y\ny,z,y\nx,z,x\n")
    assert _run(["elo", "--input", data, "--eta", "0.1", "--output-dir", tmp_path / "o"]) == 0
    rows = _csv(tmp_path / "o" / "elo.csv")
    assert rows[0] == ["model", "score", "count", "signed_bias", "raw_bias"]
    assert [r[0] for r in rows[1:]] == ["x", "y", "z"]
    assert [int(r[2]) for r in rows[1:]] == [2, 2, 2]
    met = _csv(tmp_path / "o" / "metrics.csv")
    assert met[0][:5] == ["t", "model_a", "model_b", "y", "p"]
    assert [r[3] for r in met[1:]] == ["1", "0", "0"]
    assert float(met[1][4]) == 0.5


def test_battles_encoding(tmp_path):
    p = tmp_path / "b.csv"
    p.write_text("model_a,model_b,winner\nA,B,B\nB,A,B\n")
    battles, names = ingest_csv(str(p), "battles")
    assert names == ["A", "B"]
    np.testing.assert_array_equal(battles, [[0, 1, 1], [1, 0, 0]])
    p.write_text("model_a,model_b,winner\nA,B,C\n")
    with pytest.raises(IngestError, match="row 1"):
        ingest_csv(str(p), "battles")


def test_y_only_file_warns(tmp_path, capsys):
    data = tmp_path / "y.csv"
    data.write_text("y\n1\n2\n")
    assert _run(["debias", "--input", data, "--output-dir", tmp_path / "o"]) == 0
    assert "default to 0" in capsys.readouterr().err
    assert _summary(tmp_path / "o")["T"] == 2
    rows = _csv(tmp_path / "o" / "metrics.csv")
    assert [r[1] for r in rows[1:]] == ["0.0", "0.0"]


def test_group_columns_and_groups_csv(tmp_path):
    data = tmp_path / "g.csv"
    data.write_text("f,y,group:A,group:B\n0,1,1,0\n0,0,0,1\n0,1,1,0\n")
    st = ingest_csv(str(data), "stream")
    assert st.d == 2 and st.labels == ["A", "B"]
    assert _run(["multigroup", "--input", data, "--eta", "0.1", "--disjoint", "--output-dir", tmp_path / "o"]) == 0
    rows = _csv(tmp_path / "o" / "groups.csv")
    assert rows[0] == ["group", "count", "bias", "bound", "satisfied", "sublinear"]
    assert [r[:2] for r in rows[1:]] == [["A", "2"], ["B", "1"]]
    met = _csv(tmp_path / "o" / "metrics.csv")
    assert "group:A" in met[0] and "group:B" in met[0]


def test_disjoint_flag_checked(tmp_path):
    data = tmp_path / "g.csv"
    data.write_text("f,y,group:A,group:B\n0,1,1,1\n")
    assert _run(["multigroup", "--input", data, "--disjoint", "--output-dir", tmp_path / "o"]) == 2


@pytest.mark.parametrize("content, needle", [
    ("f,y\n0,abc\n", "row 1"),
    ("f,y\n0,1\n0,nan\n", "row 2"),
    ("f\n0\n", "'y'"),
    ("f,y,colour\n0,1,2\n", "unknown columns"),
    ("f,y\n0,1,2\n", "row 1"),
])
def test_bad_input_exit_2(tmp_path, capsys, content, needle):
    data = tmp_path / "bad.csv"
    data.write_text(content)
    assert _run(["debias", "--input", data, "--output-dir", tmp_path / "o"]) == 2
    assert needle in capsys.readouterr().err


def test_classification_bad_label_exit_2(tmp_path, capsys):
    data = tmp_path / "c.csv"
    data.write_text("f,y\n0.5,1\n0.5,0.3\n")
    assert _run(["debias", "--kind", "classification", "--input", data, "--output-dir", tmp_path / "o"]) == 2
    assert "record 2" in capsys.readouterr().err


def test_divergence_exit_3(tmp_path, capsys):
    spec = json.dumps({"kind": "iid-gaussian", "length": 5000, "seed": 1})
    code = _run(["diagnose", "--loss", "squared", "--eta", "5", "--generate", spec, "--output-dir", tmp_path])
    assert code == 3
    assert "step" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["debias", "--eta", "0.1"],
    ["debias", "--eta", "-1", "--generate", "{}"],
    ["track-quantile", "--tau", "2", "--generate", "{}"],
    ["counterexample", "--name", "spiral", "--eta", "0.1"],
    ["counterexample"],
    ["simulate", "--spec", "{}"],
    ["elo", "--c", "1", "--generate", "{}"],
    ["elo", "--c", "1", "--alpha", "1", "--generate", "{}"],
    ["multigroup", "--lam", "0.1", "--generate", "{}"],
    ["multigroup", "--regularizer", "lasso", "--generate", "{}"],
    ["nonsense"],
    ["debias", "--unknown-flag"],
])
def test_config_errors_exit_2(tmp_path, argv):
    assert _run(argv + ["--output-dir", str(tmp_path)] if argv[0] != "nonsense" else argv) == 2


def test_wrong_spec_kind_exit_2(tmp_path):
    assert _run(["elo", "--generate", json.dumps(SPECS["uniform"]), "--output-dir", tmp_path]) == 2
    assert _run(["debias", "--generate", json.dumps(SPECS["battles"]), "--output-dir", tmp_path]) == 2


def test_config_file(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"eta": 0.3, "generate": json.dumps(SPECS["uniform"])}))
    assert _run(["debias", "--config", cfg, "--output-dir", tmp_path / "o"]) == 0
    assert _summary(tmp_path / "o")["provenance"]["config"]["eta"] == 0.3
    # command-line flags win over the file
    assert _run(["debias", "--config", cfg, "--eta", "0.2", "--output-dir", tmp_path / "p"]) == 0
    assert _summary(tmp_path / "p")["provenance"]["config"]["eta"] == 0.2
    cfg.write_text(json.dumps({"eta": 0.3, "colour": "red"}))
    assert _run(["debias", "--config", cfg, "--output-dir", tmp_path / "q"]) == 2


def test_seed_env_overrides(tmp_path, monkeypatch):
    spec = json.dumps(SPECS["uniform"])
    assert _run(["debias", "--generate", spec, "--seed", "11", "--output-dir", tmp_path / "a"]) == 0
    monkeypatch.setenv("GEQ_SEED", "11")
    assert _run(["debias", "--generate", spec, "--seed", "99", "--output-dir", tmp_path / "b"]) == 0
    assert _summary(tmp_path / "b")["provenance"]["seed"] == 11
    assert _bytes(tmp_path / "a" / "metrics.csv") == _bytes(tmp_path / "b" / "metrics.csv")
    monkeypatch.setenv("GEQ_SEED", "abc")
    assert _run(["debias", "--generate", spec, "--output-dir", tmp_path / "c"]) == 2


def test_repeat_parallel_matches_sequential(tmp_path):
    spec = json.dumps(SPECS["uniform"])
    base = ["track-quantile", "--eta", "0.1", "--generate", spec, "--repeat", "3"]
    assert _run(base + ["--output-dir", tmp_path / "seq"]) == 0
    assert _run(base + ["--parallel", "--output-dir", tmp_path / "par"]) == 0
    runs = json.loads((tmp_path / "seq" / "runs.json").read_text())["runs"]
    assert len({r["seed"] for r in runs}) == 3
    for i in range(3):
        a = tmp_path / "seq" / f"run_{i:03d}" / "metrics.csv"
        b = tmp_path / "par" / f"run_{i:03d}" / "metrics.csv"
        assert _bytes(a) == _bytes(b)
    assert _bytes(tmp_path / "seq" / "run_000" / "metrics.csv") != _bytes(tmp_path / "seq" / "run_001" / "metrics.csv")


def test_repeat_needs_generate(tmp_path):
    data = tmp_path / "d.csv"
    data.write_text("f,y\n0,1\n")
    assert _run(["debias", "--input", data, "--repeat", "2", "--output-dir", tmp_path / "o"]) == 2


def test_eta_zero_baseline(tmp_path):
    assert _run(["debias", "--eta", "0", "--generate", json.dumps(SPECS["uniform"]), "--output-dir", tmp_path]) == 0
    rows = _csv(tmp_path / "metrics.csv")
    assert all(float(r[3]) == 0.0 for r in rows[1:])


def test_ensemble_summary(tmp_path):
    assert _run(["ensemble", "--generate", json.dumps(SPECS["shift"]), "--output-dir", tmp_path]) == 0
    s = _summary(tmp_path)
    assert len(s["expert_coverage_gap"]) == 3
    assert sum(s["final_weights"]) == pytest.approx(1.0, abs=1e-12)


def test_module_entry_point(tmp_path):
    spec = json.dumps(SPECS["uniform"])
    out = subprocess.run([sys.executable, "-m", "gradeq", "track-quantile", "--generate", spec, "--output-dir",
                          str(tmp_path)], capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert (tmp_path / "metrics.csv").exists()
    bad = subprocess.run([sys.executable, "-m", "gradeq", "debias"], capture_output=True, text=True)
    assert bad.returncode == 2
