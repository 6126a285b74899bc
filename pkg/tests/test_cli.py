import csv
import json

import numpy as np
import pytest

from aloocv import ConvergenceError, load_csv
from aloocv.cli import main


def _run(argv):
    return main([str(a) for a in argv])


def _load(path):
    return json.loads(path.read_text())


def _strip_timing(report):
    report = dict(report)
    report.pop("timing", None)
    for row in report.get("result", {}).get("rows", []) or []:
        row.pop("acv_seconds", None)
    return report


def test_synth_writes_csv_and_summary(tmp_path):
    out, rep = tmp_path / "d.csv", tmp_path / "r.json"
    assert _run(["synth", "--n", 30, "--p", 6, "--seed", 2, "--out", out, "--report", rep]) == 0
    ds = load_csv(out, "y")
    assert (ds.n, ds.p) == (30, 6)
    report = _load(rep)
    assert report["status"] == "ok" and report["command"] == "synth"
    assert len(report["result"]["theta_star"]) == 6


def test_synth_is_byte_identical_per_seed(tmp_path):
    for k in range(2):
        assert _run(["synth", "--family", "logistic", "--n", 25, "--p", 3, "--out", tmp_path / f"{k}.csv", "--report", tmp_path / f"{k}.json"]) == 0
    assert (tmp_path / "0.csv").read_bytes() == (tmp_path / "1.csv").read_bytes()


def test_fit_report_is_deterministic_modulo_timing(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    argv = ["fit", "--family", "logistic", "--n", 60, "--p", 4, "--lambdas", "0.5", "--holdout", 0.25]
    assert _run(argv + ["--out", a]) == 0
    assert _run(argv + ["--out", b]) == 0
    ra, rb = _load(a), _load(b)
    assert _strip_timing(ra) == _strip_timing(rb)
    assert ra["result"]["converged"] and ra["result"]["n"] == 45
    assert ra["result"]["out_of_sample_loss"] is not None
    assert len(ra["config_hash"]) == 64


def test_compare_ridge_cv_equals_acv(tmp_path):
    out, samples = tmp_path / "c.json", tmp_path / "s.csv"
    argv = ["compare", "--n", 40, "--p", 8, "--grid", "1.0,0.25", "--samples-out", samples, "--out", out]
    assert _run(argv) == 0
    rows = _load(out)["result"]["rows"]
    assert len(rows) == 2
    for row in rows:
        assert row["acv"]["mean"] == pytest.approx(row["cv"]["mean"], rel=1e-9)
        assert row["fraction_within_5pct"] == 1.0
        assert row["ordering_holds"] in (True, False)
    with open(samples, newline="") as fh:
        table = list(csv.DictReader(fh))
    assert len(table) == 80
    assert table[0].keys() >= {"lambda_index", "index", "cv", "acv", "if", "normalized_difference"}
    assert all(abs(float(r["normalized_difference"])) < 1e-9 for r in table)


def test_compare_without_exact_refits(tmp_path):
    out = tmp_path / "c.json"
    assert _run(["compare", "--family", "logistic", "--n", 30, "--p", 3, "--grid", "1.0", "--no-exact", "--out", out]) == 0
    row = _load(out)["result"]["rows"][0]
    assert row["cv"] is None and row["acv"]["mean"] > 0


def test_threads_env_gives_same_answer(tmp_path, monkeypatch):
    argv = ["compare", "--family", "logistic", "--n", 30, "--p", 3, "--grid", "0.5"]
    assert _run(argv + ["--out", tmp_path / "a.json"]) == 0
    monkeypatch.setenv("ALOOCV_THREADS", "2")
    assert _run(argv + ["--out", tmp_path / "b.json"]) == 0
    assert _strip_timing(_load(tmp_path / "a.json")) == _strip_timing(_load(tmp_path / "b.json"))
    monkeypatch.setenv("ALOOCV_THREADS", "zero")
    assert _run(argv + ["--out", tmp_path / "c.json"]) == 1


def test_tune_zero_iterations_writes_initial_row(tmp_path):
    trace = tmp_path / "t.csv"
    argv = ["tune", "--family", "ridge_diagonal", "--n", 40, "--p", 6, "--set", "dataset.n_relevant=2", "--lambdas", "1,1,1,1,1,1"]
    assert _run(argv + ["--iterations", 0, "--trace-out", trace, "--out", tmp_path / "r.json"]) == 0
    head, *rows = trace.read_text().strip().split("\n")
    assert head == "iteration,acv_mean,gradient_norm,refit_iterations,wall_time,irrelevant,relevant"
    assert len(rows) == 1 and rows[0].startswith("0,")
    report = _load(tmp_path / "r.json")["result"]
    assert report["records"] == 1 and report["lambda_final"] == [1.0] * 6


def test_tune_runs_and_descends(tmp_path):
    out = tmp_path / "r.json"
    argv = ["tune", "--family", "ridge_diagonal", "--n", 40, "--p", 6, "--set", "dataset.n_relevant=2", "--lambdas", "1,1,1,1,1,1", "--iterations", 20, "--out", out]
    assert _run(argv) == 0
    res = _load(out)["result"]
    assert res["acv_final"] <= res["acv_initial"]
    assert set(res["group_means"]) == {"irrelevant", "relevant"}


def test_tune_abort_keeps_partial_trace(tmp_path, monkeypatch):
    import aloocv.tuning as tuning

    real, calls = tuning.fit, {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] > 2:
            raise ConvergenceError("injected")
        return real(*args, **kwargs)

    monkeypatch.setattr(tuning, "fit", flaky)
    trace, out = tmp_path / "t.csv", tmp_path / "r.json"
    argv = ["tune", "--n", 30, "--p", 4, "--lambdas", "1.0", "--set", "tuner.step_rule=\"fixed\"", "--iterations", 10, "--trace-out", trace, "--out", out]
    assert _run(argv) == 2
    assert len(trace.read_text().strip().split("\n")) == 1 + 2
    err = _load(out)
    assert err["status"] == "error" and err["error"] == "TuningError"


def test_bench_csv_header(tmp_path):
    out, rep = tmp_path / "b.csv", tmp_path / "b.json"
    assert _run(["bench", "--p", 5, "--n-grid", "40,80", "--repeats", 1, "--out", out, "--report", rep]) == 0
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["n", "cv_seconds", "acv_seconds", "ratio"]
    assert [int(r[0]) for r in rows[1:]] == [40, 80]
    assert all(float(v) > 0 for r in rows[1:] for v in r[1:])
    assert "slope_cv" in _load(rep)["result"]


def test_csv_source_and_binarize(tmp_path):
    data = tmp_path / "d.csv"
    rng = np.random.default_rng(0)
    X = rng.normal(size=(40, 2))
    labels = np.where(X[:, 0] + 0.5 * rng.normal(size=40) > 0, 7, 4)
    data.write_text("a,b,y\n" + "".join(f"{float(x[0])!r},{float(x[1])!r},{l}\n" for x, l in zip(X, labels)))
    out = tmp_path / "r.json"
    argv = ["fit", "--family", "logistic", "--lambdas", "1.0", "--data", data, "--set", 'dataset.binarize=["4", "7"]', "--out", out]
    assert _run(argv) == 0
    assert _load(out)["result"]["n"] == 40


# -- configuration --------------------------------------------------------------------


def test_config_file_merge(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"dataset": {"n": 33, "p": 3}, "model": {"family": "logistic", "lambdas": 0.4}}))
    out = tmp_path / "r.json"
    assert _run(["fit", "--config", conf, "--seed", 5, "--out", out]) == 0
    report = _load(out)
    assert report["config"]["dataset"]["n"] == 33 and report["config"]["dataset"]["seed"] == 5
    assert report["result"]["family"] == "logistic"


@pytest.mark.parametrize(
    "extra",
    [
        ["--set", "dataset.colour=1"],
        ["--set", "nonsense"],
        ["--lambdas", "-1"],
        ["--family", "lasso"],
        ["--set", "solver.max_iterations=0"],
        ["--data", "/nonexistent/file.csv"],
    ],
)
def test_invalid_input_exits_one(tmp_path, extra, capsys):
    out = tmp_path / "r.json"
    assert _run(["fit", "--n", 20, "--p", 2, *extra, "--out", out]) == 1
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["status"] == "error" and record["exit_code"] == 1
    assert _load(out) == record


def test_unknown_section_in_config_file(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"plot": {"width": 3}}))
    assert _run(["fit", "--config", conf]) == 1


def test_malformed_csv_exits_one(tmp_path):
    data = tmp_path / "d.csv"
    data.write_text("a,y\n1,2\n3\n")
    assert _run(["fit", "--data", data, "--out", tmp_path / "r.json"]) == 1
    assert "row" in _load(tmp_path / "r.json")["message"]


def test_solver_failure_exits_two(tmp_path):
    out = tmp_path / "r.json"
    argv = ["fit", "--family", "logistic", "--lambdas", "0", "--n", 30, "--p", 60, "--set", "solver.max_iterations=3", "--out", out]
    assert _run(argv) == 2
    assert _load(out)["error"] == "ConvergenceError"
