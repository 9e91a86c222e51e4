import csv
import hashlib
import json
import time

import numpy as np
import pytest

from ddsro.cli import EXIT_INFEASIBLE, EXIT_NONCONVERGED, EXIT_OK, EXIT_USAGE, main, read_benchmark_csv
from ddsro.dataio import load_dataset
from ddsro.models.problem import CompactProblem


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen", "--seed", "0", "--out", str(d / "data.csv")]) == EXIT_OK
    assert main(["fit", "--data", str(d / "data.csv"), "--out", str(d / "model.json"),
                 "--vertices-csv", str(d / "vertices.csv")]) == EXIT_OK
    return d


def test_gen_is_deterministic(workdir, tmp_path):  # [TRIVIAL] byte-identical rerun
    assert main(["gen", "--seed", "0", "--out", str(tmp_path / "again.csv")]) == EXIT_OK
    assert sha(tmp_path / "again.csv") == sha(workdir / "data.csv")
    assert len((workdir / "data.csv").read_text().splitlines()) == 1001


def test_gen_seeds_differ(workdir, tmp_path):  # [DERIVED] hash comparison
    assert main(["gen", "--seed", "1", "--out", str(tmp_path / "s1.csv")]) == EXIT_OK
    assert sha(tmp_path / "s1.csv") != sha(workdir / "data.csv")


def test_gen_planning(tmp_path):  # [TRIVIAL]
    assert main(["gen", "--kind", "planning", "--demand-out", str(tmp_path / "d.csv"),
                 "--supply-out", str(tmp_path / "s.csv")]) == EXIT_OK
    assert load_dataset(tmp_path / "d.csv").dim == 2 and load_dataset(tmp_path / "s.csv").dim == 3
    assert main(["gen", "--kind", "planning", "--demand-out", str(tmp_path / "d.csv")]) == EXIT_USAGE


def test_fit_recovers_component_counts(workdir):  # [PAPER] (2,2,2,1) components on the four classes
    doc = json.loads((workdir / "model.json").read_text())
    counts = [len(doc["unions"][k]["basics"]) for k in sorted(doc["unions"], key=int)]
    assert counts == [2, 2, 2, 1]
    assert [doc["probabilities"][k] for k in sorted(doc["probabilities"], key=int)] == [0.2, 0.4, 0.3, 0.1]
    post = doc["posteriors"]["u"]["0"]["components"][0]
    assert {"tau", "nu", "mu", "lambda", "omega", "psi"} <= set(post)
    with open(workdir / "vertices.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and set(rows[0]) == {"class", "component", "vertex", "u1", "u2"}


def test_fit_single_class(workdir, tmp_path):  # [TRIVIAL]
    out = tmp_path / "m.json"
    assert main(["fit", "--data", str(workdir / "data.csv"), "--merged", "--truncation", "4",
                 "--out", str(out)]) == EXIT_OK
    assert list(json.loads(out.read_text())["probabilities"].values()) == [1.0]


def test_fit_threshold_error(workdir, tmp_path, capsys):  # [DERIVED] no weight reaches 0.9
    assert main(["fit", "--data", str(workdir / "data.csv"), "--gamma-star", "0.9",
                 "--out", str(tmp_path / "m.json")]) == EXIT_USAGE
    assert "threshold removed all components" in capsys.readouterr().err


def test_usage_errors(tmp_path, capsys):  # [TRIVIAL]
    assert main(["bogus"]) == EXIT_USAGE
    assert main(["fit", "--data", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "m.json")]) == EXIT_USAGE
    assert main(["fit", "--gamma-star", "1.5", "--out", "x"]) == EXIT_USAGE
    assert main(["fit", "--out", str(tmp_path / "m.json")]) == EXIT_USAGE
    bad = tmp_path / "bad.csv"
    bad.write_text("u1,u2,label\n1.0,abc,a\n")
    assert main(["fit", "--data", str(bad), "--out", str(tmp_path / "m.json")]) == EXIT_USAGE
    assert "row" in capsys.readouterr().err


def test_solve_converges(workdir, tmp_path, capsys):  # [TRIVIAL] + [DERIVED] trajectory check
    out, its = tmp_path / "rep.json", tmp_path / "it.csv"
    assert main(["solve", "--model", str(workdir / "model.json"), "--zeta", "1e-3",
                 "--out", str(out), "--iterations-csv", str(its)]) == EXIT_OK
    text = capsys.readouterr().out
    rep = json.loads(out.read_text())
    assert rep["converged"] and rep["gap"] <= 1e-3
    assert f"final gap = {rep['gap']:.3e}" in text
    with open(its) as fh:
        gaps = [float(r["gap"]) for r in csv.DictReader(fh)]
    assert len(gaps) == rep["iterations"]
    assert all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:]))


def test_solve_non_convergence_exit_code(workdir, tmp_path, capsys):  # [TRIVIAL]
    out = tmp_path / "rep.json"
    code = main(["solve", "--model", str(workdir / "model.json"), "--max-iters", "1", "--out", str(out)])
    assert code == EXIT_NONCONVERGED
    assert json.loads(out.read_text())["flags"]["non_converged"] is True
    assert "not converged" in capsys.readouterr().err


def test_solve_incomplete_recourse_exit_code(workdir, tmp_path):  # [TRIVIAL]
    # 0 <= y <= x - u: any demand above the first-stage amount is unrecoverable
    prob = CompactProblem([3.0, 5.0, 6.0], [6.0, 10.0, 12.0], -np.ones((1, 3)), [-200.0], -np.eye(3),
                          np.zeros(3), np.eye(3), -np.eye(3))
    path = tmp_path / "prob.json"
    path.write_text(prob.to_json())
    code = main(["solve", "--model", str(workdir / "model.json"), "--problem", str(path)])
    assert code == EXIT_INFEASIBLE


def test_benchmark_csv_round_trip(workdir, tmp_path, capsys):  # [DERIVED] wall budget + [TRIVIAL] round trip
    out = tmp_path / "bench.csv"
    t0 = time.perf_counter()
    code = main(["benchmark", "--data", str(workdir / "data.csv"), "--out-csv", str(out)])
    wall = time.perf_counter() - t0
    assert code == EXIT_OK
    assert wall < 120.0
    rows = read_benchmark_csv(out)
    assert [r["method"] for r in rows] == ["deterministic", "scenario_sp", "ddsro", "ddanro", "box_aro"]
    text = capsys.readouterr().out
    for r in rows:
        assert f"{r['objective']:.4f}" in text
        assert len(r["x"]) == 3
    obj = [r["objective"] for r in rows]
    assert all(b >= a - 1e-6 for a, b in zip(obj, obj[1:]))
    # rerun: identical objectives and decisions
    main(["benchmark", "--data", str(workdir / "data.csv"), "--out-csv", str(tmp_path / "b2.csv")])
    again = read_benchmark_csv(tmp_path / "b2.csv")
    assert [(r["objective"], r["x"]) for r in again] == [(r["objective"], r["x"]) for r in rows]


def test_benchmark_rejects_unknown_method(workdir):  # [TRIVIAL]
    assert main(["benchmark", "--data", str(workdir / "data.csv"), "--methods", "ddsro,simplex"]) == EXIT_USAGE
