import json
import math
import subprocess
import sys

import jsonschema
import numpy as np
import pytest

from cone_contraction.cli import load_schema, run

EYE2 = [[1.0, 0.0], [0.0, 1.0]]
ZERO2 = [[0.0, 0.0], [0.0, 0.0]]


def write(tmp_path, name, obj):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return str(path)


def invoke(capsys, argv):
    code = run(argv)
    captured = capsys.readouterr()
    report = json.loads(captured.out) if captured.out else None
    err = json.loads(captured.err) if captured.err else None
    if report is not None:
        jsonschema.validate(report, load_schema("report.schema.json"))
    return code, report, err


def scalar_grde(**options):
    obj = {"kind": "grde", "params": {"A": [[-1]], "B": [[1]], "C": [[0]], "D": [[0]],
                                      "L": [[0]], "Q": [[1]], "R": [[1]]}}
    if options:
        obj["options"] = options
    return obj


class TestMetric:
    def test_identical(self, tmp_path, capsys):
        a = write(tmp_path, "a.json", {"dim": 2, "rows": [[2.0, 0.5], [0.5, 1.0]]})
        code, rep, _ = invoke(capsys, ["metric", a, a])
        assert code == 0 and rep["outputs"]["dT"] == 0.0

    def test_scaled_identity(self, tmp_path, capsys):
        a = write(tmp_path, "a.json", EYE2)
        b = write(tmp_path, "b.json", {"dim": 2, "rows": [[4.0, 0.0], [0.0, 4.0]]})
        code, rep, _ = invoke(capsys, ["metric", a, b, "--gauge", "sup"])
        out = rep["outputs"]
        assert code == 0 and out["dim"] == 2
        assert out["dT"] == pytest.approx(math.log(4), abs=1e-12)
        assert out["dNu"] == pytest.approx(math.log(4), abs=1e-12)
        assert out["gauge"] == {"kind": "supNorm"}

    def test_euclidean_gauge_diagonal(self, tmp_path, capsys):
        a = write(tmp_path, "a.json", [[1.0, 0.0], [0.0, 2.0]])
        b = write(tmp_path, "b.json", [[3.0, 0.0], [0.0, 0.5]])
        _, rep, _ = invoke(capsys, ["metric", a, b, "--gauge", "2"])
        assert rep["outputs"]["dNu"] == pytest.approx(math.hypot(math.log(3), math.log(4)), abs=1e-12)

    def test_errors(self, tmp_path, capsys):
        a = write(tmp_path, "a.json", EYE2)
        bad = write(tmp_path, "bad.json", {"rows": EYE2, "extra": 1})
        notpd = write(tmp_path, "np.json", [[1.0, 0.0], [0.0, -1.0]])
        three = write(tmp_path, "three.json", np.eye(3).tolist())
        junk = tmp_path / "junk.json"
        junk.write_text("{not json")
        for other in (bad, notpd, three, str(junk), str(tmp_path / "missing.json")):
            code, rep, err = invoke(capsys, ["metric", a, other])
            assert code == 2 and rep is None and "error" in err and "message" in err


class TestIntegrate:
    def test_coth_solution(self, tmp_path, capsys):
        prob = write(tmp_path, "p.json", {"kind": "stdRiccati",
                                          "params": {"A": [[0]], "Sigma": [[1]], "Dmat": [[1]]},
                                          "options": {"P0": [[2.0]], "relTol": 1e-10, "absTol": 1e-12}})
        code, rep, _ = invoke(capsys, ["integrate", prob, "--t1", "1.5"])
        out = rep["outputs"]
        assert code == 0 and out["exitReason"] == "horizonReached" and out["exitTime"] is None
        c = math.atanh(0.5)
        expected = 1.0 / math.tanh(1.5 + c)
        assert out["finalState"]["rows"][0][0] == pytest.approx(expected, rel=1e-7)
        assert out["trajectory"]["times"][0] == 0.0
        assert out["trajectory"]["times"][-1] == 1.5

    def test_csv_output(self, tmp_path, capsys):
        prob = write(tmp_path, "p.json", {"kind": "stdRiccati",
                                          "params": {"A": ZERO2, "Sigma": ZERO2, "Dmat": ZERO2}})
        start = write(tmp_path, "p0.json", [[2.0, 0.3], [0.3, 1.0]])
        out_csv = tmp_path / "traj.csv"
        code, rep, _ = invoke(capsys, ["integrate", prob, "--from", start, "--t1", "2",
                                       "--format", "csv", "--out", str(out_csv)])
        assert code == 0 and rep["outputs"]["trajectoryFile"] == str(out_csv)
        lines = out_csv.read_text().splitlines()
        assert lines[0] == "t,p11,p12,p22"
        for line in lines[1:]:
            assert [float(v) for v in line.split(",")[1:]] == [2.0, 0.3, 1.0]

    def test_csv_needs_out(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run(["integrate", "x.json", "--t1", "1", "--format", "csv"])
        assert exc.value.code == 2

    def test_infeasible_start(self, tmp_path, capsys):
        prob = write(tmp_path, "p.json", {"kind": "grde", "params": {
            "A": [[0]], "B": [[1]], "C": [[0]], "D": [[1]], "L": [[0]], "Q": [[1]], "R": [[-1]]},
            "options": {"P0": [[0.5]]}})
        code, rep, err = invoke(capsys, ["integrate", prob, "--t1", "1"])
        assert code == 3 and rep is None and err["error"] == "InfeasibleError"

    def test_early_exit(self, tmp_path, capsys):
        # A = -1/2, D = 1, R = -1 from 2: R + D'PD = p - 1 hits zero at t = log 2
        prob = write(tmp_path, "p.json", {"kind": "grde", "params": {
            "A": [[-0.5]], "B": [[0]], "C": [[0]], "D": [[1]], "L": [[0]], "Q": [[0.0001]], "R": [[-1]]},
            "options": {"P0": [[2.0]]}})
        code, rep, _ = invoke(capsys, ["integrate", prob, "--t1", "5", "--refine-exit"])
        out = rep["outputs"]
        assert code == 4 and out["exitReason"] == "leftFeasibleDomain"
        assert 0 < out["exitTime"] < 5

    def test_missing_start(self, tmp_path, capsys):
        prob = write(tmp_path, "p.json", scalar_grde())
        code, _, err = invoke(capsys, ["integrate", prob, "--t1", "1"])
        assert code == 2 and err["error"] == "InputError"


class TestRate:
    def test_standard_global(self, tmp_path, capsys):
        prob = write(tmp_path, "p.json", {"kind": "stdRiccati",
                                          "params": {"A": ZERO2, "Sigma": EYE2, "Dmat": EYE2}})
        code, rep, _ = invoke(capsys, ["rate", prob])
        cert = rep["outputs"]["certificate"]
        assert code == 0 and cert["method"] == "stdGlobalClosedForm"
        assert cert["rate"] == pytest.approx(2.0, abs=1e-12)

    def test_grde_local(self, tmp_path, capsys):
        prob = write(tmp_path, "p.json", scalar_grde(P0=[[1.0]]))
        code, rep, _ = invoke(capsys, ["rate", prob, "--method", "closed"])
        assert code == 0 and rep["outputs"]["certificate"]["method"] == "grdeLocalClosedForm"
        assert rep["outputs"]["certificate"]["rate"] > 0

    def test_closed_unavailable(self, tmp_path, capsys):
        prob = write(tmp_path, "p.json", scalar_grde())
        code, rep, err = invoke(capsys, ["rate", prob, "--method", "closed"])
        assert code == 3 and rep is None and err["error"] == "HypothesisError"
        assert "options.P0 given" in err["failed"]

    def test_general_estimate(self, tmp_path, capsys):
        prob = write(tmp_path, "p.json", {"kind": "stdRiccati",
                                          "params": {"A": ZERO2, "Sigma": EYE2, "Dmat": [[1.0, 0.0], [0.0, -1.0]]}})
        code, rep, _ = invoke(capsys, ["rate", prob, "--samples", "50"])
        cert = rep["outputs"]["certificate"]
        assert code == 0 and cert["rigor"] == "sampledEstimate"
        assert [a["applicable"] for a in rep["outputs"]["attempted"]] == [False, True]

    def test_indefinite_bounds(self, tmp_path, capsys):
        prob = write(tmp_path, "p.json", {"kind": "stdRiccati",
                                          "params": {"A": [[-2.0]], "Sigma": [[-1.0]], "Dmat": [[1.0]]},
                                          "options": {"bounds": {"cA": 2.0, "cD": 1.0, "mD": 1.0, "cSigma": 1.0},
                                                      "lambda": 0.5}})
        code, rep, _ = invoke(capsys, ["rate", prob, "--method", "closed"])
        out = rep["outputs"]
        assert code == 0 and "indefiniteAnalysis" in out
        assert out["certificate"]["rate"] > 0


class TestGare:
    def test_scalar(self, tmp_path, capsys):
        prob = write(tmp_path, "p.json", scalar_grde(P0=[[1.0]]))
        code, rep, _ = invoke(capsys, ["gare", prob])
        out = rep["outputs"]
        assert code == 0
        assert out["Pbar"]["rows"][0][0] == pytest.approx(math.sqrt(2) - 1, abs=1e-9)
        assert out["convergenceBound"] > 0

    def test_lyapunov(self, tmp_path, capsys):
        prob = write(tmp_path, "p.json", {"kind": "grde", "params": {
            "A": [[-1.0, 0.0], [0.0, -1.0]], "B": ZERO2, "C": ZERO2, "D": ZERO2, "L": ZERO2,
            "Q": [[2.0, 0.0], [0.0, 2.0]], "R": EYE2}})
        code, rep, _ = invoke(capsys, ["gare", prob])
        assert code == 0 and np.allclose(rep["outputs"]["Pbar"]["rows"], EYE2, atol=1e-9)

    def test_wrong_kind(self, tmp_path, capsys):
        prob = write(tmp_path, "p.json", {"kind": "orthant", "params": {"c": [1.0], "A": [[0.0]], "quad": [1.0]}})
        code, _, _ = invoke(capsys, ["gare", prob])
        assert code == 2


class TestDiscrete:
    def test_zero_drift(self, tmp_path, capsys):
        prob = write(tmp_path, "p.json", {"kind": "discrete", "params": {
            "A": ZERO2, "B": EYE2, "C": ZERO2, "D": ZERO2, "Q": EYE2, "R": EYE2}})
        code, rep, _ = invoke(capsys, ["discrete", prob, "--samples", "200"])
        out = rep["outputs"]
        assert code == 0 and out["report"]["bound"] == 0.0 and out["withinBound"]

    def test_invertible_b(self, tmp_path, capsys):
        prob = write(tmp_path, "p.json", {"kind": "discrete", "params": {
            "A": [[0.5, 0.2], [0.0, 0.4]], "B": EYE2, "C": ZERO2, "D": ZERO2,
            "Q": EYE2, "R": EYE2}})
        code, rep, _ = invoke(capsys, ["discrete", prob, "--samples", "500"])
        out = rep["outputs"]
        assert code == 0 and out["report"]["strict"] and out["report"]["bound"] < 1 and out["withinBound"]
        assert 0 <= out["empiricalLipschitz"] <= out["report"]["bound"] + 1e-6


class TestAudit:
    def test_euclidean(self, capsys):
        code, rep, _ = invoke(capsys, ["audit-finsler", "--n", "2", "--gauge", "2"])
        assert code == 0 and rep["outputs"]["witnesses"]

    def test_sup(self, capsys):
        code, rep, _ = invoke(capsys, ["audit-finsler", "--n", "3", "--gauge", "sup"])
        assert code == 0 and rep["outputs"]["witnesses"] == []

    def test_grid_file(self, tmp_path, capsys):
        grid = write(tmp_path, "g.json", {"epsilons": [0.2], "lastLambdas": [-1.0]})
        code, _, _ = invoke(capsys, ["audit-finsler", "--grid", grid])
        assert code == 0
        bad = write(tmp_path, "b.json", {"foo": 1})
        assert invoke(capsys, ["audit-finsler", "--grid", bad])[0] == 2
        assert invoke(capsys, ["audit-finsler", "--n", "1"])[0] == 2


def test_orthant_rate(tmp_path, capsys):
    # phi(x) = 1 - x^2 gives g(x) = (1 + x^2)/x >= 2
    prob = write(tmp_path, "p.json", {"kind": "orthant", "params": {"c": [1.0], "A": [[0.0]], "quad": [1.0]},
                                      "options": {"box": [1.0]}})
    code, rep, _ = invoke(capsys, ["orthant-rate", prob, "--samples", "300"])
    rate = rep["outputs"]["certificate"]["rate"]
    assert code == 0 and 2.0 - 1e-12 <= rate < 2.2


def test_schema_violation(tmp_path, capsys):
    prob = write(tmp_path, "p.json", {**scalar_grde(), "extra": True})
    assert invoke(capsys, ["gare", prob])[0] == 2
    prob = write(tmp_path, "q.json", {"kind": "grde", "params": {"A": [[1]]}})
    assert invoke(capsys, ["gare", prob])[0] == 2


def test_deterministic_reports(tmp_path, capsys):
    prob = write(tmp_path, "p.json", {"kind": "stdRiccati",
                                      "params": {"A": ZERO2, "Sigma": EYE2, "Dmat": [[1.0, 0.0], [0.0, -1.0]]}})
    texts = []
    for _ in range(2):
        run(["rate", prob, "--samples", "40", "--seed", "7"])
        texts.append(capsys.readouterr().out)
    assert texts[0] == texts[1]
    run(["rate", prob, "--samples", "40", "--seed", "8"])
    other = json.loads(capsys.readouterr().out)
    assert other["inputsDigest"] != json.loads(texts[0])["inputsDigest"]
    assert json.loads(texts[0])["wallTime"] is None
    run(["rate", prob, "--samples", "40", "--timing"])
    assert json.loads(capsys.readouterr().out)["wallTime"] >= 0


def test_out_file(tmp_path, capsys):
    a = write(tmp_path, "a.json", EYE2)
    target = tmp_path / "report.json"
    assert run(["metric", a, a, "--out", str(target)]) == 0
    assert capsys.readouterr().out == ""
    assert json.loads(target.read_text())["command"] == "metric"


def test_module_entry_point(tmp_path):
    a = write(tmp_path, "a.json", EYE2)
    proc = subprocess.run([sys.executable, "-m", "cone_contraction.cli", "metric", a, a],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and json.loads(proc.stdout)["outputs"]["dT"] == 0.0
