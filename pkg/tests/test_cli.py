import json

import numpy as np
import pytest

from potlatch.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, out


def test_spectrum_torus(capsys):
    code, out = run_cli(capsys, "spectrum", "--graph", "torus:d=1,n=3")
    assert code == 0
    doc = json.loads(out)
    assert set(doc) == {"eigenvalues", "gap_abs", "gap_two_step", "gamma11", "gamma2d"}
    assert abs(doc["gap_abs"] - 0.5) < 1e-12
    assert abs(doc["gamma2d"] - 0.75) < 1e-12
    assert sorted(doc["eigenvalues"], reverse=True) == doc["eigenvalues"]


def test_spectrum_complete(capsys):
    code, out = run_cli(capsys, "spectrum", "--graph", "complete:4")
    doc = json.loads(out)
    assert code == 0
    assert doc["gamma11"] is None and doc["gamma2d"] is None
    assert abs(doc["gap_two_step"] - 1.0) < 1e-12


def test_spectrum_custom_kernel(tmp_path, capsys):
    path = tmp_path / "k.json"
    path.write_text(json.dumps({"n": 2, "P": [[0.9, 0.1], [0.2, 0.8]]}))
    code, out = run_cli(capsys, "spectrum", "--graph", f"custom:{path}")
    assert code == 0
    doc = json.loads(out)
    assert abs(doc["eigenvalues"][1] - 0.7) < 1e-10  # trace 1.7, top eigenvalue 1


def test_simulate_csv_contract(tmp_path, capsys):
    cfg = {
        "graph": {"kind": "torus", "d": 1, "n": 5},
        "process": "potlatch",
        "init": {"kind": "constant", "value": 1.0},
        "horizon": 2.0,
        "sample_times": [0.0, 1.0, 2.0],
        "replicas": 3,
        "seed": 5,
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    code, out = run_cli(capsys, "simulate", "--config", str(path))
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == ("replica_id,t,V,E,E2,Estar,sum_delta_sq,Ybar,"
                        "min_mass,max_mass")
    assert len(lines) == 1 + 3 * 3
    first = lines[1].split(",")
    assert first[0] == "0" and float(first[1]) == 0.0
    # --seed override changes the output deterministically
    code2, out2 = run_cli(capsys, "simulate", "--config", str(path), "--seed", "6")
    code3, out3 = run_cli(capsys, "simulate", "--config", str(path), "--seed", "6")
    assert out2 == out3 and out2 != out


def test_renewal_csv(capsys):
    code, out = run_cli(capsys, "renewal", "--d", "1", "--n", "5",
                        "--horizon", "2.0", "--step", "0.01")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "t,value"
    t0, v0 = lines[1].split(",")
    assert float(t0) == 0.0 and abs(float(v0) - 1.5) < 1e-12
    assert len(lines) == 2 + 200


def test_envelope_csv(capsys):
    code, out = run_cli(capsys, "envelope", "--which", "variance", "--d", "1",
                        "--n", "9", "--t0", "1", "--horizon", "5", "--step", "1")
    assert code == 0
    rows = [line.split(",") for line in out.splitlines()[1:]]
    vals = np.array([float(v) for _, v in rows])
    assert np.all(np.diff(vals) < 0)


def test_envelope_global_needs_graph(capsys):
    code, out = run_cli(capsys, "envelope", "--which", "global",
                        "--graph", "complete:3", "--v0", "0.25",
                        "--horizon", "2", "--step", "1")
    assert code == 0
    rows = out.splitlines()[1:]
    assert abs(float(rows[0].split(",")[1]) - 0.25) < 1e-15


def test_duality_cli(tmp_path, capsys):
    cfg = {
        "graph": {"kind": "complete", "n": 2},
        "process": "dual",
        "init": {"kind": "custom", "values": [1.0, 0.0]},
        "horizon": 1.0,
        "sample_times": [0.5, 1.0],
        "replicas": 5000,
        "seed": 3,
    }
    path = tmp_path / "dual.json"
    path.write_text(json.dumps(cfg))
    code, out = run_cli(capsys, "duality", "--config", str(path))
    doc = json.loads(out)
    assert doc["check"] == "duality"
    assert doc["pass"] is True
    assert code == 0


def test_verify_identities_suite(tmp_path, capsys):
    report_path = tmp_path / "report.json"
    code, out = run_cli(capsys, "verify", "--suite", "identities",
                        "--out", str(report_path))
    assert code == 0
    doc = json.loads(out.splitlines()[0])
    assert doc["check"] == "identities" and doc["pass"] is True
    saved = json.loads(report_path.read_text())
    assert saved["checks"][0]["name"] == "identities"


def test_cli_error_exit_code(capsys):
    code = main(["spectrum", "--graph", "torus:d=1,n=4"])
    assert code == 2
