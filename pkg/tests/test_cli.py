import json

import numpy as np
import pytest

from quantum_kalman.cli import (EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, SCHEMAS, load_config, main,
                                validate_config)
from quantum_kalman.errors import ConfigError


def write_config(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return p


def test_cavity_example_meets_tolerance(tmp_path):
    cfg = write_config(tmp_path, {"scenario": "cavity", "K": 1, "F": 0, "dt": 1e-3,
                                  "steps": 20000, "seed": 7, "paths": 100})
    out = tmp_path / "out"
    assert main(["run", str(cfg), "-o", str(out)]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["relative_error"] < 0.05
    assert summary["innovation_white"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 7 and manifest["dt"] == 1e-3
    assert set(manifest["outputs"]) == {p.name for p in out.iterdir()}
    header = (out / "trajectory_0000.csv").read_text().splitlines()[0]
    assert header == "t,x0,x1,xhat0,xhat1,dm0,dm1,dv0,dv1"


def test_default_output_directory(tmp_path):
    cfg = write_config(tmp_path, {"scenario": "cavity", "steps": 10, "paths": 2}, "small.json")
    assert main(["run", str(cfg)]) == EXIT_OK
    assert (tmp_path / "small_out" / "summary.json").exists()


@pytest.mark.parametrize("text", ['{"scenario": "cavity", "K": 1,,}', "[1, 2]", "{"])
def test_malformed_config_writes_nothing(tmp_path, capsys, text):
    cfg = write_config(tmp_path, text)
    out = tmp_path / "out"
    assert main(["run", str(cfg), "-o", str(out)]) == EXIT_CONFIG
    assert not out.exists()
    assert "config error" in capsys.readouterr().err


def test_json_error_reports_position(tmp_path):
    cfg = write_config(tmp_path, '{\n  "scenario": "cavity",\n  "K": ,\n}')
    with pytest.raises(ConfigError, match=r":3:8:"):
        load_config(str(cfg))


@pytest.mark.parametrize("raw, field", [
    ({"scenario": "cavity", "Kappa": 1}, "Kappa"),
    ({"scenario": "cavity", "dt": -1}, "dt"),
    ({"scenario": "cavity", "steps": 1.5}, "steps"),
    ({"scenario": "cavity", "K": "1"}, "K"),
    ({"scenario": "cavity", "K": 1, "F": -0.5}, "F"),
    ({"scenario": "spin-entangle", "S": 2}, "S"),
    ({"scenario": "warp-drive"}, "scenario"),
])
def test_schema_violations(raw, field):
    with pytest.raises(ConfigError, match=f"'{field}'"):
        validate_config(raw)


def test_unknown_key_exit_code(tmp_path):
    cfg = write_config(tmp_path, {"scenario": "cavity", "bogus": 1})
    assert main(["run", str(cfg), "-o", str(tmp_path / "o")]) == EXIT_CONFIG
    assert not (tmp_path / "o").exists()


def test_defaults_filled():
    cfg = validate_config({"scenario": "driven-cavity", "hx": 3})
    assert set(cfg) == {"scenario", *SCHEMAS["driven-cavity"]}
    assert cfg["hx"] == 3.0 and cfg["hy"] == 0.0


def test_reruns_are_byte_identical(tmp_path):
    cfg = write_config(tmp_path, {"scenario": "driven-cavity", "hx": 3, "hy": -2, "steps": 300,
                                  "paths": 50, "record_every": 10, "seed": 5})
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(cfg), "-o", str(a), "--traces", "3"]) == EXIT_OK
    assert main(["run", str(cfg), "-o", str(b), "--traces", "3", "-j", "4"]) == EXIT_OK
    csvs = sorted(p.name for p in a.glob("*.csv"))
    assert len(csvs) == 4
    for name in csvs:
        assert (a / name).read_bytes() == (b / name).read_bytes()


@pytest.mark.parametrize("scenario, extra", [
    ("inefficient-cavity", {"delta": 1.0}),
    ("spin-qnd-local", {"S": 10}),
])
def test_other_linear_scenarios(tmp_path, scenario, extra):
    cfg = write_config(tmp_path, {"scenario": scenario, "steps": 200, "paths": 10, **extra})
    out = tmp_path / "out"
    assert main(["run", str(cfg), "-o", str(out)]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert np.all(np.isfinite(summary["P_final"]))
    if scenario == "inefficient-cavity":
        assert summary["update_coefficient"] == 0.5


def test_spin_entangle_run(tmp_path):
    cfg = write_config(tmp_path, {"scenario": "spin-entangle", "T": 0.2, "paths": 8})
    out = tmp_path / "out"
    assert main(["run", str(cfg), "-o", str(out), "--traces", "2"]) == EXIT_OK
    assert (out / "trace_0001.csv").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["paths"] == 8 and "p_value" in summary


def test_numerical_failure_exit(tmp_path, capsys):
    cfg = write_config(tmp_path, {"scenario": "spin-entangle", "dt": 0.5, "T": 2.0, "paths": 2})
    out = tmp_path / "out"
    assert main(["run", str(cfg), "-o", str(out)]) == EXIT_NUMERIC
    assert not out.exists()
    err = capsys.readouterr().err
    assert "numerical failure" in err and "StepTooLarge" in err


def _phase(A, B, C, D):
    return {"A": [[A]], "B": [[B]], "C": [[C]], "D": [[D]]}


def test_analyze_canonical_pair(tmp_path, capsys):
    sysf = write_config(tmp_path, {"Gx": _phase(-0.25, -1, 1, 1), "Gy": _phase(-0.75, -1, 1, 1)})
    out = tmp_path / "report.json"
    assert main(["analyze", str(sysf), "-o", str(out)]) == EXIT_OK
    rep = json.loads(out.read_text())
    assert rep["duality"]["holds"]
    assert rep["uncertainty"]["holds"]
    assert rep["detectability"]["detectable"]
    assert np.allclose(rep["uncertainty"]["X"], [[1.5, 0], [0, 2 / 3]])


def test_analyze_classical_pair(tmp_path):
    sysf = write_config(tmp_path, {"Gx": _phase(-1, 1, 1, 0), "Gy": _phase(-1, 1, 1, 0)})
    out = tmp_path / "report.json"
    assert main(["analyze", str(sysf), "-o", str(out)]) == EXIT_OK
    rep = json.loads(out.read_text())
    assert not rep["duality"]["holds"]
    assert "error" in rep["detectability"]


def test_analyze_single_system(tmp_path):
    sysf = write_config(tmp_path, _phase(-0.5, -1, 1, 1))
    out = tmp_path / "report.json"
    assert main(["analyze", str(sysf), "-o", str(out)]) == EXIT_OK
    rep = json.loads(out.read_text())
    assert rep["kind"] == "system" and rep["stable"]
    assert np.allclose(rep["zeros"], [0.5])


def test_analyze_bad_file(tmp_path):
    sysf = write_config(tmp_path, '{"A": [[1]], "B": ')
    assert main(["analyze", str(sysf)]) == EXIT_CONFIG
    sysf = write_config(tmp_path, {"A": [[1]], "B": [[1, 2]], "C": [[1]], "D": [[0]]})
    assert main(["analyze", str(sysf)]) == EXIT_CONFIG


def test_verify_passes(capsys):
    assert main(["verify"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 7 and all("PASS" in ln for ln in lines)
