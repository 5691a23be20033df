import csv
import io
import json
import subprocess
import sys

import pytest

from micromorph import cli


def _rows(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


def _config(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def test_solve_single_row_and_vtk(tmp_path):
    out = tmp_path / "solve.csv"
    assert cli.run(["solve", "--levels", "2", "--csv", str(out), "--vtk", str(tmp_path / "vtk")]) == 0
    rows = _rows(out)
    assert len(rows) == 1 and rows[0]["status"] == "ok" and rows[0]["n"] == "2"
    text = (tmp_path / "vtk" / "solve_n2.vtk").read_text()
    for name in ("u", "P", "sigma", "m"):
        assert f"{name} " in text


def test_converge_two_levels(tmp_path):
    out = tmp_path / "c.csv"
    assert cli.run(["converge", "--levels", "2,4", "--csv", str(out)]) == 0
    rows = _rows(out)
    assert [r["n"] for r in rows] == ["2", "4"]
    assert float(rows[1]["e_L2_P"]) < float(rows[0]["e_L2_P"])


def test_converge_lagrange_arm(tmp_path):
    out = tmp_path / "c.csv"
    assert cli.run(["converge", "--levels", "2,4", "--p-arm", "lagrange", "--check", "--csv", str(out)]) == 0
    assert int(_rows(out)[0]["dofs_P"]) == 9 * 27


def test_korn_non_decreasing(tmp_path):
    out = tmp_path / "k.csv"
    assert cli.run(["korn", "--levels", "1,2", "--check", "--csv", str(out)]) == 0
    c = [float(r["korn_constant"]) for r in _rows(out)]
    assert 0 < c[0] <= c[1]


def test_decompose_check(tmp_path):
    out = tmp_path / "d.csv"
    assert cli.run(["decompose", "--levels", "3", "--check", "--csv", str(out)]) == 0
    row = _rows(out)[0]
    assert float(row["trace_max_Q"]) == 0.0


def test_check_materials_stdout(capsys):
    assert cli.run(["check-materials"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert rows[0]["ok"] == "true"
    assert float(rows[0]["A_min_eigenvalue"]) == pytest.approx((3 - 5 ** 0.5) / 2, abs=1e-12)


def test_gauge_model_via_config(tmp_path):
    cfg = _config(tmp_path, {"model": "gauge", "material": {"mu_c": 1.0}})
    out = tmp_path / "g.csv"
    assert cli.run(["solve", "--config", cfg, "--levels", "2", "--csv", str(out)]) == 0
    assert "e_L2_e" in out.read_text()


def test_zero_manufactured_data(tmp_path):
    cfg = _config(tmp_path, {"manufactured": "zero"})
    out = tmp_path / "z.csv"
    assert cli.run(["solve", "--config", cfg, "--levels", "2", "--csv", str(out)]) == 0
    row = _rows(out)[0]
    assert float(row["e_L2_u"]) == 0.0 and float(row["e_L2_P"]) == 0.0


@pytest.mark.parametrize("data, path", [
    ({"materal": {}}, "materal"),
    ({"material": {"mu_e": -1.0}}, "material.lambda_e/mu_e"),
    ({"material": {"lc": {"value": "big"}}}, "material.lc.value"),
    ({"material": {"lc": {"kind": "block_diagonal"}}}, "material.lc.blocks"),
    ({"material": {"mu_c": -0.5}}, "material.mu_c"),
    ({"levels": [0, 2]}, "levels"),
    ({"solver": {"rel_tol": 0}}, "solver.rel_tol"),
    ({"p_arm": "raviart"}, "p_arm"),
])
def test_config_errors(tmp_path, capsys, data, path):
    assert cli.run(["solve", "--config", _config(tmp_path, data)]) == 2
    assert f"config error: {path}" in capsys.readouterr().err


def test_malformed_json(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"levels": [2,\n}')
    assert cli.run(["solve", "--config", str(p)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_bad_arguments(capsys):
    assert cli.run(["solve", "--levels", "a,b"]) == 2
    assert cli.run(["frobnicate"]) == 2
    assert cli.run(["solve", "--config", "/nonexistent/cfg.json"]) == 2


def test_solver_failure_exit_code(tmp_path, capsys):
    cfg = _config(tmp_path, {"solver": {"max_iter": 1}})
    assert cli.run(["solve", "--config", cfg, "--levels", "2"]) == 3
    assert "solver failure" in capsys.readouterr().err
    assert cli.run(["converge", "--config", cfg, "--levels", "2,3"]) == 3


def test_check_violation_exit_code(tmp_path, capsys):
    out = str(tmp_path / "x.csv")
    # one level cannot produce a rate
    assert cli.run(["converge", "--levels", "2", "--check", "--csv", out]) == 4
    assert "acceptance violation" in capsys.readouterr().err
    # without --check the same run succeeds
    assert cli.run(["converge", "--levels", "2", "--csv", out]) == 0


def test_deterministic_csv(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert cli.run(["converge", "--levels", "2,3", "--csv", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "micromorph", "check-materials"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.startswith("C_e,")
