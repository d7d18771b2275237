import csv

import pytest
import yaml

from isac_ee.cli import EXIT_INFEASIBLE, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, main

SMALL = {"preset": "desk", "system": {"k_users": 2, "q_subcarriers": 2, "se_threshold": 2.0},
         "validation": {"n_instances": 4, "mc_samples": 4000}}


def write_cfg(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return str(p)


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))


def test_validate_ok(tmp_path):
    out = tmp_path / "v.csv"
    assert main(["validate", "--config", write_cfg(tmp_path, SMALL), "--out", str(out)]) == EXIT_OK
    assert len(rows(out)) >= 4


def test_validate_fails_on_strict_tolerance(tmp_path, capsys):
    tol = tmp_path / "tol.yaml"
    tol.write_text("monte_carlo: 1.0e-20\n")
    code = main(["validate", "--config", write_cfg(tmp_path, SMALL), "--tolerances", str(tol),
                 "--out", str(tmp_path / "v.csv")])
    assert code == EXIT_VALIDATION
    assert "monte_carlo" in capsys.readouterr().err


def test_bad_config_is_usage_error(tmp_path, capsys):
    bad = {"preset": "desk", "system": {"n_th": 1, "n_tv": 2, "k_users": 2}}
    assert main(["solve", "--config", write_cfg(tmp_path, bad), "--out", str(tmp_path)]) == EXIT_USAGE
    assert "configuration error" in capsys.readouterr().err
    assert main(["solve", "--config", str(tmp_path / "nope.yaml")]) == EXIT_USAGE


def test_unknown_tolerance_key(tmp_path):
    tol = tmp_path / "tol.yaml"
    tol.write_text("speed: 3\n")
    assert main(["validate", "--config", write_cfg(tmp_path, SMALL), "--tolerances", str(tol),
                 "--out", str(tmp_path / "v.csv")]) == EXIT_USAGE


def test_solve_infeasible_threshold(tmp_path, capsys):
    cfg = dict(SMALL, system=dict(SMALL["system"], se_threshold=1e3))
    code = main(["solve", "--config", write_cfg(tmp_path, cfg), "--scheme", "equalcs",
                 "--out", str(tmp_path)])
    assert code == EXIT_INFEASIBLE
    assert "se_threshold" in capsys.readouterr().err


def test_solve_equalcs_has_single_trace_row(tmp_path):
    assert main(["solve", "--config", write_cfg(tmp_path, SMALL), "--scheme", "equalcs",
                 "--out", str(tmp_path)]) == EXIT_OK
    assert len(rows(tmp_path / "trace_equalcs_seed0.csv")) == 1
    rep = rows(tmp_path / "report_equalcs_seed0.csv")
    assert len(rep) == 1 and rep[0]["scheme"] == "equalcs"


def test_solve_proposed_trace(tmp_path):
    assert main(["solve", "--config", write_cfg(tmp_path, SMALL), "--out", str(tmp_path)]) == EXIT_OK
    rep = rows(tmp_path / "report_proposed_seed0.csv")[0]
    assert rep["status"] == "converged"
    trace = rows(tmp_path / "trace_proposed_seed0.csv")
    # row 0 is the starting point
    assert len(trace) == int(rep["iterations"]) + 1
    obj = [float(r["objective"]) for r in trace]
    assert all(b >= a - 1e-6 * max(1.0, abs(a)) for a, b in zip(obj, obj[1:]))


def test_sweep_command(tmp_path):
    out = tmp_path / "s.csv"
    code = main(["sweep", "--config", write_cfg(tmp_path, SMALL), "--param", "p_max_dbm",
                 "--values", "20,25", "--schemes", "equalcs", "--drops", "2", "--out", str(out)])
    assert code == EXIT_OK
    got = rows(out)
    assert {r["scheme"] for r in got} == {"equalcs"}
    assert len([r for r in got if r["drop"] != "mean"]) == 4


def test_sweep_missing_param(tmp_path):
    assert main(["sweep", "--config", write_cfg(tmp_path, SMALL), "--drops", "1"]) == EXIT_USAGE


def test_parser_rejects_unknown_scheme():
    with pytest.raises(SystemExit):
        main(["solve", "--scheme", "greedy"])
