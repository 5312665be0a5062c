import json

import pytest

from fanolab import cli


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def test_strip_comments_keeps_strings():
    text = '{"a": "x // y", /* c */ "b": 1} // tail'
    assert json.loads(cli.strip_comments(text)) == {"a": "x // y", "b": 1}


def test_overrides_parse_json_values():
    cfg = cli.apply_overrides({"run": {"kind": "ke"}}, ["run.tol=1e-9", "model.kind=radial", "run.suites=[\"a\"]"])
    assert cfg["run"]["tol"] == 1e-9
    assert cfg["model"]["kind"] == "radial"
    assert cfg["run"]["suites"] == ["a"]
    with pytest.raises(cli.ConfigError):
        cli.apply_overrides({}, ["novalue"])


def test_schema_rejects_unknown_keys(tmp_path):
    p = _write(tmp_path, {"model": {"kind": "radial", "bogus": 1}, "run": {"kind": "ke"}})
    assert cli.main(["validate-config", str(p)]) == cli.EXIT_CONFIG
    p = _write(tmp_path, {"model": {}, "run": {"kind": "dance"}})
    assert cli.main(["validate-config", str(p)]) == cli.EXIT_CONFIG


def test_validate_config_fills_defaults(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text('// comment\n{"model": {"N": 64}, "run": {"kind": "alpha"}}')
    assert cli.main(["validate-config", str(p)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["model"]["N"] == 64 and out["model"]["T"] == 12.0


def test_ke_run(tmp_path):
    p = _write(tmp_path, {"model": {"N": 64}, "run": {"kind": "ke"}})
    code = cli.main(["run", str(p), "--out", str(tmp_path / "r")])
    assert code == 0
    rep = json.loads((tmp_path / "r" / "report.json").read_text())
    assert rep["residual"] <= 1e-9
    for f in ("config.json", "model.json", "meta.json", "final.csv"):
        assert (tmp_path / "r" / f).exists()


def test_env_var_sets_output(tmp_path, monkeypatch):
    monkeypatch.setenv("FANOLAB_OUT", str(tmp_path / "env"))
    p = _write(tmp_path, {"model": {"N": 64}, "run": {"kind": "alpha"}})
    assert cli.main(["run", str(p)]) == 0
    assert (tmp_path / "env" / "report.json").exists()


def test_numerical_failure_exit_code(tmp_path):
    p = _write(tmp_path, {"model": {"T": 6, "N": 32},
                          "run": {"kind": "flow", "dt": 0.5, "t_end": 1, "substeps": 1}})
    assert cli.main(["run", str(p), "--out", str(tmp_path / "f")]) == cli.EXIT_NUMERIC
    rep = json.loads((tmp_path / "f" / "report.json").read_text())
    assert rep["status"] == "failed" and "CFL" in rep["message"]
    assert (tmp_path / "f" / "trace.csv").exists()


def test_unequal_ke_exit_code(tmp_path):
    p = _write(tmp_path, {"model": {"beta0": 0.4, "beta_inf": 0.8, "N": 128}, "run": {"kind": "ke"}})
    assert cli.main(["run", str(p), "--out", str(tmp_path / "u")]) == cli.EXIT_NUMERIC


def test_resource_guard_exit_code(tmp_path):
    p = _write(tmp_path, {"model": {"kind": "product", "N": 1000}, "run": {"kind": "ke"}})
    assert cli.main(["run", str(p), "--out", str(tmp_path / "g")]) == cli.EXIT_RESOURCE


def test_model_error_exit_code(tmp_path):
    p = _write(tmp_path, {"model": {"N": 33}, "run": {"kind": "ke"}})
    assert cli.main(["run", str(p), "--out", str(tmp_path / "m")]) == cli.EXIT_CONFIG


def test_verify_runs_are_byte_identical(tmp_path):
    cfg = {"model": {"N": 64}, "run": {"kind": "verify", "suites": ["ij_sandwich"]},
           "sampling": {"seed": 42, "count": 20}}
    p = _write(tmp_path, cfg)
    for d in ("a", "b"):
        assert cli.main(["run", str(p), "--out", str(tmp_path / d)]) == 0
    for f in ("config.json", "model.json", "report.json", "suites.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_report_compares_runs(tmp_path):
    p = _write(tmp_path, {"model": {"N": 64}, "run": {"kind": "iterate", "max_iter": 5}})
    for d in ("a", "b"):
        cli.main(["run", str(p), "--out", str(tmp_path / d)])
    doc = cli.emit_report([tmp_path / "a", tmp_path / "b"], tmp_path / "cmp")
    assert all(r["sup_discrepancy"] == 0.0 for r in doc["rows"])
    assert (tmp_path / "cmp" / "comparison.csv").exists()


def test_report_rejects_mismatched_models(tmp_path):
    for d, b in (("a", 1.0), ("b", 0.5)):
        p = _write(tmp_path, {"model": {"N": 64, "beta0": b, "beta_inf": b}, "run": {"kind": "ke"}}, f"{d}.json")
        cli.main(["run", str(p), "--out", str(tmp_path / d)])
    assert cli.main(["report", str(tmp_path / "a"), str(tmp_path / "b"), "--out", str(tmp_path / "c")]) == cli.EXIT_CONFIG
