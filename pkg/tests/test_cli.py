import json

import pytest

from blowuplab import cli

QUADRATIC = "name: quadratic\ndim: 1\ndrift: ['x^2']\ndiffusion: ['1']\nmc: {x0: 2.0, T: 5.0, n_paths: 100}\n"


@pytest.fixture
def quadratic_cfg(tmp_path):
    path = tmp_path / "quadratic.yaml"
    path.write_text(QUADRATIC)
    return path


def test_classify_reports_almost_sure_explosion(quadratic_cfg, capsys):
    code = cli.run(["classify", "--config", str(quadratic_cfg), "--json", "--no-mc"])
    out = json.loads(capsys.readouterr().out)
    assert code == cli.EXIT_OK
    assert out["final"] == "AlmostSureExplosion" and out["schema_version"]


def test_simulate_is_byte_identical(quadratic_cfg, capsys):
    argv = ["simulate", "--config", str(quadratic_cfg), "--paths", "100", "--seed", "7", "--json"]
    assert cli.run(argv) == cli.EXIT_OK
    first = capsys.readouterr().out
    assert cli.run(argv) == cli.EXIT_OK
    assert capsys.readouterr().out == first
    assert json.loads(first)["estimate"]["n_paths"] == 100


def test_artifacts_and_manifest(quadratic_cfg, tmp_path, capsys):
    out = tmp_path / "run"
    code = cli.run(["simulate", "--config", str(quadratic_cfg), "--paths", "20", "--seed", "1",
                    "--csv", "--record", "3", "--out", str(out)])
    assert code == cli.EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 1 and manifest["config_path"] == str(quadratic_cfg)
    for name in ("simulate.json", "paths.csv", "manifest.json"):
        assert str(out / name) in manifest["outputs"]
    header = (out / "paths.csv").read_text().splitlines()[0]
    assert header == "path,t,x1"


def test_feller_and_lyapunov_subcommands(quadratic_cfg, tmp_path, capsys):
    assert cli.run(["feller", "--config", str(quadratic_cfg), "--json", "--anchor", "2"]) == 0
    assert json.loads(capsys.readouterr().out)["verdict"] == "PositiveProbabilityExplosion"
    code = cli.run(["lyapunov", "--config", str(quadratic_cfg), "--json", "--csv",
                    "--out", str(tmp_path)])
    assert code == cli.EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["chow_nonexplosion"]["holds"] == "No"
    assert (tmp_path / "lyapunov_shells.csv").exists()


def test_usage_error_exit_code(capsys):
    assert cli.run(["classify"]) == cli.EXIT_USAGE
    assert cli.run(["bogus"]) == cli.EXIT_USAGE
    assert cli.run([]) == cli.EXIT_USAGE


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("dim: 1\ndrift: ['y']\ndiffusion: ['1']\n")
    assert cli.run(["classify", "--config", str(bad)]) == cli.EXIT_CONFIG
    assert "drift[0]" in capsys.readouterr().err


def test_engine_error_exit_code(tmp_path, capsys):
    planar = tmp_path / "planar.yaml"
    planar.write_text("dim: 2\ndrift: ['0', '0']\ndiffusion: [['1', '0'], ['0', '1']]\n")
    assert cli.run(["feller", "--config", str(planar)]) == cli.EXIT_ENGINE


def test_contradiction_exit_code(monkeypatch, quadratic_cfg, capsys):
    from blowuplab.lyapunov import ConditionReport
    from blowuplab.report import combine

    def conflicted(m, run_mc=None, sim=None):
        return combine({"a": ConditionReport("chow_nonexplosion", "Yes"),
                        "b": ConditionReport("chow_explosion", "Yes")})

    monkeypatch.setattr(cli, "classify", conflicted)
    assert cli.run(["classify", "--config", str(quadratic_cfg)]) == cli.EXIT_CONTRADICTION


def test_gallery_table_without_simulation(capsys):
    assert cli.run(["gallery", "--no-mc"]) == cli.EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 8 and all(line.endswith("yes") for line in lines[1:])
    assert any("stays in (0,inf)" in line for line in lines)


def test_jsonable_handles_non_finite():
    assert json.loads(cli.dumps({"a": float("inf"), "b": float("nan")})) == {"a": "inf", "b": "nan"}
