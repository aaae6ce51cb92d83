"""Config parsing, report rendering, and CLI exit codes."""

import json

import numpy as np
import pytest

from stockopt.cli import emit_report, main, parse_config
from stockopt.errors import ConfigError
from stockopt.mesh import box_mesh, save_stl
from stockopt.pipeline import ANALYTIC_MODELS, Report

ANALYTIC_TOML = """
schema_version = 1
analytic = "quadratic"
w_min = 2
w_max = 3
seed = 3

[gamma]
x1 = [0.0, 1.0]
x2 = [0.0, 1.0]
"""

PHYSICAL_TOML = """
schema_version = 1
mesh = "{mesh}"
h = 0.5
w_min = 2
w_max = 2
n_starts = 2

[gamma]
offset_mm = [0.0, 1.2]

[fixed]
grid_resolution = 4.0
wall_thickness_mm = 100.0

[build]
inherent_strain = 0.0
layers_per_activation = 100
"""


@pytest.fixture()
def physical_toml(tmp_path):
    mesh_path = tmp_path / "part.stl"
    mesh_path.write_bytes(save_stl(box_mesh((3.0, 3.0, 3.0))))
    cfg_path = tmp_path / "run.toml"
    cfg_path.write_text(PHYSICAL_TOML.format(mesh=mesh_path))
    return cfg_path


@pytest.fixture()
def analytic_toml(tmp_path):
    cfg_path = tmp_path / "run.toml"
    cfg_path.write_text(ANALYTIC_TOML)
    return cfg_path


def test_parse_config_defaults(analytic_toml):
    cfg = parse_config(analytic_toml.read_text())
    assert cfg.tau == 0.04
    assert cfg.beta == 0.8
    assert cfg.n_starts == 5
    assert cfg.stop_tol == 1e-4
    assert cfg.jobs == 1
    assert cfg.free_params == ("x1", "x2")
    assert np.array_equal(cfg.gamma, [[0.0, 1.0], [0.0, 1.0]])


def test_parse_config_rejects_bad_range(analytic_toml):
    text = analytic_toml.read_text().replace("x1 = [0.0, 1.0]", "x1 = [1.0, 1.0]")
    with pytest.raises(ConfigError, match="gamma.x1"):
        parse_config(text)


def test_parse_config_rejects_unknown_key(analytic_toml):
    with pytest.raises(ConfigError, match="offsett"):
        parse_config(analytic_toml.read_text() + "\noffsett = 1.0\n")


def test_parse_config_requires_schema_version(analytic_toml):
    text = analytic_toml.read_text().replace("schema_version = 1", "")
    with pytest.raises(ConfigError, match="schema_version"):
        parse_config(text)
    with pytest.raises(ConfigError, match="schema_version"):
        parse_config(analytic_toml.read_text().replace("= 1", "= 99", 1))


def test_parse_config_requires_mesh_for_physical():
    with pytest.raises(ConfigError, match="mesh"):
        parse_config("schema_version = 1\nh = 0.5\n[gamma]\noffset_mm = [0.0, 1.0]\n")


def test_parse_config_physical_param_names(physical_toml):
    cfg = parse_config(physical_toml.read_text())
    assert cfg.free_params == ("offset_mm",)
    assert cfg.fixed_params == {"grid_resolution": 4.0, "wall_thickness_mm": 100.0}
    with pytest.raises(ConfigError, match="gamma.bogus"):
        parse_config(physical_toml.read_text().replace("offset_mm =", "bogus ="))


def make_report(levels=1):
    from stockopt.pipeline import LevelResult

    rows = [
        LevelResult(
            w=2 + i,
            design_points=5,
            optimal_params=(0.5, 0.25),
            optimal_volume=0.3125,
            method="squared_penalty/nelder_mead",
            interpolant_evaluations=1234,
            wall_time=0.5,
        )
        for i in range(levels)
    ]
    return Report(
        levels=rows,
        final_params=(0.5, 0.25),
        final_delta_volume=0.3125,
        final_delta_thickness=0.05,
        surrogate_volume_gap=0.0,
        surrogate_thickness_gap=0.0,
        stopped_early=False,
        config_hash="abc123",
        tau=0.04,
        cache_hits=0,
        cache_misses=5,
    )


def test_emit_report_csv_header_and_rows():
    out = emit_report(make_report(1), "csv").decode()
    lines = out.strip().split("\n")
    assert lines[0] == (
        "w,design_points,optimal_params_1,optimal_params_2,"
        "optimal_volume,method,interpolant_evaluations,wall_time"
    )
    assert len(lines) == 2
    assert lines[1].startswith("2,5,0.5,0.25,0.3125,squared_penalty/nelder_mead,1234")

    empty = make_report(0)
    assert emit_report(empty, "csv").decode().strip().split("\n") == [lines[0]]


def test_emit_report_json_round_trip():
    report = make_report(2)
    doc = json.loads(emit_report(report, "json").decode())
    restored = Report.from_doc(doc)
    assert emit_report(restored, "csv") == emit_report(report, "csv")
    canonical = json.loads(emit_report(report, "json", include_timings=False))
    assert all(level["wall_time"] == 0.0 for level in canonical["levels"])


def test_cli_optimize_success_and_determinism(analytic_toml, tmp_path, capsys):
    out1, out2 = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["optimize", "--config", str(analytic_toml), "--out", str(out1)]) == 0
    assert main(["optimize", "--config", str(analytic_toml), "--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    doc = json.loads(out1.read_text())
    assert doc["final_params"] == pytest.approx([0.5, 0.0], abs=1e-3)
    assert all(level["wall_time"] == 0.0 for level in doc["levels"])


def test_cli_optimize_physical(physical_toml, tmp_path):
    out = tmp_path / "report.json"
    assert main(["optimize", "--config", str(physical_toml), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert len(doc["levels"]) == 1
    assert doc["levels"][0]["design_points"] == 3


def test_cli_evaluate(physical_toml, capsys):
    assert main(["evaluate", "--config", str(physical_toml), "--point", "0.5"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["delta_thickness"] == pytest.approx(0.5, abs=1e-12)


def test_cli_gen_stock(physical_toml, tmp_path, capsys):
    out = tmp_path / "stl"
    assert main(
        ["gen-stock", "--config", str(physical_toml), "--point", "0.5", "--out", str(out)]
    ) == 0
    written = sorted(p.name for p in out.iterdir())
    assert any(name.endswith(".stl") for name in written)
    printed = capsys.readouterr().out
    for name in written:
        assert name in printed


def test_cli_report_render(analytic_toml, tmp_path, capsys):
    out = tmp_path / "report.json"
    main(["optimize", "--config", str(analytic_toml), "--out", str(out)])
    assert main(["report", "--in", str(out), "--format", "csv"]) == 0
    lines = capsys.readouterr().out.strip().split("\n")
    assert lines[0].startswith("w,design_points,optimal_params_1")
    assert len(lines) >= 2


def test_cli_exit_code_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("schema_version = 1\nnope = true\n[gamma]\nx = [0, 1]\n")
    assert main(["optimize", "--config", str(bad)]) == 2
    assert "nope" in capsys.readouterr().err


def test_cli_exit_code_no_feasible_point(tmp_path, capsys):
    ANALYTIC_MODELS["infeasible"] = (lambda p: float(p[0]), lambda p: 1.0)
    try:
        cfg = tmp_path / "run.toml"
        cfg.write_text(
            'schema_version = 1\nanalytic = "infeasible"\nw_max = 2\n'
            "[gamma]\nx = [0.0, 1.0]\n"
        )
        assert main(["optimize", "--config", str(cfg)]) == 4
    finally:
        del ANALYTIC_MODELS["infeasible"]
    assert "feasible" in capsys.readouterr().err.lower()


def test_cli_exit_code_evaluation_error(tmp_path, capsys):
    cfg = tmp_path / "run.toml"
    cfg.write_text(PHYSICAL_TOML.format(mesh=tmp_path / "missing.stl"))
    assert main(["optimize", "--config", str(cfg)]) == 3
    assert capsys.readouterr().err.startswith("error:")


def test_cli_cache_flag_and_env(physical_toml, tmp_path, monkeypatch):
    cache = tmp_path / "cache"
    out = tmp_path / "r1.json"
    assert main(
        ["optimize", "--config", str(physical_toml), "--cache", str(cache), "--out", str(out)]
    ) == 0
    assert any(cache.rglob("*.json"))
    doc = json.loads(out.read_text())
    assert doc["cache_misses"] > 0

    env_cache = tmp_path / "cache_env"
    monkeypatch.setenv("STOCKOPT_CACHE", str(env_cache))
    assert main(
        ["optimize", "--config", str(physical_toml), "--out", str(tmp_path / "r2.json")]
    ) == 0
    assert any(env_cache.rglob("*.json"))
