"""Command-line front end: config parsing, report rendering, subcommands.

Commands: `optimize` (full level loop), `evaluate` (one design point),
`gen-stock` (geometry export), `report` (re-render a stored report). The run
configuration is a versioned TOML document; all randomness flows from its
single seed, and the default JSON report is timing-free so equal runs are
byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib as tomli
except ModuleNotFoundError:  # Python < 3.11
    import tomli

from .errors import ConfigError, LevelFailed, NoFeasiblePoint, ParseError, StockOptError
from .fem import BuildConfig, MaterialParams
from .pipeline import (
    ANALYTIC_MODELS,
    PARAM_NAMES,
    PipelineConfig,
    Report,
    evaluate_design,
    generate_stock_meshes,
    run,
)

CONFIG_SCHEMA_VERSION = 1

_TOP_KEYS = {
    "schema_version", "mesh", "h", "tau", "beta", "seed", "n_starts",
    "w_min", "w_max", "stop_tol", "jobs", "cache_dir", "analytic",
    "gamma", "fixed", "material", "build",
}
_MATERIAL_KEYS = {
    "young_modulus", "poisson_ratio", "thermal_expansion",
    "deposition_temperature", "reference_temperature", "density",
    "elastic_limit", "ultimate_stress",
}
_BUILD_KEYS = {
    "layers_per_activation", "inherent_strain", "support_spring",
    "cg_rel_tol", "cg_max_iter",
}


def _reject_unknown(table: dict, allowed: set, path: str) -> None:
    for key in table:
        if key not in allowed:
            raise ConfigError("unknown key", key=f"{path}{key}")


def _number(table: dict, key: str, default, path: str, minimum=None, strict=False):
    value = table.get(key, default)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError("expected a number", key=f"{path}{key}")
    if minimum is not None and (value <= minimum if strict else value < minimum):
        bound = f"> {minimum}" if strict else f">= {minimum}"
        raise ConfigError(f"value must be {bound}", key=f"{path}{key}")
    return value


def parse_config(text: str) -> PipelineConfig:
    """PipelineConfig from a TOML document; unknown keys are rejected."""
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"not valid TOML: {exc}") from exc

    _reject_unknown(doc, _TOP_KEYS, "")
    if doc.get("schema_version") != CONFIG_SCHEMA_VERSION:
        raise ConfigError(
            f"required and must equal {CONFIG_SCHEMA_VERSION}", key="schema_version"
        )

    analytic = doc.get("analytic")
    if analytic is not None and analytic not in ANALYTIC_MODELS:
        raise ConfigError(f"unknown analytic model {analytic!r}", key="analytic")

    gamma_table = doc.get("gamma")
    if not isinstance(gamma_table, dict) or not gamma_table:
        raise ConfigError("required table with at least one parameter range", key="gamma")
    if analytic is None:
        _reject_unknown(gamma_table, set(PARAM_NAMES), "gamma.")
        names = [n for n in PARAM_NAMES if n in gamma_table]
    else:
        names = list(gamma_table)
    bounds = []
    for name in names:
        rng = gamma_table[name]
        if (
            not isinstance(rng, list)
            or len(rng) != 2
            or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in rng)
        ):
            raise ConfigError("expected [min, max]", key=f"gamma.{name}")
        if rng[0] >= rng[1]:
            raise ConfigError("min must be < max", key=f"gamma.{name}")
        bounds.append([float(rng[0]), float(rng[1])])

    fixed_table = doc.get("fixed", {})
    if not isinstance(fixed_table, dict):
        raise ConfigError("expected a table", key="fixed")
    if analytic is None:
        _reject_unknown(fixed_table, set(PARAM_NAMES) - set(names), "fixed.")
    fixed = {k: float(_number(fixed_table, k, None, "fixed.")) for k in fixed_table}

    mat_table = doc.get("material", {})
    _reject_unknown(mat_table, _MATERIAL_KEYS, "material.")
    defaults = MaterialParams()
    try:
        material = MaterialParams(
            **{
                k: _number(mat_table, k, getattr(defaults, k), "material.")
                for k in _MATERIAL_KEYS
            }
        )
    except ValueError as exc:
        raise ConfigError(str(exc), key="material") from exc

    build_table = doc.get("build", {})
    _reject_unknown(build_table, _BUILD_KEYS, "build.")
    try:
        build = BuildConfig(
            layers_per_activation=int(
                _number(build_table, "layers_per_activation", 10, "build.", minimum=1)
            ),
            inherent_strain=_number(build_table, "inherent_strain", None, "build.", minimum=0),
            support_spring=_number(build_table, "support_spring", 0.0, "build.", minimum=0),
            cg_rel_tol=_number(build_table, "cg_rel_tol", 1e-8, "build.", minimum=0, strict=True),
            cg_max_iter=(
                None
                if build_table.get("cg_max_iter") is None
                else int(_number(build_table, "cg_max_iter", None, "build.", minimum=1))
            ),
        )
    except ValueError as exc:
        raise ConfigError(str(exc), key="build") from exc

    mesh = doc.get("mesh")
    if analytic is None:
        if not isinstance(mesh, str):
            raise ConfigError("required mesh path", key="mesh")
        h = _number(doc, "h", None, "", minimum=0, strict=True)
        if h is None:
            raise ConfigError("required voxel spacing", key="h")
    else:
        h = _number(doc, "h", 1.0, "", minimum=0, strict=True)

    w_min = int(_number(doc, "w_min", 2, "", minimum=1))
    w_max = int(_number(doc, "w_max", 5, "", minimum=1))
    if w_max < w_min:
        raise ConfigError("must be >= w_min", key="w_max")

    beta = _number(doc, "beta", 0.8, "")
    if not 0 < beta < 1:
        raise ConfigError("must be in (0, 1)", key="beta")

    cache_dir = doc.get("cache_dir")
    if cache_dir is not None and not isinstance(cache_dir, str):
        raise ConfigError("expected a path string", key="cache_dir")

    try:
        return PipelineConfig(
            gamma=np.asarray(bounds),
            free_params=tuple(names),
            fixed_params=fixed,
            mesh_path=mesh,
            h=float(h),
            tau=float(_number(doc, "tau", 0.04, "", minimum=0, strict=True)),
            material=material,
            build=build,
            beta=float(beta),
            w_min=w_min,
            w_max=w_max,
            stop_tol=float(_number(doc, "stop_tol", 1e-4, "", minimum=0, strict=True)),
            n_starts=int(_number(doc, "n_starts", 5, "", minimum=1)),
            seed=int(_number(doc, "seed", 0, "")),
            jobs=int(_number(doc, "jobs", 1, "", minimum=1)),
            cache_dir=cache_dir,
            analytic=analytic,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def emit_report(report: Report, fmt: str, include_timings: bool = True) -> bytes:
    """Serialized report: full JSON, or one CSV row per level."""
    if fmt == "json":
        return (report.to_json(include_timings) + "\n").encode()
    if fmt != "csv":
        raise ConfigError(f"unknown report format {fmt!r}")
    n = len(report.final_params)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["w", "design_points"]
        + [f"optimal_params_{d + 1}" for d in range(n)]
        + ["optimal_volume", "method", "interpolant_evaluations", "wall_time"]
    )
    for level in report.levels:
        writer.writerow(
            [level.w, level.design_points]
            + [repr(v) for v in level.optimal_params]
            + [
                repr(level.optimal_volume),
                level.method,
                level.interpolant_evaluations,
                repr(level.wall_time if include_timings else 0.0),
            ]
        )
    return buf.getvalue().encode()


def _load_config(args) -> PipelineConfig:
    cfg = parse_config(Path(args.config).read_text())
    overrides = {}
    cache = getattr(args, "cache", None) or os.environ.get("STOCKOPT_CACHE")
    if cache:
        overrides["cache_dir"] = cache
    if getattr(args, "jobs", None):
        overrides["jobs"] = args.jobs
    if overrides:
        from dataclasses import replace

        cfg = replace(cfg, **overrides)
    return cfg


def _parse_point(text: str, cfg: PipelineConfig) -> np.ndarray:
    try:
        values = np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise ConfigError(f"malformed point {text!r}") from exc
    if len(values) != cfg.n:
        raise ConfigError(f"expected {cfg.n} coordinates, got {len(values)}")
    return values


def _cmd_optimize(args) -> int:
    cfg = _load_config(args)
    report = run(cfg)
    data = emit_report(report, "json", include_timings=args.timings)
    if args.out:
        Path(args.out).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    rec = evaluate_design(_parse_point(args.point, cfg), cfg)
    sys.stdout.write(rec.to_json() + "\n")
    return 0


def _cmd_gen_stock(args) -> int:
    cfg = _load_config(args)
    if cfg.analytic is not None:
        raise ConfigError("gen-stock needs a physical configuration", key="analytic")
    params = cfg.stock_params(_parse_point(args.point, cfg))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, data in generate_stock_meshes(params, cfg).items():
        (out / name).write_bytes(data)
        sys.stdout.write(f"{out / name}\n")
    return 0


def _cmd_report(args) -> int:
    try:
        doc = json.loads(Path(getattr(args, "in")).read_text())
        report = Report.from_doc(doc)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ParseError(f"invalid report document: {exc}") from exc
    sys.stdout.buffer.write(emit_report(report, args.format))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stockopt", description="Stock-part design optimization for additive manufacturing."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    opt = sub.add_parser("optimize", help="run the full level loop")
    opt.add_argument("--config", required=True)
    opt.add_argument("--cache", default=None)
    opt.add_argument("--jobs", type=int, default=None)
    opt.add_argument("--out", default=None, help="report JSON path (default stdout)")
    opt.add_argument(
        "--timings", action="store_true",
        help="include wall-clock timings (breaks byte-identical output)",
    )
    opt.set_defaults(func=_cmd_optimize)

    ev = sub.add_parser("evaluate", help="evaluate the full model at one point")
    ev.add_argument("--config", required=True)
    ev.add_argument("--cache", default=None)
    ev.add_argument("--point", required=True, help="comma-separated coordinates")
    ev.set_defaults(func=_cmd_evaluate)

    gs = sub.add_parser("gen-stock", help="export stock geometry STLs at one point")
    gs.add_argument("--config", required=True)
    gs.add_argument("--point", required=True)
    gs.add_argument("--out", required=True, help="output directory")
    gs.set_defaults(func=_cmd_gen_stock)

    rp = sub.add_parser("report", help="re-render a stored report")
    rp.add_argument("--in", required=True, dest="in")
    rp.add_argument("--format", choices=("json", "csv"), default="csv")
    rp.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NoFeasiblePoint as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except StockOptError as exc:  # LevelFailed and all evaluation errors
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
