"""End-to-end orchestration: full-model evaluations, surrogates, level loop.

Each design point runs the six-step physical chain (stock assembly, build
simulation, warped surface/volume, thickness and volume metrics). Sparse-grid
points are evaluated concurrently through a content-addressed JSON cache;
each level builds the two surrogates, runs the constrained optimizer, and the
loop stops once the optimum is stable between consecutive levels.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .distance import SignedDistanceQuery, delta_thickness, delta_volume
from .errors import LevelFailed, NoFeasiblePoint, StockOptError
from .fem import BuildConfig, MaterialParams, build_fem_model, simulate_build, warped_surface, warped_volume
from .mesh import TriangleMesh, load_mesh, mesh_volume, save_stl
from .optimize import solve_constrained
from .sparse_grid import SparseGridSurrogate, count_points, enumerate_points
from .stock import StockParams, assemble_stock
from .voxel import voxel_volume, voxelize

SCHEMA_VERSION = 1
_QUANTUM = 1e-9  # design-point quantization for cache keys

PARAM_NAMES = ("offset_mm", "grid_resolution", "wall_thickness_mm")

# Closed-form (objective, constraint) pairs usable in place of the physical
# chain; tests may register additional entries.
ANALYTIC_MODELS: dict = {
    "quadratic": (
        lambda p: float(np.sum(np.asarray(p) ** 2)),
        lambda p: float(0.5 - np.asarray(p)[0]),
    ),
}


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run needs; immutable so the config hash is stable."""

    gamma: np.ndarray  # (N, 2) parameter bounds, in PARAM_NAMES order
    free_params: tuple[str, ...]  # names of the N optimized parameters
    fixed_params: dict  # values for the remaining parameters
    mesh_path: str | None = None
    nominal_mesh: TriangleMesh | None = None
    h: float = 0.5
    tau: float = 0.04
    material: MaterialParams = field(default_factory=MaterialParams)
    build: BuildConfig = field(default_factory=BuildConfig)
    beta: float = 0.8
    w_min: int = 2
    w_max: int = 5
    stop_tol: float = 1e-4
    n_starts: int = 5
    seed: int = 0
    jobs: int = 1
    cache_dir: str | None = None
    analytic: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=np.float64))
        if self.gamma.ndim != 2 or self.gamma.shape[1] != 2:
            raise ValueError("gamma must have shape (N, 2)")
        if len(self.free_params) != self.gamma.shape[0]:
            raise ValueError("one gamma row per free parameter required")
        if not np.all(np.isfinite(self.gamma)):
            raise ValueError("gamma bounds must be finite")
        if np.any(self.gamma[:, 0] >= self.gamma[:, 1]):
            raise ValueError("gamma must have min < max per dimension")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.w_min < 1 or self.w_max < self.w_min:
            raise ValueError("need 1 <= w_min <= w_max")
        if self.analytic is None:
            unknown = set(self.free_params) - set(PARAM_NAMES)
            if unknown:
                raise ValueError(f"unknown parameters {sorted(unknown)}")
            missing = set(PARAM_NAMES) - set(self.free_params) - set(self.fixed_params)
            if missing:
                raise ValueError(f"parameters {sorted(missing)} neither free nor fixed")

    @property
    def n(self) -> int:
        return self.gamma.shape[0]

    def stock_params(self, p) -> StockParams:
        values = dict(self.fixed_params)
        for name, val in zip(self.free_params, np.asarray(p, dtype=np.float64)):
            values[name] = float(val)
        return StockParams(**{k: values[k] for k in PARAM_NAMES})

    def load_nominal(self) -> TriangleMesh:
        if self.nominal_mesh is not None:
            return self.nominal_mesh
        if self.mesh_path is None:
            raise ValueError("config has neither a mesh path nor an in-memory mesh")
        try:
            data = Path(self.mesh_path).read_bytes()
        except OSError as exc:
            raise StockOptError(f"cannot read mesh {self.mesh_path!r}: {exc}") from exc
        return load_mesh(data)

    def config_hash(self) -> str:
        """Content hash of everything an EvaluationRecord depends on."""
        if self.analytic is not None:
            doc = {"analytic": self.analytic}
        else:
            mesh = self.load_nominal()
            mesh_digest = hashlib.sha256(
                np.ascontiguousarray(mesh.triangle_corners()).tobytes()
            ).hexdigest()
            doc = {
                "mesh": mesh_digest,
                "h": self.h,
                "beta": self.beta,
                "free": list(self.free_params),
                "fixed": {k: self.fixed_params[k] for k in sorted(self.fixed_params)},
                "material": [
                    self.material.young_modulus,
                    self.material.poisson_ratio,
                    self.material.thermal_expansion,
                    self.material.deposition_temperature,
                    self.material.reference_temperature,
                ],
                "build": [
                    self.build.layers_per_activation,
                    self.build.inherent_strain,
                    self.build.support_spring,
                    self.build.cg_rel_tol,
                ],
            }
        text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def point_key(p) -> str:
    """Stable key for a design point, quantized to the cache quantum."""
    q = np.round(np.asarray(p, dtype=np.float64) / _QUANTUM).astype(np.int64)
    return hashlib.sha256(q.tobytes()).hexdigest()[:16]


@dataclass
class EvaluationRecord:
    """Full-model outputs at one design point.

    Equality and serialization identity are defined on the physics payload;
    wall-clock stage timings are carried alongside but excluded, keeping the
    record a pure function of (point, config hash).
    """

    point: tuple[float, ...]
    delta_volume: float
    delta_thickness: float
    stats: dict
    residual_max: float
    solver_steps: int
    config_hash: str
    timings: dict = field(default_factory=dict)

    def payload(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "point": list(self.point),
            "delta_volume": self.delta_volume,
            "delta_thickness": self.delta_thickness,
            "stats": {k: self.stats[k] for k in sorted(self.stats)},
            "residual_max": self.residual_max,
            "solver_steps": self.solver_steps,
            "config_hash": self.config_hash,
        }

    def __eq__(self, other):
        return isinstance(other, EvaluationRecord) and self.payload() == other.payload()

    def to_json(self) -> str:
        doc = dict(self.payload())
        doc["timings"] = {k: self.timings[k] for k in sorted(self.timings)}
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "EvaluationRecord":
        doc = json.loads(text)
        return cls(
            point=tuple(doc["point"]),
            delta_volume=doc["delta_volume"],
            delta_thickness=doc["delta_thickness"],
            stats=doc["stats"],
            residual_max=doc["residual_max"],
            solver_steps=doc["solver_steps"],
            config_hash=doc["config_hash"],
            timings=doc.get("timings", {}),
        )


class EvaluationCache:
    """One JSON record per design point under <dir>/<config-hash>/.

    Concurrent insertions of distinct keys are safe (atomic rename) and
    re-insertion of an equal key is idempotent. Counts hits and misses.
    """

    def __init__(self, root: str | Path | None, config_hash: str):
        self.root = None if root is None else Path(root) / config_hash
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
        self._memory: dict[str, EvaluationRecord] = {}
        self.hits = 0
        self.misses = 0

    def get(self, p) -> EvaluationRecord | None:
        key = point_key(p)
        rec = self._memory.get(key)
        if rec is None and self.root is not None:
            path = self.root / f"{key}.json"
            if path.exists():
                rec = EvaluationRecord.from_json(path.read_text())
                self._memory[key] = rec
        if rec is None:
            self.misses += 1
        else:
            self.hits += 1
        return rec

    def put(self, p, rec: EvaluationRecord) -> None:
        key = point_key(p)
        self._memory[key] = rec
        if self.root is not None:
            path = self.root / f"{key}.json"
            tmp = path.with_suffix(f".tmp-{id(rec)}")
            tmp.write_text(rec.to_json())
            tmp.replace(path)


def _build_stock(p: StockParams, cfg: PipelineConfig):
    nominal_mesh = cfg.load_nominal()
    nominal = voxelize(nominal_mesh, cfg.h)
    return nominal_mesh, assemble_stock(nominal, p, beta=cfg.beta)


def generate_stock_meshes(p: StockParams, cfg: PipelineConfig) -> dict[str, bytes]:
    """STL exports of the nominal, cavity and stock solids at one point."""
    from .voxel import extract_surface

    _, sm = _build_stock(p, cfg)
    out = {"nominal.stl": save_stl(extract_surface(sm.nominal)),
           "stock.stl": save_stl(extract_surface(sm.stock))}
    if sm.cavities.count():
        out["cavities.stl"] = save_stl(extract_surface(sm.cavities))
    return out


def evaluate_design(p, cfg: PipelineConfig, cache: EvaluationCache | None = None) -> EvaluationRecord:
    """Run the six-step chain at one point of Gamma (cached when possible)."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < cfg.gamma[:, 0]) or np.any(p > cfg.gamma[:, 1]):
        raise StockOptError(f"design point {p} outside Gamma")
    if cache is not None:
        rec = cache.get(p)
        if rec is not None:
            return rec

    config_hash = cfg.config_hash()
    if cfg.analytic is not None:
        f_fn, g_fn = ANALYTIC_MODELS[cfg.analytic]
        rec = EvaluationRecord(
            point=tuple(float(v) for v in p),
            delta_volume=f_fn(p),
            delta_thickness=cfg.tau - g_fn(p),
            stats={},
            residual_max=0.0,
            solver_steps=0,
            config_hash=config_hash,
        )
        if cache is not None:
            cache.put(p, rec)
        return rec

    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    sp = cfg.stock_params(p)
    nominal_mesh, sm = _build_stock(sp, cfg)
    timings["stock"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    model = build_fem_model(sm.stock)
    warp = simulate_build(model, cfg.material, cfg.build)
    timings["fem"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    wvol = warped_volume(model, warp)
    cloud = warped_surface(sm, model, warp)
    query = SignedDistanceQuery(nominal_mesh)
    d_thick = delta_thickness(cloud, query)
    d_vol = delta_volume(wvol, voxel_volume(sm.cavities), mesh_volume(nominal_mesh))
    timings["metrics"] = time.perf_counter() - t0

    rec = EvaluationRecord(
        point=tuple(float(v) for v in p),
        delta_volume=float(d_vol),
        delta_thickness=float(d_thick),
        stats={
            "stock_voxels": sm.stock.count(),
            "cavity_voxels": sm.cavities.count(),
            "nominal_voxels": sm.nominal.count(),
            "remaining_fraction": 1.0 - sm.cavities.count() / sm.nominal.count(),
            "surface_points": int(len(cloud)),
        },
        residual_max=float(max(warp.residuals, default=0.0)),
        solver_steps=warp.steps,
        config_hash=config_hash,
        timings=timings,
    )
    if cache is not None:
        cache.put(p, rec)
    return rec


@dataclass
class LevelResult:
    """One row of the per-level summary table."""

    w: int
    design_points: int
    optimal_params: tuple[float, ...]
    optimal_volume: float
    method: str
    interpolant_evaluations: int
    wall_time: float

    def to_doc(self, include_timings: bool = True) -> dict:
        return {
            "w": self.w,
            "design_points": self.design_points,
            "optimal_params": list(self.optimal_params),
            "optimal_volume": self.optimal_volume,
            "method": self.method,
            "interpolant_evaluations": self.interpolant_evaluations,
            "wall_time": self.wall_time if include_timings else 0.0,
        }


@dataclass
class Report:
    """All level rows plus the re-evaluated final design."""

    levels: list[LevelResult]
    final_params: tuple[float, ...]
    final_delta_volume: float
    final_delta_thickness: float
    surrogate_volume_gap: float
    surrogate_thickness_gap: float
    stopped_early: bool
    config_hash: str
    tau: float
    cache_hits: int = 0
    cache_misses: int = 0

    def to_doc(self, include_timings: bool = True) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "levels": [l.to_doc(include_timings) for l in self.levels],
            "final_params": list(self.final_params),
            "final_delta_volume": self.final_delta_volume,
            "final_delta_thickness": self.final_delta_thickness,
            "surrogate_volume_gap": self.surrogate_volume_gap,
            "surrogate_thickness_gap": self.surrogate_thickness_gap,
            "stopped_early": self.stopped_early,
            "config_hash": self.config_hash,
            "tau": self.tau,
            "cache_hits": self.cache_hits,
            "cache_misses": self.cache_misses,
        }

    def to_json(self, include_timings: bool = True) -> str:
        return json.dumps(self.to_doc(include_timings), sort_keys=True, separators=(",", ":"))

    def canonical_json(self) -> str:
        """Timing-free serialization; byte-identical across equal-seed runs."""
        return self.to_json(include_timings=False)

    @classmethod
    def from_doc(cls, doc: dict) -> "Report":
        levels = [
            LevelResult(
                w=l["w"],
                design_points=l["design_points"],
                optimal_params=tuple(l["optimal_params"]),
                optimal_volume=l["optimal_volume"],
                method=l["method"],
                interpolant_evaluations=l["interpolant_evaluations"],
                wall_time=l["wall_time"],
            )
            for l in doc["levels"]
        ]
        return cls(
            levels=levels,
            final_params=tuple(doc["final_params"]),
            final_delta_volume=doc["final_delta_volume"],
            final_delta_thickness=doc["final_delta_thickness"],
            surrogate_volume_gap=doc["surrogate_volume_gap"],
            surrogate_thickness_gap=doc["surrogate_thickness_gap"],
            stopped_early=doc["stopped_early"],
            config_hash=doc["config_hash"],
            tau=doc["tau"],
            cache_hits=doc.get("cache_hits", 0),
            cache_misses=doc.get("cache_misses", 0),
        )


def run_level(w: int, cfg: PipelineConfig, cache: EvaluationCache):
    """Evaluate the level-w grid, build surrogates, optimize.

    Returns (LevelResult, SparseGridSurrogate). The first failed evaluation
    aborts the level (LevelFailed names the point).
    """
    t_start = time.perf_counter()
    points = enumerate_points(cfg.n, w)
    coords = np.array([p.coordinates for p in points])
    mapped = cfg.gamma[:, 0] + coords * (cfg.gamma[:, 1] - cfg.gamma[:, 0])

    def task(p):
        return evaluate_design(p, cfg, cache)

    records: list[EvaluationRecord] = [None] * len(mapped)
    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            futures = [pool.submit(task, p) for p in mapped]
            for i, fut in enumerate(futures):
                try:
                    records[i] = fut.result()
                except StockOptError as exc:
                    raise LevelFailed(
                        f"level {w} failed: {exc}", point=tuple(mapped[i])
                    ) from exc
    else:
        for i, p in enumerate(mapped):
            try:
                records[i] = task(p)
            except StockOptError as exc:
                raise LevelFailed(f"level {w} failed: {exc}", point=tuple(p)) from exc

    values = {
        "objective": np.array([r.delta_volume for r in records]),
        "constraint": np.array([cfg.tau - r.delta_thickness for r in records]),
    }
    surrogate = SparseGridSurrogate.build(cfg.n, w, cfg.gamma, values)

    outcome = solve_constrained(
        lambda p: surrogate.evaluate(p, "objective"),
        lambda p: surrogate.evaluate(p, "constraint"),
        cfg.gamma,
        n_starts=cfg.n_starts,
        seed=cfg.seed,
        level_w=w,
    )
    if not outcome.feasible:
        raise NoFeasiblePoint(f"no feasible design found at level {w}")

    result = LevelResult(
        w=w,
        design_points=count_points(cfg.n, w),
        optimal_params=tuple(float(v) for v in outcome.best),
        optimal_volume=float(outcome.f_best),
        method=f"{outcome.best_method}/{outcome.best_optimizer}",
        interpolant_evaluations=outcome.total_evaluations,
        wall_time=time.perf_counter() - t_start,
    )
    return result, surrogate


def run(cfg: PipelineConfig) -> Report:
    """Level loop with the max-norm stopping rule and final re-evaluation."""
    cache = EvaluationCache(cfg.cache_dir, cfg.config_hash())
    levels: list[LevelResult] = []
    surrogate = None
    prev = None
    stopped = False
    for w in range(cfg.w_min, cfg.w_max + 1):
        result, surrogate = run_level(w, cfg, cache)
        levels.append(result)
        p_star = np.asarray(result.optimal_params)
        if prev is not None and np.max(np.abs(p_star - prev)) < cfg.stop_tol:
            stopped = True
            break
        prev = p_star

    final = levels[-1]
    p_star = np.asarray(final.optimal_params)
    rec = evaluate_design(p_star, cfg, cache=None)  # truth, never the cache
    return Report(
        levels=levels,
        final_params=final.optimal_params,
        final_delta_volume=rec.delta_volume,
        final_delta_thickness=rec.delta_thickness,
        surrogate_volume_gap=abs(rec.delta_volume - surrogate.evaluate(p_star, "objective")),
        surrogate_thickness_gap=abs(
            (cfg.tau - rec.delta_thickness) - surrogate.evaluate(p_star, "constraint")
        ),
        stopped_early=stopped,
        config_hash=cfg.config_hash(),
        tau=cfg.tau,
        cache_hits=cache.hits,
        cache_misses=cache.misses,
    )
