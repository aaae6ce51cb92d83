"""Stock-part design optimization for combined additive/subtractive manufacturing."""

from .errors import (
    ConfigError,
    EmptyCloud,
    EmptyResult,
    EmptyStock,
    InvertedElement,
    LevelFailed,
    NegativeVolume,
    NoFeasiblePoint,
    OutOfBox,
    ParseError,
    SingularSystem,
    SolverDiverged,
    StockOptError,
    WatertightnessViolation,
)
from .distance import SignedDistanceQuery, delta_thickness, delta_volume, signed_distance
from .fem import (
    BuildConfig,
    FemModel,
    MaterialParams,
    WarpResult,
    build_fem_model,
    simulate_build,
    warped_surface,
    warped_volume,
)
from .mesh import TriangleMesh, box_mesh, load_mesh, mesh_volume, save_stl
from .optimize import MeritSpec, OptimizationOutcome, latin_hypercube, solve_constrained
from .pipeline import (
    EvaluationRecord,
    LevelResult,
    PipelineConfig,
    Report,
    evaluate_design,
    run,
    run_level,
)
from .sparse_grid import SparseGridSurrogate, count_points, enumerate_points
from .stock import StockModel, StockParams, assemble_stock, dilate, erode
from .voxel import VoxelModel, extract_surface, voxel_volume, voxelize

__all__ = [
    "SignedDistanceQuery",
    "delta_thickness",
    "delta_volume",
    "signed_distance",
    "BuildConfig",
    "FemModel",
    "MaterialParams",
    "WarpResult",
    "build_fem_model",
    "simulate_build",
    "warped_surface",
    "warped_volume",
    "MeritSpec",
    "OptimizationOutcome",
    "latin_hypercube",
    "solve_constrained",
    "EvaluationRecord",
    "LevelResult",
    "PipelineConfig",
    "Report",
    "evaluate_design",
    "run",
    "run_level",
    "SparseGridSurrogate",
    "count_points",
    "enumerate_points",
    "ConfigError",
    "EmptyCloud",
    "EmptyResult",
    "EmptyStock",
    "InvertedElement",
    "LevelFailed",
    "NegativeVolume",
    "NoFeasiblePoint",
    "OutOfBox",
    "ParseError",
    "SingularSystem",
    "SolverDiverged",
    "StockOptError",
    "WatertightnessViolation",
    "TriangleMesh",
    "box_mesh",
    "load_mesh",
    "mesh_volume",
    "save_stl",
    "StockModel",
    "StockParams",
    "assemble_stock",
    "dilate",
    "erode",
    "VoxelModel",
    "extract_surface",
    "voxel_volume",
    "voxelize",
]
