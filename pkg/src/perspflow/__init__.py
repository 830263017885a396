"""Perspective scale-gradient estimation from sparse optical-flow motion vectors.

The package estimates the dominant perspective-induced scale gradient of a
static-camera scene (relative depth change per image row, in 1/pixels) from
thresholded sparse optical-flow vectors alone, using either a dense per-cell
poll or a coarse block-mixture constraint system, and ships a pinhole
ground-plane simulator whose closed-form gradient serves as the test oracle.
"""

from .errors import (
    BehindCameraError,
    BoundsError,
    DegenerateSystemError,
    FlowFormatError,
    FlowOrderError,
    HorizonError,
    InsufficientDataError,
    PerspflowError,
    SceneScriptError,
    SolverConvergenceError,
    SolverDivergenceError,
)
from .flow import (
    FlowSequence,
    GridSpec,
    MotionVector,
    parse_flow_stream,
    read_flowlog,
    slice_fraction,
    sparsify,
    write_flow_stream,
    write_flowlog,
)
from .scene import (
    CameraModel,
    FrontalObject,
    GroundObject,
    OutlierRegion,
    SceneScript,
    SimulationResult,
    ground_depth,
    load_scene_script,
    oracle_zeta,
    parse_scene_script,
    project_point,
    simulate,
)
from .dense import (
    DenseAccumulator,
    DenseConfig,
    DenseEstimate,
    LocalZetaField,
    estimate_dense,
    local_zeta_field,
    trimmed_consensus,
)
from .coarse import (
    BlockStats,
    CoarseConfig,
    CoarseEstimate,
    OmegaEstimate,
    build_constraints,
    estimate_coarse,
    finalize_proportions,
    solve_closed_form,
    solve_iterative,
)
from .stats import TrimSpec, masked_central_diff, scalar_lsq, trimmed_mean

__version__ = "0.1.0"

__all__ = [
    "BehindCameraError",
    "BlockStats",
    "BoundsError",
    "CameraModel",
    "CoarseConfig",
    "CoarseEstimate",
    "DegenerateSystemError",
    "DenseAccumulator",
    "DenseConfig",
    "DenseEstimate",
    "FlowFormatError",
    "FlowOrderError",
    "FlowSequence",
    "FrontalObject",
    "GridSpec",
    "GroundObject",
    "HorizonError",
    "InsufficientDataError",
    "LocalZetaField",
    "MotionVector",
    "OmegaEstimate",
    "OutlierRegion",
    "PerspflowError",
    "SceneScript",
    "SceneScriptError",
    "SimulationResult",
    "SolverConvergenceError",
    "SolverDivergenceError",
    "TrimSpec",
    "build_constraints",
    "estimate_coarse",
    "estimate_dense",
    "finalize_proportions",
    "ground_depth",
    "load_scene_script",
    "local_zeta_field",
    "masked_central_diff",
    "oracle_zeta",
    "parse_flow_stream",
    "parse_scene_script",
    "project_point",
    "read_flowlog",
    "scalar_lsq",
    "simulate",
    "slice_fraction",
    "solve_closed_form",
    "solve_iterative",
    "sparsify",
    "trimmed_consensus",
    "trimmed_mean",
    "write_flow_stream",
    "write_flowlog",
]
