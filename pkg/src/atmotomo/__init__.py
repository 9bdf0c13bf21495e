"""Layered atmospheric tomography: forward/adjoint operators on layer
stacks, overlap geometry, regularized reconstruction, and turbulence
synthesis."""

__version__ = "0.1.0"

from .field import (DataVector, Grid2D, LayerStack, PupilField,
                    bilinear_table, inner_data, inner_layers, norm_data,
                    norm_layers, pupil_grid, sample_field, sample_stencil)
from .geometry import (ARCSEC_TO_RAD, BallRegion, GeometrySpec,
                       NoSingleOverlapRegion, OverlapMap, Region,
                       aperture_trace, disjoint_height,
                       find_single_overlap_ball, layer_bounding_square,
                       overlap_counts, overlap_map, overlap_map_on_grid,
                       shifted_aperture, shifted_region)
from .operator import NoiseModel, TomoOperator, normalize_layer_weights
from .turbulence import TurbulenceSpec, generate_atmosphere, vonkarman_screen
from .reconstruct import (SolveConfig, SolveHistory, estimate_normal_norm,
                          kaczmarz, landweber, solve, tikhonov_cg)
from .analysis import (InvariantCheck, NullspaceWitness, ProjectionResult,
                       ReconReport, StratifiedError, StrehlPoint,
                       build_nullspace_witness, build_recon_report,
                       check_scaling_invariant, lowest_ball_layer,
                       project_to_range_of_adjoint, relative_error,
                       ring_directions, run_projection_experiment,
                       strehl_by_stratum, strehl_map)
from .config import (ConfigError, EvalSettings, NullspaceSettings,
                     RunConfig, load_config, parse_config)
from .io_utils import (load_data, load_stack, save_data, save_stack,
                       write_pgm)

__all__ = [
    "ARCSEC_TO_RAD", "BallRegion", "ConfigError", "DataVector",
    "EvalSettings", "GeometrySpec", "Grid2D", "InvariantCheck",
    "LayerStack", "NoSingleOverlapRegion", "NoiseModel",
    "NullspaceSettings", "NullspaceWitness", "OverlapMap",
    "ProjectionResult", "PupilField", "ReconReport", "Region",
    "RunConfig", "SolveConfig", "SolveHistory", "StratifiedError",
    "StrehlPoint", "TomoOperator", "TurbulenceSpec", "aperture_trace",
    "bilinear_table", "build_nullspace_witness", "build_recon_report",
    "check_scaling_invariant", "disjoint_height", "estimate_normal_norm",
    "find_single_overlap_ball", "generate_atmosphere", "inner_data",
    "inner_layers", "kaczmarz", "landweber", "layer_bounding_square",
    "load_config", "load_data", "load_stack", "lowest_ball_layer",
    "norm_data", "norm_layers", "normalize_layer_weights",
    "overlap_counts", "overlap_map", "overlap_map_on_grid",
    "parse_config", "project_to_range_of_adjoint", "pupil_grid",
    "relative_error", "ring_directions", "run_projection_experiment",
    "sample_field", "sample_stencil", "save_data", "save_stack",
    "shifted_aperture", "shifted_region", "solve", "strehl_by_stratum",
    "strehl_map", "tikhonov_cg", "vonkarman_screen", "write_pgm",
]
