"""Shape optimisation of a two-phase transmission problem with kernel gradients."""

from .config import RunConfig, load_config
from .exceptions import (
    ConfigError,
    DuplicateCentersError,
    GramConditioningError,
    InvalidDeformationError,
    InvalidMeshError,
    InvalidShapeError,
    MeshGenerationError,
    MeshMismatchError,
    ShapeOptError,
    SolverError,
    UnsupportedTensorsError,
)
from .fem import (
    ProblemData,
    TransmissionSolver,
    compute_target,
    frozen_target,
    solve_adjoint,
    solve_state,
)
from .fields import ScalarFieldP1, VectorFieldP1
from .gradients import GradientKind, GradientMethod, gradient_field
from .kernels import KernelProfile, RadialKernel, finite_dim_gradient, gram_matrix
from .mesh import Disc, Label, ShapeSpec, TriMesh, deform, generate_mesh, validate
from .optimizer import (
    AlgorithmKind,
    OptConfig,
    OptHistory,
    run,
    run_standard,
    run_variable_metric,
)
from .shape_calculus import assemble_tensors, dJ_bd, dJ_vol, fd_oracle

__version__ = "0.3.0"

__all__ = [
    "AlgorithmKind",
    "ConfigError",
    "Disc",
    "DuplicateCentersError",
    "GradientKind",
    "GradientMethod",
    "GramConditioningError",
    "InvalidDeformationError",
    "InvalidMeshError",
    "InvalidShapeError",
    "KernelProfile",
    "Label",
    "MeshGenerationError",
    "MeshMismatchError",
    "OptConfig",
    "OptHistory",
    "ProblemData",
    "RadialKernel",
    "RunConfig",
    "ScalarFieldP1",
    "ShapeOptError",
    "ShapeSpec",
    "SolverError",
    "TransmissionSolver",
    "TriMesh",
    "UnsupportedTensorsError",
    "VectorFieldP1",
    "assemble_tensors",
    "compute_target",
    "dJ_bd",
    "dJ_vol",
    "deform",
    "fd_oracle",
    "finite_dim_gradient",
    "frozen_target",
    "generate_mesh",
    "gradient_field",
    "gram_matrix",
    "load_config",
    "run",
    "run_standard",
    "run_variable_metric",
    "solve_adjoint",
    "solve_state",
    "validate",
]
