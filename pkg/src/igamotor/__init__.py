"""Isogeometric 2D magnetostatic machine solver with harmonic stator-rotor
coupling and adjoint-based THD shape optimization."""

from .errors import (
    AssemblyError,
    ConfigError,
    ConformityError,
    DegenerateSignalError,
    FactorizationError,
    GeometryError,
    IgaError,
    SingularSystemError,
    StabilityError,
)
from .geometry import (
    MachineConfig,
    MultipatchModel,
    RegionTag,
    build_demo_machine,
    build_dof_map,
    check_mesh_validity,
    dump_geometry,
    load_geometry,
)
from .coupling import (
    CouplingBlocks,
    assemble_full_saddle,
    harmonic_orders,
    precompute_coupling,
    rotation_matrix,
    rotation_sweep,
    solve_at_angle,
    sweep_angles,
)
from .fourier import SweepResult, attach_spectrum, build_derivative_dft, emf_spectrum, flux_linkage, thd
from .optim import MachineSolver, OptimizationState, OptimizerConfig, run_optimization
from .splines import (
    KnotVector,
    NurbsPatch,
    bspline_basis,
    eval_curve,
    eval_patch,
    find_span,
    insert_knots,
    make_arc_patch,
    nurbs_basis,
)

__all__ = [
    "AssemblyError",
    "ConfigError",
    "ConformityError",
    "DegenerateSignalError",
    "FactorizationError",
    "GeometryError",
    "IgaError",
    "SingularSystemError",
    "StabilityError",
    "MachineConfig",
    "MultipatchModel",
    "RegionTag",
    "build_demo_machine",
    "build_dof_map",
    "check_mesh_validity",
    "dump_geometry",
    "load_geometry",
    "CouplingBlocks",
    "assemble_full_saddle",
    "harmonic_orders",
    "precompute_coupling",
    "rotation_matrix",
    "rotation_sweep",
    "solve_at_angle",
    "sweep_angles",
    "SweepResult",
    "attach_spectrum",
    "build_derivative_dft",
    "emf_spectrum",
    "flux_linkage",
    "thd",
    "MachineSolver",
    "OptimizationState",
    "OptimizerConfig",
    "run_optimization",
    "KnotVector",
    "NurbsPatch",
    "bspline_basis",
    "eval_curve",
    "eval_patch",
    "find_span",
    "insert_knots",
    "make_arc_patch",
    "nurbs_basis",
]
