"""Finite-element convolution operators on uniform grids.

Homogeneous and bi-phase FEA convolutions for thermal, plane-stress
elastic and thermoelastic problems, a Jacobi inference network built from
them, and gradient-based recovery of phase images and material constants.
"""
from ._backend import available as available_backends
from ._backend import set_num_threads
from .conv import conv_biphase, conv_homogeneous, grad_wrt_phase, grad_wrt_response, grad_wrt_rho
from .errors import (
    ConvergenceError,
    DimensionError,
    DivergenceError,
    FeanetError,
    IdentifiabilityError,
    MulticollinearityError,
    NumericalError,
    ParseError,
    SingularSystemError,
    StagnationError,
    ValidationError,
)
from .fields import (
    BoundaryCondition,
    Dataset,
    FieldImage,
    PhaseImage,
    PhysicsKind,
    Sample,
    circular_inclusion,
    interior_mask,
    load_dataset,
    load_image,
    new_field_image,
    save_dataset,
    save_image,
)
from .kernels import (
    ElementStiffness,
    MaterialParams,
    StencilKernel,
    ThetaKernel,
    assemble_kernel,
    biphase_theta,
    coupling_kernel,
    dtheta_drho,
    elasticity_kernel,
    element_stiffness,
    element_stiffness_quadrature,
    kernel_for,
    thermal_kernel,
    thermoelastic_kernel,
)
from .learning import (
    EstimateOptions,
    check_loading_rank,
    clip_rho,
    estimate_joint,
    estimate_phase,
    estimate_properties,
    fit_multiphysics_filter,
    relative_error,
)
from .net import InferenceConfig, apply_boundary, infer, preconditioner_biphase, preconditioner_homogeneous, residual
from .solver import SparseStiffness, assemble_global, generate_sample, memory_estimate, solve_dirichlet

__version__ = "0.1.0"

__all__ = [
    "available_backends",
    "set_num_threads",
    "conv_biphase",
    "conv_homogeneous",
    "grad_wrt_phase",
    "grad_wrt_response",
    "grad_wrt_rho",
    "ConvergenceError",
    "DimensionError",
    "DivergenceError",
    "FeanetError",
    "IdentifiabilityError",
    "MulticollinearityError",
    "NumericalError",
    "ParseError",
    "SingularSystemError",
    "StagnationError",
    "ValidationError",
    "BoundaryCondition",
    "Dataset",
    "FieldImage",
    "PhaseImage",
    "PhysicsKind",
    "Sample",
    "circular_inclusion",
    "interior_mask",
    "load_dataset",
    "load_image",
    "new_field_image",
    "save_dataset",
    "save_image",
    "ElementStiffness",
    "MaterialParams",
    "StencilKernel",
    "ThetaKernel",
    "assemble_kernel",
    "biphase_theta",
    "coupling_kernel",
    "dtheta_drho",
    "elasticity_kernel",
    "element_stiffness",
    "element_stiffness_quadrature",
    "kernel_for",
    "thermal_kernel",
    "thermoelastic_kernel",
    "EstimateOptions",
    "check_loading_rank",
    "clip_rho",
    "estimate_joint",
    "estimate_phase",
    "estimate_properties",
    "fit_multiphysics_filter",
    "relative_error",
    "InferenceConfig",
    "apply_boundary",
    "infer",
    "preconditioner_biphase",
    "preconditioner_homogeneous",
    "residual",
    "SparseStiffness",
    "assemble_global",
    "generate_sample",
    "memory_estimate",
    "solve_dirichlet",
]
