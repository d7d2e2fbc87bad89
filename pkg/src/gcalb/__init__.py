"""Adaptive local basis sets from rationally filtered spectral projectors.

The package builds reduced bases for the low-lying eigenspace of periodic
second-order operators by applying a Zolotarev rational filter to random
probe vectors (shifted resolvents solved with preconditioned GMRES),
compressing the result element by element, and solving a compact interior
penalty discontinuous Galerkin eigenproblem in the reduced space.  A small
Hartree-Fock-like self-consistency driver exercises the solver inside a
nonlinear loop.
"""

__version__ = "0.1.0"

from .errors import (
    ConstructionError,
    ConvergenceError,
    FilterApplicationError,
    GCALBError,
    UnsupportedFeatureError,
)
from .grids import Partition, UniformGrid, lgl_rule
from .hamiltonian import (
    GaussianWellSpec,
    Hamiltonian,
    build_gaussian_potential,
    estimate_spectrum_bounds,
)
from .zolotarev import FilterSpec, RationalFilter, apply_filter, build_filter
from .krylov import SolverConfig, gmres
from .eig import lobpcg, pseudospectral_lowest
from .basis import DGBasis, build_gcalb, build_lcalb, build_opt_basis
from .dg import (
    assemble_dg,
    estimate_penalties,
    relative_eigenvalue_error,
    solve_dg_eig,
)
from .scf import HFModelSpec, HFSystem, inner_scf, outer_scf

__all__ = [
    "__version__",
    "GCALBError",
    "ConstructionError",
    "ConvergenceError",
    "FilterApplicationError",
    "UnsupportedFeatureError",
    "UniformGrid",
    "Partition",
    "lgl_rule",
    "GaussianWellSpec",
    "Hamiltonian",
    "build_gaussian_potential",
    "estimate_spectrum_bounds",
    "FilterSpec",
    "RationalFilter",
    "build_filter",
    "apply_filter",
    "SolverConfig",
    "gmres",
    "lobpcg",
    "pseudospectral_lowest",
    "DGBasis",
    "build_gcalb",
    "build_lcalb",
    "build_opt_basis",
    "assemble_dg",
    "estimate_penalties",
    "solve_dg_eig",
    "relative_eigenvalue_error",
    "HFModelSpec",
    "HFSystem",
    "inner_scf",
    "outer_scf",
]
