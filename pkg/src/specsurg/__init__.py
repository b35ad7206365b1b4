"""Half-line matrix Schrodinger scattering with bound-state surgery.

Modules
-------
matops
    Pseudoinverses, projections and hermitian matrix functions.
potential
    Potentials, boundary conditions, problems and their JSON form.
solver
    Jost and regular solutions, Jost and scattering matrices.
spectra
    Bound states with their projections and normalization matrices.
surgery
    Removing, adding, decreasing and increasing bound states.
verify
    Golden reference values, invariant batteries and Parseval checks.
cli
    The ``specsurg`` command.
"""

from .potential import BoundaryCondition, Potential, Problem, load_problem, save_problem
from .solver import jost_matrices, jost_matrix, scattering_matrices, scattering_matrix
from .spectra import BoundState, Spectrum, find_bound_states
from .surgery import SurgeryError, SurgeryPlan, SurgeryResult, apply_plan

__version__ = "0.1.0"

__all__ = [
    "BoundState",
    "BoundaryCondition",
    "Potential",
    "Problem",
    "Spectrum",
    "SurgeryError",
    "SurgeryPlan",
    "SurgeryResult",
    "apply_plan",
    "find_bound_states",
    "jost_matrices",
    "jost_matrix",
    "load_problem",
    "save_problem",
    "scattering_matrices",
    "scattering_matrix",
]
