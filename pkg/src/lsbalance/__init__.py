"""Space-time least-squares finite elements for scalar balance laws."""
from .mesh import BoundarySplit, BoundaryTag, GeometryError, Mesh, build_structured, refine_uniform, tag_boundary
from .problems import ProblemSpec, burgers_flux, burgers_flux_deriv, example_spec, manufactured_spec
from .spaces import Constraint, FEField, FESpace, interpolate, make_space
from .forms import Discretization, assemble_gn, assemble_ld, eval_Fhat
from .exact import ExactSolution, exact_solution
from .solver import GNOptions, SolveReport, StalledLineSearch, nested_iterate, solve_level

__all__ = [
    "BoundarySplit", "BoundaryTag", "GeometryError", "Mesh", "build_structured", "refine_uniform",
    "tag_boundary", "ProblemSpec", "burgers_flux", "burgers_flux_deriv", "example_spec",
    "manufactured_spec", "Constraint", "FEField", "FESpace", "interpolate", "make_space",
    "Discretization", "assemble_gn", "assemble_ld", "eval_Fhat", "ExactSolution", "exact_solution",
    "GNOptions", "SolveReport", "StalledLineSearch", "nested_iterate", "solve_level",
]
