"""
Gradient-constrained minimization (elasto-plastic torsion type) with
Crouzeix-Raviart / Raviart-Thomas finite elements, a dual gradient-flow
solver and primal-dual gap error identities.
"""

from .errors import (DataError, FeasibilityError, GeometryError, GradConstraintError,
                     MeshFormatError, NonConvergenceError, ParameterError, SolverError)
from .mesh import Mesh, SideLabel, build_disk_mesh, compute_geometry, load_mesh, quadrature_rule, save_mesh
from .spaces import CRFunction, ProblemData, RTFunction, cr_interpolate, project_data, rt_interpolate
from .dual_solver import FlowParams, FlowReport, initial_iterate, newton_solve, run_flow
from .experiments import ManufacturedCase, StudyConfig, run_aposteriori_study, run_apriori_study

__version__ = "0.1.0"
