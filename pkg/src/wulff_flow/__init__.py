"""Evolving surface finite elements for anisotropic mean curvature flow ``beta(nu) V = -H_gamma``."""
from .anisotropy import (AnisotropyDensity, AsymmetricPower, BGNCombination, ConstantOne,
                         CustomDensity, CustomKinetic, Ellipsoidal, InverseGamma, Isotropic,
                         REGISTERED_KEYS, cubic, density_from_key, dual_evaluate,
                         frank_and_wulff, hexagonal, kinetic_from_key, l1_regularized,
                         verify_density)
from .assembly import assemble_mass, assemble_rhs, assemble_stiffness, assemble_system
from .bdf import bdf_coefficients, extrapolate, run_flow, step
from .errors import WulffFlowError
from .exact import SelfSimilarEllipsoid, adams_bashforth_coefficients, reference_trajectories
from .mesh import SurfaceMesh, generate_levelset_mesh, load_off
from .solver import SolverConfig, solve_block, solve_spd

__version__ = "0.1.0"
