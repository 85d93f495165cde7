"""Spin-polarized drift-diffusion coupled to Poisson and Landau-Lifshitz dynamics on 2D grids."""
from .decoupled import DiagState, diag_residual, solve_decoupled_constant_m, source_bound_check
from .diagnostics import CALIBRATED_C, entropy, entropy_inequality_monitor, norms
from .field_solver import FieldSolution, drift_velocity, solve_field, solve_poisson
from .kernels import BACKEND
from .llg import FrozenMagnetization, LLGStepper, exchange_energy, llg_rhs, llg_step
from .materials import MaterialParams, MobilityModel, caughey_thomas, certify_mobility, constant_saturated
from .mesh import Grid2D, read_snapshot, write_snapshot
from .spin_algebra import assemble_A, assemble_B, from_diag, projectors, to_diag
from .steady_state import Equilibrium, decay_analysis, solve_equilibrium
from .transport import SolverConfig, fixed_point_step, homogeneous_spin_solution, run_transient

__version__ = "0.1.0"
