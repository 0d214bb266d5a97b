"""Space-time Galerkin discretizations solved as structured matrix equations.

Heat problems become ``M U D + A U C = F`` and are solved by a rational
Krylov Galerkin method or by low-rank flexible GMRES; wave problems become
a three-term equation solved by GMRES with a two-term preconditioner.
"""

from .cn_baseline import Trajectory, crank_nicolson
from .errors import DefinitenessError, NumericError, SingularityError, STKError, UsageError
from .la_core import EigPair, LowRank, SPDFactor, lowrank_truncate, numerical_rank, spd_solve, sym_gen_eig
from .outer_krylov import GmresConfig, gmres, lr_fgmres, rksm_preconditioner, two_term_preconditioner
from .rhs_sep import SeparableRHS, builtin_rhs, eim_separate, project_rhs_heat, project_rhs_wave
from .rksm import RKSM, SolveReport, adaptive_next_shift, rksm_solve
from .sylvester import KronOp, apply_kron, heat_operator, residual_norm_factored, wave_operator

__version__ = "0.1.0"
