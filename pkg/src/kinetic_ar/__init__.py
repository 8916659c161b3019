"""Adaptive-rank semi-Lagrangian solver for the 1D1V BGK equation."""

from .grid import (ConfigError, DirkTableau, GridError, PhaseGrid, SolverConfig,
                   backward_euler, compute_dt, get_tableau, make_grid, sa_dirk3,
                   sa_dirk3_so)
from .kinetic import (DistributionView, MomentField, PositivityError, collision_oracle,
                      maxwellian, moments_from_lowrank, sl_oracle, weno5_interpolate)
from .lowrank import (ACAError, CurFactors, DenseOracle, EntryOracle, FunctionOracle,
                      RankDiagnostics, SvdMatrix, aca_decompose, add_lowrank, compress,
                      evaluate_entries, load_svd, save_svd, svd_truncate)
from .macro import (FluxClosure, JfnkReport, NewtonError, assemble_residual,
                    half_moments_maxwellian, half_sums_lowrank, jfnk_solve,
                    weno_flux_reconstruct)
from .lomac import build_closure, correct
from .integrator import (Boundary, KineticState, SimulationResult, StepDiagnostics,
                         StepError, StepRecord, run, step)

__version__ = "0.1.0"
