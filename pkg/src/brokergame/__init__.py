"""Closed-form Nash equilibrium between a broker and an informed client.

Solvers for the matrix Riccati feedback gain and affine offset,
independent FBSDE verification oracles (Picard fixed point, directional
derivatives), and a reproducible Monte Carlo engine for the equilibrium
paths.
"""
from .config import ConfigError, ExperimentConfig
from .model import (BoundReport, ModelParams, SystemMatrices,
                    ValidationReport, assemble_matrices, bound_from_matrices,
                    existence_bound, spectral_norm, validate_params)
from .offset import (FundamentalSolution, GridMismatch, NotOnGrid,
                     OffsetGrid, build_fundamental_solution, ell_quadrature,
                     read_offset_csv, solve_offset_odes)
from .oracle import (GateauxConfig, GateauxEstimate, NoConvergence,
                     PicardConfig, PicardResult, feedback_trajectory,
                     gateaux_broker, gateaux_informed, picard_solve,
                     run_gateaux_checks)
from .riccati import (BlowUp, ConditionReport, LinearizationPair,
                      RiccatiGrid, SingularR, TimeGrid, read_riccati_csv,
                      riccati_residual, solve_riccati, solve_riccati_direct,
                      solve_riccati_linearized, verify_freiling_conditions)
from .simulate import (MonteCarloReport, PathBundle, evaluate_performance,
                       quantile_bands, simulate_equilibrium)

__version__ = "0.1.0"
