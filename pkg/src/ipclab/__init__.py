"""Invasion percolation on Galton-Watson trees: exact samplers, limit objects and checks."""

from .errors import (CapExceeded, ConfigError, ConvergenceError, DivergenceError, DomainError, EnvelopeError,
                     InsufficientData, IpclabError, MemoryBudgetError, QuadratureError, RegimeError)
from .fmw import jump_prob, quotient_factors, rescale, run_chain, run_chains, sample_w0
from .ipc import (BackboneDegree, DualOffspring, KCutRun, build_kcut, dual_offspring_pmf, forest_sizes, prim,
                  sample_backbone_degree, sample_dual_offspring, sample_forest, sample_subtree_progeny)
from .limits import (RegimeParams, alep_marginals, alep_path, cox_volume_sample, epdp_laplace, epdp_sample,
                     h_density, h_tail, stable_density, z_process_sample)
from .offspring import Constant, OffspringDist, ShiftedGeometric, Sibuya, Table, Zeta, parse_dist
from .rng import DEFAULT_SEED, stream
from .survival import Regime, SurvivalSolver
from .verify import TestReport, hk_pmf_oracle, run_suite

__version__ = "0.1.0"

__all__ = [
    "CapExceeded",
    "ConfigError",
    "ConvergenceError",
    "DivergenceError",
    "DomainError",
    "EnvelopeError",
    "InsufficientData",
    "IpclabError",
    "MemoryBudgetError",
    "QuadratureError",
    "RegimeError",
    "jump_prob",
    "quotient_factors",
    "rescale",
    "run_chain",
    "run_chains",
    "sample_w0",
    "BackboneDegree",
    "DualOffspring",
    "KCutRun",
    "build_kcut",
    "dual_offspring_pmf",
    "forest_sizes",
    "prim",
    "sample_backbone_degree",
    "sample_dual_offspring",
    "sample_forest",
    "sample_subtree_progeny",
    "RegimeParams",
    "alep_marginals",
    "alep_path",
    "cox_volume_sample",
    "epdp_laplace",
    "epdp_sample",
    "h_density",
    "h_tail",
    "stable_density",
    "z_process_sample",
    "Constant",
    "OffspringDist",
    "ShiftedGeometric",
    "Sibuya",
    "Table",
    "Zeta",
    "parse_dist",
    "DEFAULT_SEED",
    "stream",
    "Regime",
    "SurvivalSolver",
    "TestReport",
    "hk_pmf_oracle",
    "run_suite",
]
