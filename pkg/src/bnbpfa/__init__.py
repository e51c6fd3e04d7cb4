"""Poisson factor analysis under the beta-negative binomial process and related priors."""

from .bnb_process import BnbAtoms, BnbHyper, draw_eps_bp, eps_levy_mass, new_dish_rate, simulate_msibp
from .errors import (
    BnbPfaError,
    ConfigError,
    DataError,
    DomainError,
    ModelDegeneracyError,
    NumericError,
    ParseError,
)
from .evaluation import factor_report, perplexity, split_counts, synthetic_corpus
from .pfa_model import CountMatrix, FactorState, LatentAllocation, allocate_counts, poisson_loglik
from .samplers import VARIANTS, ChainConfig, HyperParams, run_chain
from .special_math import RngStream

__version__ = "0.1.0"

__all__ = [
    "BnbAtoms",
    "BnbHyper",
    "BnbPfaError",
    "ChainConfig",
    "ConfigError",
    "CountMatrix",
    "DataError",
    "DomainError",
    "FactorState",
    "HyperParams",
    "LatentAllocation",
    "ModelDegeneracyError",
    "NumericError",
    "ParseError",
    "RngStream",
    "VARIANTS",
    "allocate_counts",
    "draw_eps_bp",
    "eps_levy_mass",
    "factor_report",
    "new_dish_rate",
    "perplexity",
    "poisson_loglik",
    "run_chain",
    "simulate_msibp",
    "split_counts",
    "synthetic_corpus",
]
