"""Excited random walks on the integers and their branching-process and
diffusion descriptions: simulation, tail-exponent estimation and checks."""

__version__ = "0.1.0"

from ._backend import BACKEND
from .branching import (BpBatch, BpPath, bp_batch, conditioned_bp_batch, conditioned_tails,
                        estimate_h, martingale_check, offspring_moments, overshoot_decay,
                        simulate_bp, simulate_conditioned_bp, simulate_modified_bp)
from .cookies import (ConfigError, CookieLaw, SiteStack, delta_of, equal_strength_law, fair_law,
                      load_law, mirror, mixture)
from .diffusion import (estimate_ab, euler_path, exact_bessel_marginal, sample_functionals,
                        sample_marginal, scaling_check)
from .experiments import PhaseRow, censored_mean_R, phase_sweep, return_times
from .stats import (SurvivalTable, TailFit, build_survival, concentration_bound_check, fit_tail,
                    ks_two_sample, marginal_distance_bp_vs_sde)
from .walk import (ExcursionOutcome, WalkConfig, estimate_escape, run_excursion, run_return,
                   simulate_walks)

__all__ = [
    "BACKEND", "BpBatch", "BpPath", "ConfigError", "CookieLaw", "ExcursionOutcome", "PhaseRow",
    "SiteStack", "SurvivalTable", "TailFit", "WalkConfig", "bp_batch", "build_survival",
    "censored_mean_R", "concentration_bound_check", "conditioned_bp_batch", "conditioned_tails",
    "delta_of", "equal_strength_law", "estimate_ab", "estimate_escape", "estimate_h",
    "euler_path", "exact_bessel_marginal", "fair_law", "fit_tail", "ks_two_sample", "load_law",
    "marginal_distance_bp_vs_sde", "martingale_check", "mirror", "mixture", "offspring_moments",
    "overshoot_decay", "phase_sweep", "return_times", "run_excursion", "run_return",
    "sample_functionals", "sample_marginal", "scaling_check", "simulate_bp",
    "simulate_conditioned_bp", "simulate_modified_bp", "simulate_walks",
]
