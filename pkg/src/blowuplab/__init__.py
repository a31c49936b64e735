"""Explosion analysis for stochastic differential equations.

Osgood and Feller tests, Lyapunov-function conditions, adaptive Monte Carlo
and a combined verdict.
"""
__version__ = "0.1.0"

from .errors import BlowupError, ConfigError  # noqa: E402
from .model import (LyapunovCandidate, RegionSpec, SdeModel, Verdict, load_model,  # noqa: E402
                    load_model_file)
from .feller import classify_feller, osgood_test, v_function  # noqa: E402
from .lyapunov import (boundary_avoidance_check, check_as_explosion, check_nonexplosion,  # noqa: E402
                       check_positive_explosion, chow_explosion_condition,
                       chow_nonexplosion_condition, generator_apply)
from .mc import (SimConfig, boundary_hit_prob, estimate_explosion_prob, martingale_check,  # noqa: E402
                 simulate_path)
from .report import EvidenceReport, classify, combine  # noqa: E402

__all__ = [
    "BlowupError", "ConfigError", "LyapunovCandidate", "RegionSpec", "SdeModel", "Verdict",
    "load_model", "load_model_file", "classify_feller", "osgood_test", "v_function",
    "boundary_avoidance_check", "check_as_explosion", "check_nonexplosion",
    "check_positive_explosion", "chow_explosion_condition", "chow_nonexplosion_condition",
    "generator_apply", "SimConfig", "boundary_hit_prob", "estimate_explosion_prob",
    "martingale_check", "simulate_path", "EvidenceReport", "classify", "combine",
]
