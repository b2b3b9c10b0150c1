"""Post-AMP landscape analysis for Z2 synchronization.

Modules
-------
model            spiked GOE instances with optional side information
state_evolution  scalar recursion, fixed points, covariance of AMP iterates
amp              Z2 and generic AMP with Onsager correction
tap              TAP free energy, Hessian, convexity probe, stationary point
sf               conditional Gaussian comparison objects and objectives
maxmin           scalar max-min convexity certificate
harness          configs, pipelines and reports (CLI in ``postamp.cli``)
"""
from .model import GOE_CONVENTION, ModelInstance, ModelParams, Variant, make_instance, sample_goe
from .state_evolution import (
    FixedPointConstants,
    RegimeError,
    SeCurve,
    run_recursion,
    sample_se,
    solve_fixed_point,
)
from .amp import AmpTrace, empirical_vs_se, run_amp_generic, run_amp_z2
from .tap import TapContext, convexity_probe, find_stationary_point, free_energy, gradient, lambda_min
from .sf import build_conditioning, compare_objectives, verify_conditional_identity
from .maxmin import MaxMinQuery, ScalarParams, margin_search, maxmin_report, schur_certificate
from .harness import ExperimentConfig, RunReport

__version__ = "0.1.0"

__all__ = [
    "GOE_CONVENTION",
    "AmpTrace",
    "ExperimentConfig",
    "FixedPointConstants",
    "MaxMinQuery",
    "ModelInstance",
    "ModelParams",
    "RegimeError",
    "RunReport",
    "ScalarParams",
    "SeCurve",
    "TapContext",
    "Variant",
    "build_conditioning",
    "compare_objectives",
    "convexity_probe",
    "empirical_vs_se",
    "find_stationary_point",
    "free_energy",
    "gradient",
    "lambda_min",
    "make_instance",
    "margin_search",
    "maxmin_report",
    "run_amp_generic",
    "run_amp_z2",
    "run_recursion",
    "sample_goe",
    "sample_se",
    "schur_certificate",
    "solve_fixed_point",
    "verify_conditional_identity",
]
