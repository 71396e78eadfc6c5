"""Continuous-time tests for cumulative treatment effects on multi-resolution data."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    Alternative,
    AteTestResult,
    CtateError,
    Dataset,
    Diagnostic,
    EmpiricalInitialStates,
    MultiResTrajectory,
    PointMass,
    UniformGrid,
    validate_dataset,
)
from .estimator import AnalyticPath, EstimatorConfig, assemble, estimate_tau, estimate_variance, run_test, solve_beta  # noqa: E402
from .features import FeatureSpec, build_feature_map, integrate_psi  # noqa: E402
from .splines import SmoothingSpec, eval_drift, eval_state, fit_trajectory, make_knot_vector  # noqa: E402

__all__ = [
    "Alternative",
    "AnalyticPath",
    "AteTestResult",
    "CtateError",
    "Dataset",
    "Diagnostic",
    "EmpiricalInitialStates",
    "EstimatorConfig",
    "FeatureSpec",
    "MultiResTrajectory",
    "PointMass",
    "SmoothingSpec",
    "UniformGrid",
    "assemble",
    "build_feature_map",
    "estimate_tau",
    "estimate_variance",
    "eval_drift",
    "eval_state",
    "fit_trajectory",
    "integrate_psi",
    "make_knot_vector",
    "run_test",
    "solve_beta",
    "validate_dataset",
]
