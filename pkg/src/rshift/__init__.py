"""Random-shift tests for dependence among points, marks and covariates."""

from .errors import RShiftError
from .geometry import (MarkedPointPattern, PolygonWindow, RectWindow, crop_shift,
                       torus_shift, torus_wrap)
from .randfield import (CorrelationModel, CovariateField, FieldSpec, Grid,
                        eval_field, simulate_grf)
from .procgen import ModelSpec, generate_model, simulate_cox, simulate_poisson
from .shifttest import (ShiftDistribution, TestConfig, TestResult, bonferroni_combine,
                        global_envelope_test, mc_pvalue, multicovariate_pc_test,
                        multitype_pmc_test, run_shift_test, schlather_test)
from .experiments import StudyConfig, rejection_rate, run_study

__version__ = "0.1.0"

__all__ = [
    "RShiftError", "MarkedPointPattern", "PolygonWindow", "RectWindow", "crop_shift",
    "torus_shift", "torus_wrap", "CorrelationModel", "CovariateField", "FieldSpec",
    "Grid", "eval_field", "simulate_grf", "ModelSpec", "generate_model",
    "simulate_cox", "simulate_poisson", "ShiftDistribution", "TestConfig",
    "TestResult", "bonferroni_combine", "global_envelope_test", "mc_pvalue",
    "multicovariate_pc_test", "multitype_pmc_test", "run_shift_test",
    "schlather_test", "StudyConfig", "rejection_rate", "run_study",
]
