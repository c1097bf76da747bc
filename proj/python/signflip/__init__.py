"""Sign-flip score tests for many GLMs fitted in parallel, with FWER control."""

from ._core import (
    FLIP_GENERATOR,
    DegenerateVariance,
    Error,
    InvalidArgument,
    NonConvergence,
    ParseError,
    SeparationDetected,
    SingularCovariance,
    SingularDesign,
    TooLarge,
    TooManyHypotheses,
    analyze,
    bonferroni_holm,
    closed_testing,
    competitor_tests,
    fit_null,
    flip_covariance,
    flip_matrix,
    global_test,
    mahalanobis_global,
    make_exhaustive,
    make_plan,
    maxt,
    perm_pvalue,
    set_thread_count,
    simulate,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
