"""Numerical toolkit for linear dynamics on time scales.

Time-scale windows with jump operators and delta integration; renormalization
of a scale onto the real line; embedding of time-scale linear systems into
ODEs; exponential dichotomy estimation; bounded solutions of forced
hyperbolic systems pulled back to the scale.
"""

from .bounded import (BoundedSolutionResult, LinearityReport,
                      operator_linearity_check, pull_back_and_certify,
                      solve_bounded_profile, solve_bounded_single)
from .dichotomy import (DichotomyOptions, DichotomyProfile, DichotomySegment,
                        FamilyReport, ParameterFamily, build_profile,
                        check_family, estimate_dichotomy, subspace_angle,
                        threshold_T, transversality_angle)
from .embedding import (EmbeddedSystem, EmbeddingReport, embed, pull_back,
                        verify_embedding)
from .errors import (BranchError, CertificationError, ConditionError,
                     DomainError, NotHyperbolicError, RegressivityError,
                     SpecInputError)
from .linear import (RegressivityReport, ScaleTrajectory, StabilityOptions,
                     StabilityVerdict, TimeScaleLinearSystem, TransitionMatrix,
                     check_regressive, classify_stability, generalized_exp,
                     solve_forced, transition_matrix)
from .matfuncs import log_one_plus, log_ratio, phi_fun
from .renormalization import (RenormalizationMap, build_renormalization,
                              renormalized_scale)
from .timescale import (GridFunction, TimeScaleWindow, delta_integral,
                        graininess, hausdorff_distance, sigma)

__version__ = "0.1.0"

__all__ = [
    "TimeScaleWindow", "GridFunction", "sigma", "graininess",
    "delta_integral", "hausdorff_distance",
    "RenormalizationMap", "build_renormalization", "renormalized_scale",
    "log_one_plus", "log_ratio", "phi_fun",
    "TimeScaleLinearSystem", "TransitionMatrix", "RegressivityReport",
    "ScaleTrajectory", "StabilityOptions", "StabilityVerdict",
    "check_regressive", "classify_stability", "generalized_exp",
    "solve_forced", "transition_matrix",
    "EmbeddedSystem", "EmbeddingReport", "embed", "pull_back",
    "verify_embedding",
    "DichotomyOptions", "DichotomyProfile", "DichotomySegment",
    "ParameterFamily", "FamilyReport", "build_profile", "check_family",
    "estimate_dichotomy", "subspace_angle", "threshold_T",
    "transversality_angle",
    "BoundedSolutionResult", "LinearityReport", "operator_linearity_check",
    "pull_back_and_certify", "solve_bounded_profile", "solve_bounded_single",
    "BranchError", "CertificationError", "ConditionError", "DomainError",
    "NotHyperbolicError", "RegressivityError", "SpecInputError",
]
