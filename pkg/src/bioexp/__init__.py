"""Error-exponent trade-offs for biometric secret-key authentication."""

from .probability import (
    Alphabet,
    ConditionalPmf,
    JointPmf,
    ModelError,
    Pmf,
    SourceModel,
    load_model,
)
from .rates import (
    FixedRates,
    HelperRateCap,
    PrivacyBudget,
    RateFunctionTable,
    privacy_feasible_variable,
    rate_functions_variable,
    rs_min_fixed,
    rw_star_fixed,
    rw_star_privacy_fixed,
)
from .gallager import (
    GallagerConfig,
    TradeoffPoint,
    e_fr_fixed_gallager,
    e_fr_fixed_mismatched,
    e_fr_variable_gallager,
    e_fr_variable_mismatched,
    f_of_w,
)
from .csiszar import CurveSpec, e_fa, e_fr_fixed_csiszar, e_fr_variable_csiszar, sweep_csiszar

__version__ = "0.1.0"

__all__ = [
    "Alphabet", "ConditionalPmf", "JointPmf", "ModelError", "Pmf", "SourceModel", "load_model",
    "FixedRates", "HelperRateCap", "PrivacyBudget", "RateFunctionTable",
    "privacy_feasible_variable", "rate_functions_variable", "rs_min_fixed", "rw_star_fixed",
    "rw_star_privacy_fixed",
    "GallagerConfig", "TradeoffPoint", "e_fr_fixed_gallager", "e_fr_fixed_mismatched",
    "e_fr_variable_gallager", "e_fr_variable_mismatched", "f_of_w",
    "CurveSpec", "e_fa", "e_fr_fixed_csiszar", "e_fr_variable_csiszar", "sweep_csiszar",
]
