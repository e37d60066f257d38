"""Genuine multiparticle entanglement certified from separable two-body marginals.

Witness and state semidefinite programs, a see-saw search alternating them,
and analysis tools (noise tolerances, marginal audits, uniqueness ranges).
"""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .analysis import compatibility_range, localizable_sweep, marginal_audit, noise_tolerance
from .iterate import SearchConfig, run_seesaw
from .operators import DensityOperator, QuditRegister, mix_with_white_noise, partial_trace, partial_transpose
from .statesearch import ConstraintSet, min_state_for_witness
from .witness import MarginalPattern, MarginalSet, min_witness_value, validate_witness

__all__ = [
    "ConstraintSet",
    "DensityOperator",
    "MarginalPattern",
    "MarginalSet",
    "QuditRegister",
    "SearchConfig",
    "compatibility_range",
    "localizable_sweep",
    "marginal_audit",
    "min_state_for_witness",
    "min_witness_value",
    "mix_with_white_noise",
    "noise_tolerance",
    "partial_trace",
    "partial_transpose",
    "run_seesaw",
    "validate_witness",
]
