"""Wasserstein-regularised policy gradients.

Entropic optimal transport solvers combined with score-function policy
gradients, for attracting a policy's trajectory-embedding distribution toward
a target measure or repelling two policies from each other.
"""

from wassrl.measures import CostKind, DiscreteMeasure, Coupling, ground_cost, build_cost_matrix
from wassrl.entropic_ot import Convention, OtConfig, SinkhornResult, sinkhorn, exact_emd

__version__ = "0.1.0"

__all__ = [
    "CostKind",
    "DiscreteMeasure",
    "Coupling",
    "ground_cost",
    "build_cost_matrix",
    "Convention",
    "OtConfig",
    "SinkhornResult",
    "sinkhorn",
    "exact_emd",
]
