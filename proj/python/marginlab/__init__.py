"""Jacobians, margin bounds and generalization bounds for small deep networks."""

from ._core import (
    InvalidInput,
    Network,
    __version__,
    analyze_margins,
    covering_number,
    empirical_margin,
    frobenius_norm,
    ge_bound_general,
    ge_bound_manifold,
    margin_bounds,
    mlp,
    sample_gmm,
    score,
    spectral_norm,
    train,
    verify,
)

__all__ = [
    "InvalidInput",
    "Network",
    "__version__",
    "analyze_margins",
    "covering_number",
    "empirical_margin",
    "frobenius_norm",
    "ge_bound_general",
    "ge_bound_manifold",
    "margin_bounds",
    "mlp",
    "sample_gmm",
    "score",
    "spectral_norm",
    "train",
    "verify",
]
