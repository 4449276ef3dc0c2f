from src.extrapolation_discrete import DiscreteJoint, exact_rer_discrete, rer_upper_bound_discrete
from src.extrapolation_gaussian import (
    BlockGaussianSpec,
    CorrelationSpec,
    exact_kappa,
    rer_bound_pairwise,
    rer_bound_two_block,
)

__all__ = [
    "DiscreteJoint",
    "exact_rer_discrete",
    "rer_upper_bound_discrete",
    "CorrelationSpec",
    "BlockGaussianSpec",
    "rer_bound_pairwise",
    "rer_bound_two_block",
    "exact_kappa",
]
