"""Identity testing and warm-start sampling for mixtures of well-mixing distributions."""

from .core_dist import (
    DenseDistribution,
    MixtureModel,
    chain_rule_decompose,
    kl_divergence,
    local_entropy_functional,
    phi_entropy,
)
from .errors import MixGlauberError
from .identity import AlgorithmParams, product_set_kl_test
from .oracles import GlauberOracleHandle, OracleHandle
from .testers import h2_test, kl_test

__all__ = [
    "AlgorithmParams",
    "DenseDistribution",
    "GlauberOracleHandle",
    "MixGlauberError",
    "MixtureModel",
    "OracleHandle",
    "chain_rule_decompose",
    "h2_test",
    "kl_divergence",
    "kl_test",
    "local_entropy_functional",
    "phi_entropy",
    "product_set_kl_test",
]
