"""Measuring verbatim memorization in masked-diffusion and autoregressive
language models: exact desk-scale models, trajectory estimators, brute-force
oracles, PII auditing, and a wire protocol for external models.
"""

from .core import (
    MaskPattern,
    Partition,
    RecoveryOrder,
    TimeGrid,
    TokenSeq,
    VocabSpec,
    default_vocab,
    hamming,
    is_refinement,
    make_linear_grid,
    tokens_to_recover,
)
from .engine import TrajectoryRecord, arm_generate, forward_mask, reverse_generate
from .extraction import (
    BudgetResult,
    HammingStats,
    PzEstimate,
    discoverable_count,
    empirical_hit_rate,
    eps_hit_rate,
    estimate_pz,
    gaussian_eps_approx,
    hamming_stats,
    pz_from_trajectory,
    required_queries,
)
from .samplers import SamplerConfig, TokenRule
from .toymodel import Corpus, PosteriorModel, fit, load_corpus

__version__ = "0.1.0"

__all__ = [
    "BudgetResult",
    "Corpus",
    "HammingStats",
    "MaskPattern",
    "Partition",
    "PosteriorModel",
    "PzEstimate",
    "RecoveryOrder",
    "SamplerConfig",
    "TimeGrid",
    "TokenRule",
    "TokenSeq",
    "TrajectoryRecord",
    "VocabSpec",
    "arm_generate",
    "default_vocab",
    "discoverable_count",
    "empirical_hit_rate",
    "eps_hit_rate",
    "estimate_pz",
    "fit",
    "forward_mask",
    "gaussian_eps_approx",
    "hamming",
    "hamming_stats",
    "is_refinement",
    "load_corpus",
    "make_linear_grid",
    "pz_from_trajectory",
    "required_queries",
    "reverse_generate",
    "tokens_to_recover",
]
