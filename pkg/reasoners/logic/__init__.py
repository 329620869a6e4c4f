from .real_logic import (
    AggregatorConfig,
    batch_normalize,
    conjunction,
    exists,
    forall,
    implies,
    negate,
    tconorm,
    tnorm,
)

__all__ = [
    "AggregatorConfig",
    "batch_normalize",
    "conjunction",
    "exists",
    "forall",
    "implies",
    "negate",
    "tconorm",
    "tnorm",
]
