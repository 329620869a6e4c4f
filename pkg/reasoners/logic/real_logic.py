"""
Product real logic over tensors of truth values.

Connectives act elementwise on tensors holding truth degrees in [0, 1];
quantifiers reduce a tensor to a single truth degree with generalized means.
Everything here is built from differentiable torch primitives, so the
results can be used directly as training objectives.
"""

import logging
from functools import reduce
from typing import Sequence

import torch
from pydantic import BaseModel, ConfigDict, Field

from ..exceptions import DomainError, NumericError, ShapeError

logger = logging.getLogger(__name__)

NORMALIZE_EPS = 1e-8


class AggregatorConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    p: float = Field(
        default=2.0,
        ge=1.0,
        description="Exponent of the generalized means used by the quantifiers.",
        examples=[2.0],
    )


DEFAULT_AGGREGATOR = AggregatorConfig()


def check_truth(*values: torch.Tensor) -> None:
    """Raise if any tensor holds values outside [0, 1]."""
    for value in values:
        if value.numel() and not bool(((value >= 0.0) & (value <= 1.0)).all()):
            raise DomainError(
                f"Expected truth values in [0, 1], got range [{value.min().item()}, {value.max().item()}]"
            )


def _check_same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(
            f"Connective operands must have the same shape, got {tuple(a.shape)} and {tuple(b.shape)}"
        )


def negate(a: torch.Tensor) -> torch.Tensor:
    return 1.0 - a


def tnorm(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _check_same_shape(a, b)
    return a * b


def tconorm(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _check_same_shape(a, b)
    return a + b - a * b


def implies(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Reichenbach implication."""
    _check_same_shape(a, b)
    return 1.0 - a + a * b


def conjunction(values: Sequence[torch.Tensor]) -> torch.Tensor:
    """Product t-norm folded over a non-empty set of conjuncts."""
    if not values:
        raise DomainError("Conjunction needs at least one conjunct")
    return reduce(tnorm, values)


def _safe_root(mean: torch.Tensor, p: float) -> torch.Tensor:
    # mean ** (1/p) has an infinite derivative at 0, route zeros around it
    positive = mean > 0
    safe = torch.where(positive, mean, torch.ones_like(mean))
    return torch.where(positive, safe ** (1.0 / p), torch.zeros_like(mean))


def _check_not_empty(a: torch.Tensor, quantifier: str) -> None:
    if a.numel() == 0:
        raise DomainError(f"Cannot apply {quantifier} to an empty tensor")


def exists(
    a: torch.Tensor,
    cfg: AggregatorConfig = DEFAULT_AGGREGATOR,
    dim: int | None = None,
) -> torch.Tensor:
    """Generalized mean, ``((1/n) sum a_i^p)^(1/p)``."""
    _check_not_empty(a, "exists")
    powered = a**cfg.p
    mean = powered.mean() if dim is None else powered.mean(dim=dim)
    return _safe_root(mean, cfg.p)


def forall(
    a: torch.Tensor,
    cfg: AggregatorConfig = DEFAULT_AGGREGATOR,
    dim: int | None = None,
) -> torch.Tensor:
    """Generalized mean w.r.t. the error, ``1 - ((1/n) sum (1 - a_i)^p)^(1/p)``."""
    _check_not_empty(a, "forall")
    powered = (1.0 - a) ** cfg.p
    mean = powered.mean() if dim is None else powered.mean(dim=dim)
    return 1.0 - _safe_root(mean, cfg.p)


def batch_normalize(
    raw: torch.Tensor, eps: float = NORMALIZE_EPS, frozen_stats: bool = False
) -> torch.Tensor:
    """
    Min-max rescale a batch of non-negative predicate outputs into [0, 1].

    A batch whose spread is below ``eps`` maps to all zeros, i.e. a fully
    satisfied predicate that contributes no gradient. With ``frozen_stats``
    the batch minimum and spread are constants for the backward pass, so every
    value gets the gradient ``1 / (spread + eps)`` and none can lower the
    others by moving the extremes.
    """
    if raw.numel() == 0:
        raise DomainError("Cannot normalize an empty batch")
    if not bool(torch.isfinite(raw).all()):
        raise NumericError("Non-finite predicate value in batch", location="batch_normalize")

    low = raw.min()
    spread = raw.max() - low
    if spread.item() < eps:
        logger.debug("Degenerate batch of %d values, normalizing to zeros", raw.numel())
        return raw * 0.0
    if frozen_stats:
        low, spread = low.detach(), spread.detach()
    return (raw - low) / (spread + eps)
