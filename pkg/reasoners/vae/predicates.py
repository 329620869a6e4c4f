"""
Closed-form predicates of the logic VAE, all evaluated per sample.

``rec_predicate`` is the mean squared reconstruction error over pixels and
channels. ``klu`` is the KL divergence of a code to the standard normal prior
and ``klt`` the KL divergence between two codes, both averaged over a set of
latent dimensions.
"""

from typing import Sequence

import torch

from ..exceptions import DomainError, ShapeError
from .model import LatentCode


def rec_predicate(x: torch.Tensor, xhat: torch.Tensor) -> torch.Tensor:
    if x.shape != xhat.shape:
        raise ShapeError(
            f"Image shapes differ: {tuple(x.shape)} and {tuple(xhat.shape)}"
        )
    return ((x - xhat) ** 2).flatten(start_dim=1).mean(dim=1)


def _check_dims(dims: Sequence[int], size: int, allow_empty: bool = False) -> list[int]:
    dims = list(dims)
    if not dims and not allow_empty:
        raise DomainError("Expected a non-empty set of latent dimensions")
    if out_of_range := [dim for dim in dims if not 0 <= dim < size]:
        raise DomainError(
            f"Latent dimensions {out_of_range} are outside a latent space of size {size}"
        )
    return dims


def complement_dims(dims: Sequence[int], size: int) -> list[int]:
    excluded = set(_check_dims(dims, size, allow_empty=True))
    return [dim for dim in range(size) if dim not in excluded]


def project(code: LatentCode, dims: Sequence[int]) -> LatentCode:
    dims = _check_dims(dims, code.size, allow_empty=True)
    return LatentCode(code.mu[..., dims], code.logvar[..., dims])


def klu(code: LatentCode, dims: Sequence[int]) -> torch.Tensor:
    selected = project(code, _check_dims(dims, code.size))
    mu, lg = selected
    return (-lg / 2 + (torch.exp(lg) + mu**2) / 2 - 0.5).mean(dim=-1)


def klt(a: LatentCode, b: LatentCode, dims: Sequence[int]) -> torch.Tensor:
    if a.mu.shape != b.mu.shape:
        raise ShapeError(
            f"Codes of shape {tuple(a.mu.shape)} and {tuple(b.mu.shape)} cannot be compared"
        )
    dims = _check_dims(dims, a.size)
    mu, lg = project(a, dims)
    mu_other, lg_other = project(b, dims)
    return (
        (lg_other - lg) / 2
        + (torch.exp(lg) + (mu - mu_other) ** 2) / (2 * torch.exp(lg_other))
        - 0.5
    ).mean(dim=-1)
