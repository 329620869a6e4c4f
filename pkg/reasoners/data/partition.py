import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterator, Sequence, TypeAlias

import numpy as np
import torch

from ..exceptions import ConfigError, ContractError, DomainError, OutOfRangeError, ValidationError
from ..models.config_models import FactorSpec
from ..vae.model import images_to_tensor

logger = logging.getLogger(__name__)


PartitionKey: TypeAlias = tuple[int, ...]
PartitionPair: TypeAlias = tuple[PartitionKey, PartitionKey]


@dataclass(frozen=True)
class Sample:
    sample_id: str
    # (H, W, C) float array in [0, 1]
    image: np.ndarray = field(repr=False)
    # factor name -> value id
    assignment: dict[str, int]
    split: str = "train"
    # continuous measurements the value ids were discretized from
    measurements: dict[str, float] = field(default_factory=dict)

    def key(self, factors: Sequence[FactorSpec]) -> PartitionKey:
        return tuple(self.assignment[factor.name] for factor in factors)


@dataclass
class PartitionedDataset:
    factors: list[FactorSpec]
    partitions: dict[PartitionKey, list[Sample]]

    @property
    def keys(self) -> list[PartitionKey]:
        return list(self.partitions)

    def label(self, key: PartitionKey) -> str:
        return f"P{self.keys.index(key) + 1}"

    def key_for_label(self, label: str) -> PartitionKey:
        for key in self.keys:
            if self.label(key) == label:
                return key
        raise ConfigError(f"Unknown partition label {label}, known: {[self.label(key) for key in self.keys]}")

    def factor_index(self, name: str) -> int:
        for index, factor in enumerate(self.factors):
            if factor.name == name:
                return index
        raise ConfigError(f"Unknown factor {name}")

    def samples(self) -> list[Sample]:
        return [sample for members in self.partitions.values() for sample in members]

    def __len__(self) -> int:
        return sum(len(members) for members in self.partitions.values())


def partition_order(key: PartitionKey) -> PartitionKey:
    # first factor varies fastest
    return tuple(reversed(key))


def build_partitions(
    samples: Sequence[Sample], factors: Sequence[FactorSpec]
) -> PartitionedDataset:
    observed = {factor.name: set(factor.observed_ids) for factor in factors}
    grouped: dict[PartitionKey, list[Sample]] = {}
    for sample in samples:
        for factor in factors:
            if factor.name not in sample.assignment:
                raise ValidationError(
                    f"Sample {sample.sample_id} has no value for factor {factor.name}"
                )
            if sample.assignment[factor.name] not in observed[factor.name]:
                raise ValidationError(
                    f"Sample {sample.sample_id} uses value id {sample.assignment[factor.name]} "
                    f"which is not an observed value of factor {factor.name}"
                )
        grouped.setdefault(sample.key(factors), []).append(sample)

    partitions = {key: grouped[key] for key in sorted(grouped, key=partition_order)}
    logger.debug(
        f"Built {len(partitions)} partitions of sizes {[len(members) for members in partitions.values()]}"
    )
    return PartitionedDataset(factors=list(factors), partitions=partitions)


def pair_set(ds: PartitionedDataset, factor: str) -> list[PartitionPair]:
    """Pairs of partitions that differ only in ``factor``, in partition order."""
    index = ds.factor_index(factor)
    pairs = []
    for first, second in combinations(ds.keys, 2):
        differing = [i for i, (a, b) in enumerate(zip(first, second)) if a != b]
        if differing == [index]:
            pairs.append((first, second))
    check_pairs(pairs, index)
    return pairs


def check_pairs(pairs: Sequence[PartitionPair], index: int) -> None:
    for first, second in pairs:
        differing = [i for i, (a, b) in enumerate(zip(first, second)) if a != b]
        if differing != [index]:
            raise ContractError(
                f"Partitions {first} and {second} must differ exactly in factor position {index}"
            )


def discretize_factor(value: float, edges: Sequence[float]) -> int:
    """Id of the half-open bin ``[e_i, e_i+1)`` holding ``value``, the last bin is closed."""
    if len(edges) < 2:
        raise DomainError(f"Need at least two bin edges, got {len(edges)}")
    if any(low >= high for low, high in zip(edges, edges[1:])):
        raise DomainError(f"Bin edges must be strictly increasing: {list(edges)}")
    if not edges[0] <= value <= edges[-1]:
        raise OutOfRangeError(f"Value {value} is outside [{edges[0]}, {edges[-1]}]")
    if value == edges[-1]:
        return len(edges) - 2
    return int(np.searchsorted(edges, value, side="right")) - 1


@dataclass
class TupleBatch:
    """Aligned sub-batches, row ``i`` of every partition forms one tuple."""

    images: dict[PartitionKey, torch.Tensor]
    sample_ids: dict[PartitionKey, list[str]]

    @property
    def keys(self) -> list[PartitionKey]:
        return list(self.images)

    @property
    def size(self) -> int:
        return len(next(iter(self.images.values())))


def tuples_per_epoch(ds: PartitionedDataset, batch_size: int) -> int:
    smallest = min(len(members) for members in ds.partitions.values())
    if smallest < batch_size:
        raise ConfigError(
            f"Batch size {batch_size} exceeds the smallest partition of {smallest} samples"
        )
    return smallest // batch_size


def batch_tuples(
    ds: PartitionedDataset,
    batch_size: int,
    seed: int | np.random.SeedSequence,
    dtype: torch.dtype = torch.float32,
) -> Iterator[TupleBatch]:
    """One epoch of tuple batches, every partition shuffled independently."""
    count = tuples_per_epoch(ds, batch_size)
    rng = np.random.default_rng(seed)
    orders = {key: rng.permutation(len(members)) for key, members in ds.partitions.items()}
    for step in range(count):
        images, ids = {}, {}
        for key, members in ds.partitions.items():
            chosen = [members[i] for i in orders[key][step * batch_size : (step + 1) * batch_size]]
            images[key] = images_to_tensor(np.stack([sample.image for sample in chosen]), dtype)
            ids[key] = [sample.sample_id for sample in chosen]
        yield TupleBatch(images=images, sample_ids=ids)
