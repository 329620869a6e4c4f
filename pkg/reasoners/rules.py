"""
The four rule families of the weakly-disentangled logic VAE.

* ``recloss``: every sample of every partition is reconstructed, aggregated
  with ``forall`` within a partition and ``exists`` across partitions.
* ``regloss``: same shape as ``recloss`` with the KL divergence to the prior.
* ``adaptloss``: for every pair of partitions that differ only in one factor,
  the factor's reserved dims must change distribution.
* ``isoloss``: for the same pairs, all other dims must keep their distribution.

Each rule value is a truth degree in [0, 1] that training minimizes.
"""

import logging
from dataclasses import dataclass
from typing import Sequence

import torch

from .data.partition import (
    PartitionedDataset,
    PartitionKey,
    PartitionPair,
    TupleBatch,
    check_pairs,
    pair_set,
)
from .exceptions import ConfigError, ContractError
from .logic import AggregatorConfig, batch_normalize, conjunction, exists, forall, negate
from .models.config_models import RulesConfig
from .vae.model import LatentCode, LogicVAE, sample
from .vae.predicates import complement_dims, klt, klu, rec_predicate

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FactorRule:
    name: str
    dims: tuple[int, ...]
    complement: tuple[int, ...]
    pairs: tuple[PartitionPair, ...]


@dataclass(frozen=True)
class RuleWeights:
    rec: float
    reg: float
    # applied to every factor's adapt/iso rule
    adapt: float
    iso: float

    def total(self, n_factors: int) -> float:
        return self.rec + self.reg + n_factors * (self.adapt + self.iso)


@dataclass(frozen=True)
class RuleSet:
    factors: tuple[FactorRule, ...]
    aggregator: AggregatorConfig
    weights: RuleWeights
    latent_size: int
    normalization: str = "batch"
    # min and spread of every normalization are constants for the backward pass
    frozen_stats: bool = True

    @property
    def partitions(self) -> set[PartitionKey]:
        return {key for factor in self.factors for pair in factor.pairs for key in pair}


def rule_weights(cfg: RulesConfig, n_factors: int) -> RuleWeights:
    """Configured weights rescaled to sum to one, uniform ``1 / (2 + 2|F|)`` by default."""
    norm = cfg.rec_weight + cfg.reg_weight + n_factors * (cfg.adapt_weight + cfg.iso_weight)
    return RuleWeights(
        rec=cfg.rec_weight / norm,
        reg=cfg.reg_weight / norm,
        adapt=cfg.adapt_weight / norm,
        iso=cfg.iso_weight / norm,
    )


def build_rule_set(ds: PartitionedDataset, cfg: RulesConfig, latent_size: int) -> RuleSet:
    factors = []
    for index, spec in enumerate(ds.factors):
        if not spec.dims:
            raise ConfigError(f"Factor {spec.name} reserves no latent dimensions")
        if spec.name in cfg.pairs:
            pairs = [
                (ds.key_for_label(first), ds.key_for_label(second))
                for first, second in cfg.pairs[spec.name]
            ]
            check_pairs(pairs, index)
        else:
            pairs = pair_set(ds, spec.name)
        if not pairs:
            raise ConfigError(
                f"Factor {spec.name} has no pair of partitions differing only in its value"
            )
        logger.info(
            f"Factor {spec.name}: dims {spec.dims}, pairs "
            f"{[(ds.label(a), ds.label(b)) for a, b in pairs]}"
        )
        factors.append(
            FactorRule(
                name=spec.name,
                dims=tuple(spec.dims),
                complement=tuple(complement_dims(spec.dims, latent_size)),
                pairs=tuple(pairs),
            )
        )
    weights = rule_weights(cfg, len(factors))
    if skipped := [name for name, value in vars(weights).items() if value == 0]:
        logger.info(f"Rules with zero weight are not evaluated: {skipped}")
    return RuleSet(
        factors=tuple(factors),
        aggregator=AggregatorConfig(p=cfg.aggregator_p),
        weights=weights,
        latent_size=latent_size,
        normalization=cfg.normalization,
        frozen_stats=cfg.normalization_gradient == "frozen",
    )


@dataclass
class BatchOutputs:
    images: dict[PartitionKey, torch.Tensor]
    codes: dict[PartitionKey, LatentCode]
    reconstructions: dict[PartitionKey, torch.Tensor]


def run_batch(
    model: LogicVAE, batch: TupleBatch, generator: torch.Generator | None = None
) -> BatchOutputs:
    """Encode, sample and decode all sub-batches in one pass so batch norm sees the whole tuple batch."""
    keys = batch.keys
    sizes = [len(batch.images[key]) for key in keys]
    if any(size == 0 for size in sizes):
        raise ContractError("Every partition needs at least one sample in the batch")
    images = torch.cat([batch.images[key] for key in keys])
    code = model.encode(images)
    noise = torch.randn(code.mu.shape, generator=generator, dtype=code.mu.dtype)
    reconstructions = model.decode(sample(code, noise))

    mus, logvars = code.mu.split(sizes), code.logvar.split(sizes)
    return BatchOutputs(
        images=dict(batch.images),
        codes={key: LatentCode(mu, lg) for key, mu, lg in zip(keys, mus, logvars)},
        reconstructions=dict(zip(keys, reconstructions.split(sizes))),
    )


def _normalize_together(raw: Sequence[torch.Tensor], frozen_stats: bool) -> list[torch.Tensor]:
    sizes = [len(values) for values in raw]
    return list(batch_normalize(torch.cat(list(raw)), frozen_stats=frozen_stats).split(sizes))


def _normalize(raw: Sequence[torch.Tensor], rules: RuleSet) -> list[torch.Tensor]:
    if any(values.numel() == 0 for values in raw):
        raise ContractError("Empty sub-batch")
    if rules.normalization == "sub_batch":
        return [batch_normalize(values, frozen_stats=rules.frozen_stats) for values in raw]
    return _normalize_together(raw, rules.frozen_stats)


def _aggregate_partitions(normalized: Sequence[torch.Tensor], cfg: AggregatorConfig) -> torch.Tensor:
    per_partition = torch.stack([forall(values, cfg) for values in normalized])
    return exists(per_partition, cfg)


def recloss(outputs: BatchOutputs, rules: RuleSet) -> torch.Tensor:
    raw = [
        rec_predicate(outputs.images[key], outputs.reconstructions[key])
        for key in outputs.images
    ]
    return _aggregate_partitions(_normalize(raw, rules), rules.aggregator)


def regloss(outputs: BatchOutputs, rules: RuleSet) -> torch.Tensor:
    all_dims = range(rules.latent_size)
    raw = [klu(code, all_dims) for code in outputs.codes.values()]
    return _aggregate_partitions(_normalize(raw, rules), rules.aggregator)


def _paired_klt(
    factor: FactorRule, outputs: BatchOutputs, dims: Sequence[int], rules: RuleSet
) -> list[torch.Tensor]:
    raw = []
    for first, second in factor.pairs:
        if first not in outputs.codes or second not in outputs.codes:
            raise ContractError(
                f"Pair {first}, {second} of factor {factor.name} is not in the batch"
            )
        raw.append(klt(outputs.codes[first], outputs.codes[second], dims))
    if any(values.numel() == 0 for values in raw):
        raise ContractError("Empty sub-batch")
    # pooled across all pairs of the factor
    return _normalize_together(raw, rules.frozen_stats)


def adapt_from_normalized(
    normalized: Sequence[torch.Tensor], cfg: AggregatorConfig
) -> torch.Tensor:
    return conjunction([negate(forall(values, cfg)) for values in normalized])


def iso_from_normalized(
    normalized: Sequence[torch.Tensor], cfg: AggregatorConfig
) -> torch.Tensor:
    return conjunction([forall(values, cfg) for values in normalized])


def adaptloss(factor: FactorRule, outputs: BatchOutputs, rules: RuleSet) -> torch.Tensor:
    return adapt_from_normalized(
        _paired_klt(factor, outputs, factor.dims, rules), rules.aggregator
    )


def isoloss(factor: FactorRule, outputs: BatchOutputs, rules: RuleSet) -> torch.Tensor:
    return iso_from_normalized(
        _paired_klt(factor, outputs, factor.complement, rules), rules.aggregator
    )


@dataclass(frozen=True)
class LossBreakdown:
    """
    Rule values of one batch and their weighted total.

    Rules with zero weight are never evaluated: they are missing from the
    record and listed in ``omitted``.
    """

    recloss: torch.Tensor | None
    regloss: torch.Tensor | None
    adaptloss: dict[str, torch.Tensor]
    isoloss: dict[str, torch.Tensor]
    total: torch.Tensor
    omitted: tuple[str, ...] = ()

    def as_record(self) -> dict[str, float]:
        record = {}
        if self.recloss is not None:
            record["recloss"] = self.recloss.item()
        if self.regloss is not None:
            record["regloss"] = self.regloss.item()
        for name, value in self.adaptloss.items():
            record[f"adaptloss_{name}"] = value.item()
        for name, value in self.isoloss.items():
            record[f"isoloss_{name}"] = value.item()
        record["total"] = self.total.item()
        return record


def combine(
    rec: torch.Tensor | None,
    reg: torch.Tensor | None,
    adapt: dict[str, torch.Tensor],
    iso: dict[str, torch.Tensor],
    weights: RuleWeights,
    omitted: Sequence[str] = (),
) -> LossBreakdown:
    terms = []
    if rec is not None:
        terms.append(weights.rec * rec)
    if reg is not None:
        terms.append(weights.reg * reg)
    terms += [weights.adapt * value for value in adapt.values()]
    terms += [weights.iso * value for value in iso.values()]
    if not terms:
        raise ContractError("No rule with a positive weight")
    total = torch.stack(terms).sum()
    return LossBreakdown(
        recloss=rec, regloss=reg, adaptloss=adapt, isoloss=iso, total=total, omitted=tuple(omitted)
    )


def total_loss(outputs: BatchOutputs, rules: RuleSet) -> LossBreakdown:
    if missing := rules.partitions - set(outputs.codes):
        raise ContractError(f"Batch is missing partitions {sorted(missing)}")
    weights = rules.weights
    names = [factor.name for factor in rules.factors]
    omitted = [
        *(["recloss"] if weights.rec == 0 else []),
        *(["regloss"] if weights.reg == 0 else []),
        *([f"adaptloss_{name}" for name in names] if weights.adapt == 0 else []),
        *([f"isoloss_{name}" for name in names] if weights.iso == 0 else []),
    ]
    adapt, iso = {}, {}
    if weights.adapt > 0:
        adapt = {factor.name: adaptloss(factor, outputs, rules) for factor in rules.factors}
    if weights.iso > 0:
        iso = {factor.name: isoloss(factor, outputs, rules) for factor in rules.factors}
    return combine(
        recloss(outputs, rules) if weights.rec > 0 else None,
        regloss(outputs, rules) if weights.reg > 0 else None,
        adapt,
        iso,
        weights,
        omitted,
    )
