import math
from dataclasses import replace

import pytest
import torch

from reasoners.data.partition import batch_tuples
from reasoners.exceptions import ConfigError, ContractError, NumericError
from reasoners.models.config_models import SCENE_FACTOR, STREAK_FACTOR, RulesConfig
from reasoners.rules import (
    BatchOutputs,
    adapt_from_normalized,
    adaptloss,
    build_rule_set,
    iso_from_normalized,
    isoloss,
    recloss,
    regloss,
    rule_weights,
    run_batch,
    total_loss,
)
from reasoners.vae.model import LatentCode

from .testlibs import get_partitioned_dataset, get_run_config, get_scene_factor, get_streak_factor

P1, P2, P3, P4 = (1, 0), (2, 0), (1, 1), (2, 1)


@pytest.fixture
def rules(run_config):
    return build_rule_set(get_partitioned_dataset(n_per_partition=1), run_config.rules, latent_size=4)


def _forall(values):
    return 1 - math.sqrt(sum((1 - value) ** 2 for value in values) / len(values))


def _exists(values):
    return math.sqrt(sum(value**2 for value in values) / len(values))


def _outputs_from_errors(errors: dict) -> BatchOutputs:
    """Reconstructions whose per-sample squared error is exactly ``errors``."""
    images, reconstructions = {}, {}
    for key, values in errors.items():
        images[key] = torch.zeros(len(values), 1, 2, 2, dtype=torch.float64)
        reconstructions[key] = torch.stack(
            [torch.full((1, 2, 2), math.sqrt(value), dtype=torch.float64) for value in values]
        )
    return BatchOutputs(images=images, codes={}, reconstructions=reconstructions)


def _codes_with_shift(shifts: list[float], dim: int, size: int = 4) -> tuple[LatentCode, LatentCode]:
    """Paired codes whose divergence on ``dim`` is ``shift`` per sample, zero elsewhere."""
    base = LatentCode(torch.zeros(len(shifts), size, dtype=torch.float64), torch.zeros(len(shifts), size, dtype=torch.float64))
    moved = base.mu.clone()
    # klt with unit variances is half the squared mean gap per dim, averaged over dims
    moved[:, dim] = torch.tensor([math.sqrt(2 * shift) for shift in shifts], dtype=torch.float64)
    return base, LatentCode(moved, base.logvar.clone())


class TestRuleSet:
    def test_default_weights_average_the_rules(self, run_config):
        weights = rule_weights(run_config.rules, n_factors=2)
        assert weights.rec == weights.reg == weights.adapt == weights.iso == pytest.approx(1 / 6)
        assert weights.total(2) == pytest.approx(1.0)

    def test_ablation_weights(self):
        weights = rule_weights(RulesConfig(adapt_weight=0.0, iso_weight=0.0), n_factors=2)
        assert (weights.rec, weights.reg, weights.adapt, weights.iso) == (0.5, 0.5, 0.0, 0.0)

    def test_pairs_and_complements(self, rules):
        by_name = {factor.name: factor for factor in rules.factors}
        assert by_name[STREAK_FACTOR].pairs == ((P1, P2), (P3, P4))
        assert by_name[SCENE_FACTOR].pairs == ((P1, P3), (P2, P4))
        assert by_name[STREAK_FACTOR].complement == (1, 2, 3)
        assert rules.partitions == {P1, P2, P3, P4}

    def test_explicit_pairs_by_label(self, run_config):
        cfg = run_config.rules.model_copy(update={"pairs": {STREAK_FACTOR: [("P3", "P4")]}})
        rules = build_rule_set(get_partitioned_dataset(n_per_partition=1), cfg, latent_size=4)
        assert rules.factors[0].pairs == ((P3, P4),)

    def test_explicit_pair_differing_in_both_factors_is_rejected(self, run_config):
        cfg = run_config.rules.model_copy(update={"pairs": {STREAK_FACTOR: [("P1", "P4")]}})
        with pytest.raises(ContractError):
            build_rule_set(get_partitioned_dataset(n_per_partition=1), cfg, latent_size=4)

    def test_unknown_label_is_rejected(self, run_config):
        cfg = run_config.rules.model_copy(update={"pairs": {STREAK_FACTOR: [("P1", "P7")]}})
        with pytest.raises(ConfigError):
            build_rule_set(get_partitioned_dataset(n_per_partition=1), cfg, latent_size=4)

    def test_factor_without_dims_is_rejected(self):
        config = get_run_config(
            rules=RulesConfig(factors=[get_streak_factor(), get_scene_factor(dims=[])])
        )
        with pytest.raises(ConfigError):
            build_rule_set(get_partitioned_dataset(n_per_partition=1, config=config), config.rules, 4)

    def test_factor_with_a_single_observed_value_has_no_pairs(self):
        config = get_run_config(
            rules=RulesConfig(factors=[get_streak_factor(), get_scene_factor(observed=["checker"])])
        )
        with pytest.raises(ConfigError):
            build_rule_set(get_partitioned_dataset(n_per_partition=1, config=config), config.rules, 4)


class TestReconstructionAndRegularization:
    def test_hand_composed_recloss(self, rules):
        errors = {P1: [0.0, 1.0], P2: [0.5, 0.25]}
        normalized = {key: [value / (1 + 1e-8) for value in values] for key, values in errors.items()}
        expected = _exists([_forall(normalized[P1]), _forall(normalized[P2])])
        assert recloss(_outputs_from_errors(errors), rules).item() == pytest.approx(expected, abs=1e-9)

    def test_sub_batch_normalization(self, rules):
        sub_batch = replace(rules, normalization="sub_batch")
        errors = {P1: [0.0, 1.0], P2: [0.5, 0.25]}
        # both partitions normalize to {0, 1}
        expected = _forall([0.0, 1.0])
        assert recloss(_outputs_from_errors(errors), sub_batch).item() == pytest.approx(expected, abs=1e-7)

    def test_perfect_reconstruction_has_no_loss(self, rules):
        errors = {P1: [0.0, 0.0], P2: [0.0, 0.0]}
        assert recloss(_outputs_from_errors(errors), rules).item() == 0.0

    def test_single_sample_has_no_loss(self, rules):
        assert recloss(_outputs_from_errors({P1: [0.7]}), rules).item() == 0.0

    def test_codes_at_the_prior_have_no_regularization_loss(self, rules):
        outputs = BatchOutputs(
            images={}, codes={P1: LatentCode.prior(3, 4), P2: LatentCode.prior(3, 4)}, reconstructions={}
        )
        assert regloss(outputs, rules).item() == 0.0

    def test_hand_composed_regloss(self, rules):
        # klu over 4 dims with unit variance is mu_0^2 / 8
        first = LatentCode(torch.tensor([[0.0, 0, 0, 0], [4.0, 0, 0, 0]], dtype=torch.float64), torch.zeros(2, 4, dtype=torch.float64))
        second = LatentCode(torch.tensor([[2.0, 0, 0, 0], [2.0, 0, 0, 0]], dtype=torch.float64), torch.zeros(2, 4, dtype=torch.float64))
        outputs = BatchOutputs(images={}, codes={P1: first, P2: second}, reconstructions={})
        # raw {0, 2} and {0.5, 0.5} normalize to {0, 1} and {0.25, 0.25}
        expected = _exists([_forall([0.0, 1.0]), _forall([0.25, 0.25])])
        assert regloss(outputs, rules).item() == pytest.approx(expected, abs=1e-7)


class TestPairRules:
    def test_two_pair_composition(self, rules):
        first = [torch.tensor([0.5, 0.5], dtype=torch.float64)]
        second = [torch.tensor([0.2, 0.2], dtype=torch.float64)]
        aggregator = rules.aggregator
        assert adapt_from_normalized(first + second, aggregator).item() == pytest.approx(0.5 * 0.8)
        assert iso_from_normalized(first + second, aggregator).item() == pytest.approx(0.5 * 0.2)

    def _pair_outputs(self, rules, shifts, dim):
        streak = next(factor for factor in rules.factors if factor.name == STREAK_FACTOR)
        codes = {}
        for first, second in streak.pairs:
            codes[first], codes[second] = _codes_with_shift(shifts, dim)
        return streak, BatchOutputs(images={}, codes=codes, reconstructions={})

    def test_unchanged_reserved_dims_give_maximal_adaptloss(self, rules):
        streak, outputs = self._pair_outputs(rules, [0.0, 0.0], dim=0)
        assert adaptloss(streak, outputs, rules).item() == 1.0

    def test_unchanged_complement_gives_no_isoloss(self, rules):
        streak, outputs = self._pair_outputs(rules, [0.3, 0.6], dim=0)
        assert isoloss(streak, outputs, rules).item() == 0.0

    def test_moving_reserved_dims_apart_lowers_adaptloss(self, rules):
        streak, closer = self._pair_outputs(rules, [0.0, 1.0, 0.3], dim=0)
        _, farther = self._pair_outputs(rules, [0.0, 1.0, 0.6], dim=0)
        assert adaptloss(streak, farther, rules).item() < adaptloss(streak, closer, rules).item()

    def test_moving_the_complement_apart_raises_isoloss(self, rules):
        streak, closer = self._pair_outputs(rules, [0.0, 1.0, 0.3], dim=2)
        _, farther = self._pair_outputs(rules, [0.0, 1.0, 0.6], dim=2)
        assert isoloss(streak, farther, rules).item() > isoloss(streak, closer, rules).item()

    def test_missing_pair_breaks_the_contract(self, rules):
        streak, outputs = self._pair_outputs(rules, [0.1, 0.2], dim=0)
        del outputs.codes[P4]
        with pytest.raises(ContractError):
            adaptloss(streak, outputs, rules)


class TestTotalLoss:
    @pytest.fixture
    def outputs(self, tiny_model):
        ds = get_partitioned_dataset(n_per_partition=4)
        batch = next(batch_tuples(ds, 4, seed=0))
        return run_batch(tiny_model, batch, torch.Generator().manual_seed(0))

    def test_total_is_the_weighted_average(self, outputs, rules):
        breakdown = total_loss(outputs, rules)
        record = breakdown.as_record()
        assert list(record) == [
            "recloss",
            "regloss",
            f"adaptloss_{STREAK_FACTOR}",
            f"adaptloss_{SCENE_FACTOR}",
            f"isoloss_{STREAK_FACTOR}",
            f"isoloss_{SCENE_FACTOR}",
            "total",
        ]
        components = [value for name, value in record.items() if name != "total"]
        assert record["total"] == pytest.approx(sum(components) / 6, rel=1e-6)
        assert all(0.0 <= value <= 1.0 for value in record.values())

    def test_gradients_reach_encoder_and_decoder(self, outputs, rules, tiny_model, backend):
        params = backend.parameters(tiny_model)
        grads = backend.backward(params, total_loss(outputs, rules).total)
        assert grads["encoder.mu.weight"].abs().sum() > 0
        assert grads["encoder.logvar.weight"].abs().sum() > 0
        assert any(grad.abs().sum() > 0 for name, grad in grads.items() if name.startswith("decoder."))

    def test_batch_missing_a_partition_breaks_the_contract(self, outputs, rules):
        del outputs.codes[P2]
        with pytest.raises(ContractError):
            total_loss(outputs, rules)

    def test_run_batch_splits_per_partition(self, outputs):
        assert list(outputs.codes) == [P1, P2, P3, P4]
        assert all(code.mu.shape == (4, 4) for code in outputs.codes.values())
        assert all(xhat.shape == (4, 1, 8, 8) for xhat in outputs.reconstructions.values())

    def test_zero_weight_rules_are_not_evaluated(self, run_config):
        cfg = run_config.rules.model_copy(update={"adapt_weight": 0.0, "iso_weight": 0.0})
        rules = build_rule_set(get_partitioned_dataset(n_per_partition=1), cfg, latent_size=4)
        outputs = _outputs_from_errors({key: [0.1, 0.4] for key in (P1, P2, P3, P4)})
        # a vanishing variance makes every klt towards P2 and P4 infinite while klu stays finite
        collapsed = LatentCode(torch.zeros(2, 4, dtype=torch.float64), torch.full((2, 4), -800.0, dtype=torch.float64))
        prior = LatentCode.prior(2, 4, dtype=torch.float64)
        outputs.codes.update({P1: prior, P2: collapsed, P3: prior, P4: collapsed})

        breakdown = total_loss(outputs, rules)
        assert list(breakdown.as_record()) == ["recloss", "regloss", "total"]
        assert set(breakdown.omitted) == {
            f"adaptloss_{STREAK_FACTOR}",
            f"adaptloss_{SCENE_FACTOR}",
            f"isoloss_{STREAK_FACTOR}",
            f"isoloss_{SCENE_FACTOR}",
        }
        assert breakdown.total.item() == pytest.approx(
            0.5 * breakdown.recloss.item() + 0.5 * breakdown.regloss.item()
        )
        with pytest.raises(NumericError):
            total_loss(outputs, build_rule_set(get_partitioned_dataset(n_per_partition=1), run_config.rules, 4))


class TestNormalizationGradient:
    """Gradients of the pair rules with respect to each pair's divergence on one dim."""

    @staticmethod
    def _outputs(first_pair: list[float], second_pair: list[float], dim: int):
        gaps = torch.tensor(
            [[math.sqrt(2 * shift) for shift in shifts] for shifts in (first_pair, second_pair)],
            dtype=torch.float64,
            requires_grad=True,
        )
        codes = {}
        for (first, second), row in zip(((P1, P2), (P3, P4)), gaps):
            base = LatentCode(torch.zeros(len(row), 4, dtype=torch.float64), torch.zeros(len(row), 4, dtype=torch.float64))
            moved = base.mu.clone()
            moved[:, dim] = row
            codes[first], codes[second] = base, LatentCode(moved, base.logvar.clone())
        return gaps, BatchOutputs(images={}, codes=codes, reconstructions={})

    @pytest.fixture
    def streak(self, rules):
        return next(factor for factor in rules.factors if factor.name == STREAK_FACTOR)

    def test_frozen_stats_push_every_complement_divergence_down(self, rules, streak):
        gaps, outputs = self._outputs([0.1, 0.2, 0.3, 0.4], [0.15, 0.25, 0.35, 2.0], dim=2)
        (grad,) = torch.autograd.grad(isoloss(streak, outputs, rules), gaps)
        assert bool((grad >= 0).all())
        assert grad.sum().item() > 0

    def test_exact_gradient_rewards_a_complement_outlier(self, rules, streak):
        through = replace(rules, frozen_stats=False)
        gaps, outputs = self._outputs([0.1, 0.2, 0.3, 0.4], [0.15, 0.25, 0.35, 2.0], dim=2)
        (grad,) = torch.autograd.grad(isoloss(streak, outputs, through), gaps)
        assert grad[1, 3].item() < 0

    def test_frozen_stats_push_every_reserved_divergence_up(self, rules, streak):
        gaps, outputs = self._outputs([0.1, 0.2, 0.3, 0.4], [0.15, 0.25, 0.35, 0.5], dim=0)
        (grad,) = torch.autograd.grad(adaptloss(streak, outputs, rules), gaps)
        assert bool((grad <= 0).all())
        assert grad.sum().item() < 0

    def test_exact_gradient_penalizes_raising_the_smallest_divergence(self, rules, streak):
        through = replace(rules, frozen_stats=False)
        gaps, outputs = self._outputs([0.1, 0.2, 0.3, 0.4], [0.15, 0.25, 0.35, 0.5], dim=0)
        (grad,) = torch.autograd.grad(adaptloss(streak, outputs, through), gaps)
        assert grad[0, 0].item() > 0

    def test_forward_values_do_not_depend_on_the_gradient_mode(self, rules, streak):
        _, outputs = self._outputs([0.1, 0.2, 0.3, 0.4], [0.15, 0.25, 0.35, 2.0], dim=2)
        through = replace(rules, frozen_stats=False)
        assert isoloss(streak, outputs, rules).item() == isoloss(streak, outputs, through).item()

    def test_config_selects_the_mode(self, run_config):
        dataset = get_partitioned_dataset(n_per_partition=1)
        assert build_rule_set(dataset, run_config.rules, 4).frozen_stats
        cfg = run_config.rules.model_copy(update={"normalization_gradient": "through"})
        assert not build_rule_set(dataset, cfg, 4).frozen_stats
