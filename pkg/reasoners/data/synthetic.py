"""
Synthetic two-factor image generator.

Every image is a deterministic background pattern (the ``scene`` factor) with
additive diagonal streaks on top (the ``streak_intensity`` factor) and
per-pixel Gaussian jitter. Streak intensity is drawn as a continuous value
from the band of its level and discretized back into a value id.
"""

import logging
from itertools import product
from typing import Sequence

import numpy as np

from ..exceptions import ConfigError
from ..models.config_models import (
    SCENE_FACTOR,
    SCENE_PATTERNS,
    STREAK_FACTOR,
    DatasetConfig,
    FactorSpec,
)
from .partition import Sample, discretize_factor

logger = logging.getLogger(__name__)

TRAIN_SPLIT = "train"
CALIBRATION_SPLIT = "calibration"
TEST_SPLIT_PREFIX = "test-"

BACKGROUND_LOW = 0.15
BACKGROUND_HIGH = 0.5
STRIPE_WIDTH = 4


def evaluation_split(factor: str) -> str:
    return f"{TEST_SPLIT_PREFIX}{factor}"


def scene_pattern(scene: str, size: int) -> np.ndarray:
    rows, cols = np.mgrid[0:size, 0:size]
    if scene == "stripes-h":
        on = (rows // STRIPE_WIDTH) % 2
    elif scene == "stripes-v":
        on = (cols // STRIPE_WIDTH) % 2
    elif scene == "checker":
        on = (rows // STRIPE_WIDTH + cols // STRIPE_WIDTH) % 2
    else:
        raise ConfigError(f"Unknown scene pattern {scene}, known: {', '.join(SCENE_PATTERNS)}")
    return BACKGROUND_LOW + (BACKGROUND_HIGH - BACKGROUND_LOW) * on


def render_sample(
    scene: str, intensity: float, rng: np.random.Generator, cfg: DatasetConfig
) -> np.ndarray:
    """Render one (H, W, C) image in [0, 1]."""
    size = cfg.image_size
    rows, cols = np.mgrid[0:size, 0:size]
    offset = rng.integers(cfg.streak_period)
    on_diagonal = (rows + cols + offset) % cfg.streak_period == 0
    streaks = on_diagonal & (rng.random((size, size)) < cfg.streak_density)
    jitter = rng.normal(0.0, cfg.jitter, (size, size))
    image = scene_pattern(scene, size) + intensity * cfg.streak_scale * streaks + jitter
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return np.repeat(image[..., None], cfg.channels, axis=-1)


def _check_factors(cfg: DatasetConfig, factors: Sequence[FactorSpec]) -> tuple[FactorSpec, FactorSpec]:
    by_name = {factor.name: factor for factor in factors}
    if unknown := set(by_name) - {STREAK_FACTOR, SCENE_FACTOR}:
        raise ConfigError(
            f"The synthetic generator has no factor named {', '.join(sorted(unknown))}"
        )
    if missing := {STREAK_FACTOR, SCENE_FACTOR} - set(by_name):
        raise ConfigError(f"The synthetic generator needs factors {', '.join(sorted(missing))}")

    streak, scene = by_name[STREAK_FACTOR], by_name[SCENE_FACTOR]
    if unknown := set(streak.values) - set(cfg.streak_bands):
        raise ConfigError(f"No intensity band configured for streak levels {sorted(unknown)}")
    if streak.edges is None:
        raise ConfigError(f"Factor {STREAK_FACTOR} needs bin edges")
    if unknown := set(scene.values) - set(SCENE_PATTERNS):
        raise ConfigError(f"Unknown scene patterns {sorted(unknown)}")
    return streak, scene


def _spread(total: int, slots: int) -> list[int]:
    """Split ``total`` over ``slots`` as evenly as possible, remainder to the first slots."""
    base, remainder = divmod(total, slots)
    return [base + (1 if slot < remainder else 0) for slot in range(slots)]


class _Renderer:
    def __init__(
        self,
        cfg: DatasetConfig,
        streak: FactorSpec,
        scene: FactorSpec,
        rng: np.random.Generator,
    ) -> None:
        self.cfg = cfg
        self.streak = streak
        self.scene = scene
        self.rng = rng
        self.samples: list[Sample] = []

    def add(self, split: str, streak_id: int, scene_id: int, count: int) -> None:
        level = self.streak.values[streak_id]
        low, high = self.cfg.streak_bands[level]
        assert self.streak.edges is not None
        for _ in range(count):
            intensity = float(self.rng.uniform(low, high))
            value_id = discretize_factor(intensity, self.streak.edges)
            image = render_sample(self.scene.values[scene_id], intensity, self.rng, self.cfg)
            self.samples.append(
                Sample(
                    sample_id=f"{split}-{len(self.samples):06d}",
                    image=image,
                    assignment={STREAK_FACTOR: value_id, SCENE_FACTOR: scene_id},
                    split=split,
                    measurements={STREAK_FACTOR: intensity},
                )
            )


def generate_synthetic(
    cfg: DatasetConfig, factors: Sequence[FactorSpec], seed: int
) -> list[Sample]:
    """
    Generate train, calibration and one balanced test split per factor.

    Train and calibration samples cover every combination of observed values.
    The ``test-<factor>`` split draws its in-distribution half from all value
    combinations where the factor is observed and its OOD half from those
    where it is not, so other factors may be OOD on either side.
    """
    streak, scene = _check_factors(cfg, factors)
    renderer = _Renderer(cfg, streak, scene, np.random.default_rng(seed))
    # combinations in partition order, streak intensity varying fastest
    observed = [(s, c) for c, s in product(scene.observed_ids, streak.observed_ids)]
    everything = [
        (s, c) for c, s in product(range(len(scene.values)), range(len(streak.values)))
    ]

    for split, count in (
        (TRAIN_SPLIT, cfg.train_per_partition),
        (CALIBRATION_SPLIT, cfg.calibration_per_partition),
    ):
        for streak_id, scene_id in observed:
            renderer.add(split, streak_id, scene_id, count)

    for position, factor in enumerate((streak, scene)):
        observed_ids = set(factor.observed_ids)
        split = evaluation_split(factor.name)
        id_side = [combo for combo in everything if combo[position] in observed_ids]
        ood_side = [combo for combo in everything if combo[position] not in observed_ids]
        if not ood_side:
            logger.warning(f"Factor {factor.name} has no unobserved values, {split} has no OOD samples")
        for side in (id_side, ood_side):
            if not side:
                continue
            for (streak_id, scene_id), count in zip(side, _spread(cfg.test_per_side, len(side))):
                renderer.add(split, streak_id, scene_id, count)

    logger.info(f"Generated {len(renderer.samples)} synthetic samples with seed {seed}")
    return renderer.samples
