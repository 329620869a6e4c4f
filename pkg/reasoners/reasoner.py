"""
Per-factor OOD reasoners over the factor's reserved latent dimensions.

Calibration codes are clustered with k-means, every cluster becomes one
diagonal Gaussian of a mixture, and a test code whose mixture density at its
mean falls below the calibration quantile threshold is flagged as OOD for
that factor.
"""

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .exceptions import ContractError, DomainError, ShapeError
from .models.artifacts import CalibrationProvenance, MixtureComponent, ReasonerModel
from .models.config_models import FactorSpec, ReasonerConfig
from .vae.model import LatentCode, LogicVAE, encode_images

logger = logging.getLogger(__name__)

INERTIA_RTOL = 1e-12


@dataclass
class KMeansResult:
    centers: np.ndarray
    assignments: np.ndarray
    inertia: list[float]


def _squared_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)


def _plus_plus_seeds(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    chosen = [int(rng.integers(len(points)))]
    for _ in range(1, k):
        distances = _squared_distances(points, points[chosen]).min(axis=1)
        total = distances.sum()
        if total > 0:
            chosen.append(int(rng.choice(len(points), p=distances / total)))
        else:
            # every point coincides with a center already
            chosen.append(int(rng.integers(len(points))))
    return points[chosen].copy()


def kmeans(points: np.ndarray, k: int, seed: int, max_iters: int = 100) -> KMeansResult:
    """Lloyd iterations from k-means++ seeds until the assignment stops changing."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    if k < 1:
        raise DomainError(f"Need at least one cluster, got k={k}")
    if len(points) < k:
        raise DomainError(f"Cannot form {k} clusters from {len(points)} points")

    rng = np.random.default_rng(seed)
    centers = _plus_plus_seeds(points, k, rng)
    assignments = np.full(len(points), -1)
    inertia: list[float] = []
    for iteration in range(max_iters):
        distances = _squared_distances(points, centers)
        updated = distances.argmin(axis=1)
        current = float(distances[np.arange(len(points)), updated].sum())
        if inertia and current > inertia[-1] * (1 + INERTIA_RTOL) + INERTIA_RTOL:
            raise ContractError(
                f"k-means inertia increased from {inertia[-1]} to {current} at iteration {iteration}"
            )
        inertia.append(current)
        if np.array_equal(updated, assignments):
            break
        assignments = updated
        for cluster in range(k):
            members = points[assignments == cluster]
            # an empty cluster keeps its previous center
            if len(members):
                centers[cluster] = members.mean(axis=0)
    logger.debug(f"k-means with k={k} converged after {len(inertia)} iterations, inertia {inertia[-1]:.6g}")
    return KMeansResult(centers=centers, assignments=assignments, inertia=inertia)


def fit_gmm(
    points: np.ndarray, centers: np.ndarray, variance_floor: float = 1e-6
) -> list[MixtureComponent]:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    assignments = _squared_distances(points, centers).argmin(axis=1)

    components = []
    for cluster, center in enumerate(centers):
        members = points[assignments == cluster]
        if not len(members):
            logger.warning(f"Dropping empty cluster {cluster} centered at {center.tolist()}")
            continue
        variance = np.maximum(members.var(axis=0), variance_floor)
        components.append(
            MixtureComponent(
                center=center.tolist(),
                variance=variance.tolist(),
                weight=len(members) / len(points),
            )
        )
    return components


def _component_log_densities(reasoner: ReasonerModel, values: np.ndarray) -> np.ndarray:
    """(N, K) array of ``log w_k + log N(values; center_k, variance_k)``."""
    centers = np.array([component.center for component in reasoner.components])
    variances = np.array([component.variance for component in reasoner.components])
    weights = np.array([component.weight for component in reasoner.components])
    log_normal = -0.5 * (
        ((values[:, None, :] - centers[None]) ** 2) / variances[None]
        + np.log(2 * np.pi * variances[None])
    ).sum(axis=-1)
    return np.log(weights)[None] + log_normal


def _project_means(reasoner: ReasonerModel, code: LatentCode | np.ndarray) -> np.ndarray:
    if isinstance(code, LatentCode):
        mu = code.mu.detach().cpu().numpy()
    else:
        mu = np.asarray(code, dtype=np.float64)
    mu = np.atleast_2d(mu)
    if mu.shape[1] <= max(reasoner.dims):
        raise ShapeError(
            f"Code of length {mu.shape[1]} does not contain dims {reasoner.dims} of {reasoner.factor}"
        )
    return mu[:, reasoner.dims].astype(np.float64)


def score_batch(reasoner: ReasonerModel, mus: LatentCode | np.ndarray) -> np.ndarray:
    """Mixture density at every row's mean, restricted to the reasoner's dims."""
    log_components = _component_log_densities(reasoner, _project_means(reasoner, mus))
    return np.exp(logsumexp(log_components, axis=1))


def score(reasoner: ReasonerModel, code: LatentCode | np.ndarray) -> float:
    return float(score_batch(reasoner, code)[0])


def score_components(
    reasoner: ReasonerModel, code: LatentCode | np.ndarray
) -> tuple[float, list[float]]:
    """Density plus the posterior probability of every component."""
    log_components = _component_log_densities(reasoner, _project_means(reasoner, code))[0]
    log_density = logsumexp(log_components)
    return float(np.exp(log_density)), np.exp(log_components - log_density).tolist()


def is_ood(reasoner: ReasonerModel, code: LatentCode | np.ndarray) -> tuple[bool, float]:
    density = score(reasoner, code)
    return density < reasoner.threshold, density


def calibrate_from_means(
    mus: np.ndarray,
    factor: FactorSpec,
    cfg: ReasonerConfig,
    seed: int,
    provenance: CalibrationProvenance | None = None,
) -> ReasonerModel:
    if not factor.dims:
        raise DomainError(f"Factor {factor.name} reserves no latent dimensions")
    points = np.atleast_2d(np.asarray(mus, dtype=np.float64))[:, factor.dims]
    k = cfg.clusters or len(factor.observed)
    if len(points) < k:
        raise DomainError(
            f"Calibrating {factor.name} needs at least {k} points, got {len(points)}"
        )

    clustering = kmeans(points, k, seed, cfg.max_iters)
    components = fit_gmm(points, clustering.centers, cfg.variance_floor)
    reasoner = ReasonerModel(
        factor=factor.name,
        dims=list(factor.dims),
        components=components,
        threshold=0.0,
        provenance=provenance,
    )
    densities = score_batch(reasoner, mus)
    reasoner.threshold = float(np.quantile(densities, cfg.quantile))
    logger.info(
        f"Calibrated {factor.name} on {len(points)} codes: {len(components)} components, "
        f"threshold {reasoner.threshold:.6g}"
    )
    return reasoner


def calibrate(
    model: LogicVAE,
    images: np.ndarray,
    factor: FactorSpec,
    cfg: ReasonerConfig,
    seed: int,
    provenance: CalibrationProvenance | None = None,
) -> ReasonerModel:
    mus, _ = encode_images(model, images)
    return calibrate_from_means(mus, factor, cfg, seed, provenance)


def calibrate_all(
    model: LogicVAE,
    images: np.ndarray,
    factors: Sequence[FactorSpec],
    cfg: ReasonerConfig,
    seed: int,
    provenance: CalibrationProvenance | None = None,
) -> list[ReasonerModel]:
    mus, _ = encode_images(model, images)
    return [calibrate_from_means(mus, factor, cfg, seed, provenance) for factor in factors]
