import io
import logging
from typing import Sequence

import matplotlib
import numpy as np
import pandas as pd
from matplotlib.figure import Figure
from scipy.stats import rankdata
from sklearn.metrics import mutual_info_score
from sklearn.metrics import roc_curve as sklearn_roc_curve

from .data.partition import Sample
from .exceptions import DomainError, ShapeError
from .models.artifacts import DimInformation, FactorInformation, MIReport
from .models.config_models import FactorSpec
from .vae.model import LogicVAE, encode_images

logger = logging.getLogger(__name__)

# fixed ids inside the svg output
matplotlib.rcParams["svg.hashsalt"] = "reasoners"


def _check_scored(densities: np.ndarray, labels: np.ndarray) -> None:
    if densities.shape != labels.shape or densities.ndim != 1:
        raise ShapeError(
            f"Expected matching 1-d densities and labels, got {densities.shape} and {labels.shape}"
        )
    if not set(np.unique(labels)) <= {0, 1}:
        raise DomainError("Labels must be 0 (in-distribution) or 1 (OOD)")
    if labels.sum() == 0 or labels.sum() == len(labels):
        raise DomainError("AUROC needs both in-distribution and OOD samples")


def auroc(densities: Sequence[float], labels: Sequence[int]) -> float:
    """
    Probability that a random OOD sample has a lower density than a random
    in-distribution one, ties counting one half.
    """
    densities = np.asarray(densities, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    _check_scored(densities, labels)

    # lower density ranks as more OOD
    ranks = rankdata(-densities, method="average")
    n_ood = int(labels.sum())
    n_id = len(labels) - n_ood
    u_statistic = ranks[labels == 1].sum() - n_ood * (n_ood + 1) / 2
    return float(u_statistic / (n_ood * n_id))


def roc_curve(
    densities: Sequence[float], labels: Sequence[int]
) -> tuple[np.ndarray, np.ndarray]:
    """False and true positive rates, OOD being the positive class."""
    densities = np.asarray(densities, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    _check_scored(densities, labels)
    fpr, tpr, _ = sklearn_roc_curve(labels, -densities, drop_intermediate=False)
    return fpr, tpr


def discretize(values: np.ndarray, bins: int) -> np.ndarray:
    return np.digitize(values, np.histogram_bin_edges(values, bins)[:-1])


def mutual_information(labels: Sequence[int], values: Sequence[float], bins: int = 20) -> float:
    """Mutual information in nats between factor labels and an equal-width binned latent."""
    labels = np.asarray(labels)
    values = np.asarray(values, dtype=np.float64)
    if labels.shape != values.shape:
        raise ShapeError(f"{len(labels)} labels for {len(values)} latent values")
    if bins < 2:
        raise DomainError(f"Need at least two bins, got {bins}")
    if len(np.unique(labels)) < 2 or np.ptp(values) == 0:
        return 0.0
    return max(float(mutual_info_score(labels, discretize(values, bins))), 0.0)


def rank_dims(labels: np.ndarray, mus: np.ndarray, bins: int) -> list[DimInformation]:
    scores = [
        DimInformation(dim=dim, mi=mutual_information(labels, mus[:, dim], bins))
        for dim in range(mus.shape[1])
    ]
    # stable, so ties keep ascending dim order
    return sorted(scores, key=lambda entry: -entry.mi)


def factor_information(
    factor: FactorSpec, labels: np.ndarray, mus: np.ndarray, bins: int
) -> FactorInformation:
    ranking = rank_dims(labels, mus, bins)
    runner_up = ranking[1] if len(ranking) > 1 else None
    return FactorInformation(
        factor=factor.name,
        ranking=ranking,
        expected_dims=list(factor.dims),
        top_dim=ranking[0].dim,
        top_mi=ranking[0].mi,
        runner_up_dim=runner_up.dim if runner_up else None,
        runner_up_mi=runner_up.mi if runner_up else None,
        expected_is_top=ranking[0].dim in factor.dims,
    )


def mi_report(
    model: LogicVAE,
    samples: Sequence[Sample],
    factors: Sequence[FactorSpec],
    bins: int = 20,
    split: str = "",
) -> MIReport:
    mus, _ = encode_images(model, np.stack([sample.image for sample in samples]))
    report = {}
    for factor in factors:
        labels = np.array([sample.assignment[factor.name] for sample in samples])
        report[factor.name] = factor_information(factor, labels, mus, bins)
        info = report[factor.name]
        logger.info(
            f"{factor.name}: top dim {info.top_dim} ({info.top_mi:.4f} nats), "
            f"expected {info.expected_dims}, runner-up {info.runner_up_dim} ({info.runner_up_mi})"
        )
    return MIReport(split=split, bins=bins, factors=report)


def export_latents(
    model: LogicVAE, samples: Sequence[Sample], factors: Sequence[FactorSpec]
) -> pd.DataFrame:
    mus, logvars = encode_images(model, np.stack([sample.image for sample in samples]))
    table = pd.DataFrame(
        {
            "sample_id": [sample.sample_id for sample in samples],
            "split": [sample.split for sample in samples],
            **{
                factor.name: [sample.assignment[factor.name] for sample in samples]
                for factor in factors
            },
        }
    )
    latent_columns = {f"mu_{dim}": mus[:, dim] for dim in range(mus.shape[1])}
    latent_columns.update({f"logvar_{dim}": logvars[:, dim] for dim in range(logvars.shape[1])})
    return pd.concat([table, pd.DataFrame(latent_columns)], axis=1)


def latent_scatter(
    latents: pd.DataFrame, dim_x: int, dim_y: int, factor: FactorSpec
) -> bytes:
    """SVG scatter of two latent means colored by the factor's value."""
    figure = Figure(figsize=(5, 4))
    axes = figure.subplots()
    for value_id, value in enumerate(factor.values):
        rows = latents[latents[factor.name] == value_id]
        if len(rows):
            axes.scatter(rows[f"mu_{dim_x}"], rows[f"mu_{dim_y}"], s=6, label=value)
    axes.set_xlabel(f"mu_{dim_x}")
    axes.set_ylabel(f"mu_{dim_y}")
    axes.set_title(factor.name)
    axes.legend(loc="best", fontsize="small")
    buffer = io.BytesIO()
    figure.savefig(buffer, format="svg", metadata={"Date": None})
    return buffer.getvalue()
