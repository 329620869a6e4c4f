import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
import pydantic
import yaml

from ..backend import DiffBackend
from ..data.dataset_io import StoredDataset, load_image, read_dataset, write_dataset
from ..data.partition import Sample, build_partitions
from ..data.synthetic import CALIBRATION_SPLIT, TRAIN_SPLIT, evaluation_split, generate_synthetic
from ..evaluation import auroc, export_latents, latent_scatter, mi_report, roc_curve
from ..exceptions import ConfigError, ShapeError
from ..metrics import METRICS_NAME, RunMetrics
from ..models.artifacts import (
    CalibrationProvenance,
    EvaluationReport,
    FactorEvaluation,
    ReasonerModel,
)
from ..models.config_models import RunConfig
from ..reasoner import calibrate_all, is_ood, score_batch, score_components
from ..rules import build_rule_set
from ..settings import Settings
from ..storage import ArtifactStorage, from_yaml
from ..train_task import HISTORY_NAME, TrainingResult, history_table, load_model, train
from ..vae.model import LogicVAE, encode_images

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff"}
REPORT_NAME = "report.yaml"
SUMMARY_NAME = "summary.txt"


@dataclass
class RunContext:
    config: RunConfig
    settings: Settings
    storage: ArtifactStorage
    backend: DiffBackend
    metrics: RunMetrics = field(default_factory=RunMetrics)

    @property
    def dataset_dir(self) -> Path:
        directory = self.config.dataset.directory
        return directory if directory.is_absolute() else self.settings.out_dir / directory

    def write_metrics(self) -> None:
        self.storage.write_bytes(METRICS_NAME, self.metrics.exposition())


def load_config(path: Path, seed: int | None = None, deterministic: bool = False) -> RunConfig:
    if not path.is_file():
        raise ConfigError(f"Config file {path} does not exist")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as error:
        raise ConfigError(f"Config file {path} is not valid YAML: {error}") from error
    if not isinstance(raw, dict):
        raise ConfigError(f"Config file {path} must hold a mapping")
    if seed is not None:
        raw["seed"] = seed
    if deterministic:
        raw.setdefault("training", {})["deterministic"] = True
    try:
        config = RunConfig.model_validate(raw)
    except pydantic.ValidationError as error:
        raise ConfigError(f"Invalid config {path}:\n{error}") from error
    logger.debug(f"Loaded config {path} with digest {config.digest()}")
    return config


def _load_dataset(ctx: RunContext) -> StoredDataset:
    return read_dataset(
        ctx.dataset_dir,
        ctx.config.rules.factors,
        channels=ctx.config.dataset.channels,
        size=ctx.config.dataset.image_size,
    )


def _require_split(stored: StoredDataset, split: str) -> list[Sample]:
    samples = stored.split(split)
    if not samples:
        raise ConfigError(f"Dataset has no samples in split {split}, found {stored.splits}")
    return samples


def _stack(samples: Sequence[Sample]) -> np.ndarray:
    return np.stack([sample.image for sample in samples])


def cmd_gen_data(ctx: RunContext) -> str:
    config = ctx.config
    if config.dataset.source != "synthetic":
        raise ConfigError("dataset.source is not synthetic, there is nothing to generate")
    samples = generate_synthetic(config.dataset, config.rules.factors, config.seed)
    provenance = {
        "generator": config.dataset.model_dump(mode="json"),
        "factors": [factor.model_dump(mode="json") for factor in config.rules.factors],
        "seed": config.seed,
    }
    digest = write_dataset(samples, config.rules.factors, ctx.dataset_dir, provenance)
    print(f"dataset {ctx.dataset_dir} manifest sha256 {digest}")
    return digest


def cmd_train(ctx: RunContext) -> TrainingResult:
    config = ctx.config
    stored = _load_dataset(ctx)
    partitioned = build_partitions(_require_split(stored, TRAIN_SPLIT), config.rules.factors)
    rules = build_rule_set(partitioned, config.rules, config.model.latent_size)

    result = train(
        dataset=partitioned,
        rules=rules,
        config=config,
        storage=ctx.storage,
        backend=ctx.backend,
        manifest_digest=stored.digest,
        metrics=ctx.metrics,
    )
    provenance = {"config_digest": config.digest(), "manifest_digest": stored.digest}
    ctx.storage.save_table(HISTORY_NAME, history_table(result.history), provenance)
    ctx.metrics.record_provenance(provenance)
    ctx.write_metrics()
    print(f"checkpoint {result.checkpoint} best epoch {result.best_epoch}")
    return result


def cmd_calibrate(ctx: RunContext, checkpoint: str) -> list[ReasonerModel]:
    config = ctx.config
    stored = _load_dataset(ctx)
    calibration = _require_split(stored, CALIBRATION_SPLIT)
    model, _ = load_model(ctx.storage, checkpoint)

    provenance = CalibrationProvenance(
        manifest_digest=stored.digest,
        config_digest=config.digest(),
        checkpoint=checkpoint,
        seed=config.seed,
        n_points=len(calibration),
        quantile=config.reasoner.quantile,
    )
    reasoners = calibrate_all(
        model, _stack(calibration), config.rules.factors, config.reasoner, config.seed, provenance
    )
    for reasoner in reasoners:
        ctx.storage.save_reasoner(reasoner)
        print(
            f"reasoner {reasoner.factor}: {len(reasoner.components)} components, "
            f"threshold {reasoner.threshold:.6g}"
        )
    return reasoners


def _summary(report: EvaluationReport) -> str:
    lines = [f"checkpoint {report.checkpoint}", f"config sha256 {report.config_digest}"]
    for evaluation in report.evaluations.values():
        lines.append(
            f"{evaluation.factor}: AUROC {evaluation.auroc:.4f} "
            f"({evaluation.n_id} ID / {evaluation.n_ood} OOD)"
        )
    for info in report.mutual_information.factors.values():
        lines.append(
            f"{info.factor}: most informative dim {info.top_dim} ({info.top_mi:.4f} nats), "
            f"runner-up {info.runner_up_dim} ({info.runner_up_mi}), expected {info.expected_dims}, "
            f"match {'yes' if info.expected_is_top else 'no'}"
        )
    lines += [f"warning: {warning}" for warning in report.warnings]
    return "\n".join(lines) + "\n"


def _scatter_dims(config: RunConfig) -> tuple[int, int] | None:
    if config.eval.scatter_dims is not None:
        return config.eval.scatter_dims
    reserved = [dim for factor in config.rules.factors for dim in factor.dims]
    return (reserved[0], reserved[1]) if len(reserved) >= 2 else None


def cmd_evaluate(ctx: RunContext, checkpoint: str) -> EvaluationReport:
    config = ctx.config
    stored = _load_dataset(ctx)
    model, _ = load_model(ctx.storage, checkpoint)
    provenance = {
        "config_digest": config.digest(),
        "manifest_digest": stored.digest,
        "checkpoint": checkpoint,
    }
    ctx.metrics.record_provenance(provenance)
    warnings: list[str] = []
    evaluations = {}
    exported: list[Sample] = []

    for factor in config.rules.factors:
        samples = _require_split(stored, evaluation_split(factor.name))
        exported += samples
        reasoner = ctx.storage.get_reasoner(factor.name)
        labels = np.array(
            [int(sample.assignment[factor.name] not in factor.observed_ids) for sample in samples]
        )
        n_ood = int(labels.sum())
        n_id = len(labels) - n_ood
        if n_id != n_ood:
            warnings.append(
                f"Test split for {factor.name} is unbalanced: {n_id} ID and {n_ood} OOD samples"
            )
            logger.warning(warnings[-1])

        mus, _ = encode_images(model, _stack(samples))
        densities = score_batch(reasoner, mus)
        value = auroc(densities, labels)
        fpr, tpr = roc_curve(densities, labels)
        ctx.storage.save_table(
            f"roc-{factor.name}.csv", pd.DataFrame({"fpr": fpr, "tpr": tpr}), provenance
        )
        evaluations[factor.name] = FactorEvaluation(
            factor=factor.name, auroc=value, n_id=n_id, n_ood=n_ood, balanced=n_id == n_ood
        )
        ctx.metrics.reasoner_auroc.labels(factor=factor.name).set(value)
        logger.info(f"AUROC for {factor.name}: {value:.4f}")

    mi_samples = _require_split(stored, config.eval.mi_split)
    information = mi_report(
        model, mi_samples, config.rules.factors, config.eval.bins, config.eval.mi_split
    )
    mi_rows = []
    for info in information.factors.values():
        for rank, entry in enumerate(info.ranking, start=1):
            mi_rows.append({"factor": info.factor, "rank": rank, "dim": entry.dim, "mi": entry.mi})
            if rank <= 2:
                ctx.metrics.mutual_information.labels(factor=info.factor, rank=str(rank)).set(entry.mi)
    ctx.storage.save_table("mutual_information.csv", pd.DataFrame(mi_rows), provenance)

    latents = export_latents(model, mi_samples + exported, config.rules.factors)
    ctx.storage.save_table("latents.csv", latents, provenance)
    if dims := _scatter_dims(config):
        for factor in config.rules.factors:
            ctx.storage.write_bytes(
                f"scatter-{factor.name}.svg", latent_scatter(latents, dims[0], dims[1], factor)
            )

    report = EvaluationReport(
        config_digest=config.digest(),
        manifest_digest=stored.digest,
        checkpoint=checkpoint,
        evaluations=evaluations,
        mutual_information=information,
        warnings=warnings,
    )
    ctx.storage.save_document(REPORT_NAME, report)
    summary = _summary(report)
    ctx.storage.write_text(SUMMARY_NAME, summary)
    ctx.write_metrics()
    print(summary, end="")
    return report


def _image_paths(paths: Sequence[Path]) -> list[Path]:
    found = []
    for path in paths:
        if path.is_dir():
            found += sorted(
                child for child in path.iterdir() if child.suffix.lower() in IMAGE_SUFFIXES
            )
        else:
            found.append(path)
    return found


def _load_reasoners(ctx: RunContext, files: Sequence[Path]) -> list[ReasonerModel]:
    if not files:
        reasoners = ctx.storage.list_reasoners()
    else:
        reasoners = []
        for path in files:
            try:
                reasoners.append(from_yaml(path.read_text(), ReasonerModel))
            except (OSError, yaml.YAMLError, pydantic.ValidationError) as error:
                raise ConfigError(f"Cannot load reasoner {path}: {error}") from error
    if not reasoners:
        raise ConfigError("No reasoners to apply, run calibrate first")
    return reasoners


def _verdict(path: Path, model: LogicVAE, reasoners: Sequence[ReasonerModel]) -> str:
    image = load_image(path, model.cfg.channels, model.cfg.image_size)
    mus, _ = encode_images(model, image[None])
    verdicts = []
    for reasoner in reasoners:
        flagged, density = is_ood(reasoner, mus[0])
        _, posteriors = score_components(reasoner, mus[0])
        verdicts.append(
            f"{reasoner.factor}: density={density:.6g} threshold={reasoner.threshold:.6g} "
            f"ood={'yes' if flagged else 'no'} "
            f"posterior=[{','.join(f'{value:.4f}' for value in posteriors)}]"
        )
    return f"{path}\t" + "; ".join(verdicts)


def cmd_reason(
    ctx: RunContext, checkpoint: str, images: Sequence[Path], reasoner_files: Sequence[Path] = ()
) -> list[str]:
    model, _ = load_model(ctx.storage, checkpoint)
    reasoners = _load_reasoners(ctx, reasoner_files)
    lines = []
    for path in _image_paths(images):
        try:
            line = _verdict(path, model, reasoners)
        except ShapeError as error:
            logger.warning(f"Skipping {path}: {error}")
            line = f"{path}\terror: {error}"
        print(line)
        lines.append(line)
    return lines
