from enum import Enum
import sys

if sys.version_info >= (3, 11):
    from typing import Self
else:
    from typing_extensions import Self

from pydantic import BaseModel, Field, model_validator

from .config_models import ArchitectureConfig, TrainingConfig

VARIANCE_FLOOR = 1e-6
WEIGHT_TOLERANCE = 1e-9


class TrainingState(str, Enum):
    pending = "pending"
    running = "running"
    failed = "failed"
    diverged = "diverged"
    successful = "successful"


class TrainingStatus(BaseModel):
    state: TrainingState = TrainingState.pending
    long_status: str = ""
    checkpoint: str | None = Field(
        default=None, description="Last good checkpoint written by the run."
    )
    best_epoch: int | None = None
    config_digest: str = ""


class CheckpointMetadata(BaseModel):
    architecture: ArchitectureConfig
    training: TrainingConfig
    seed: int
    epoch: int = Field(description="Epochs trained when the checkpoint was written.")
    total_loss: float | None = Field(
        default=None, description="Held-out total loss, null for the initial checkpoint."
    )
    config_digest: str
    manifest_digest: str

    @property
    def latent_size(self) -> int:
        return self.architecture.latent_size


class LossRecord(BaseModel):
    epoch: int
    components: dict[str, float] = Field(
        description="Mean training value of every rule and the total over the epoch."
    )
    holdout_total: float | None = None


class MixtureComponent(BaseModel):
    center: list[float]
    variance: list[float]
    weight: float = Field(gt=0.0, le=1.0)

    @model_validator(mode="after")
    def validate_shapes(self) -> Self:
        if len(self.center) != len(self.variance):
            raise ValueError("Center and variance must have one entry per dimension")
        if any(value < VARIANCE_FLOOR for value in self.variance):
            raise ValueError(f"Variances must be at least {VARIANCE_FLOOR}")
        return self


class CalibrationProvenance(BaseModel):
    manifest_digest: str
    config_digest: str
    checkpoint: str
    seed: int
    n_points: int
    quantile: float


class ReasonerModel(BaseModel):
    factor: str
    dims: list[int] = Field(min_length=1)
    components: list[MixtureComponent] = Field(min_length=1)
    threshold: float = Field(ge=0.0, description="Density below which a code is OOD.")
    provenance: CalibrationProvenance | None = None

    @model_validator(mode="after")
    def validate_mixture(self) -> Self:
        if abs(sum(component.weight for component in self.components) - 1.0) > WEIGHT_TOLERANCE:
            raise ValueError(f"Mixture weights of {self.factor} must sum to 1")
        if any(len(component.center) != len(self.dims) for component in self.components):
            raise ValueError(f"Every component of {self.factor} needs one entry per dim")
        return self


class FactorEvaluation(BaseModel):
    factor: str
    auroc: float
    n_id: int
    n_ood: int
    balanced: bool


class DimInformation(BaseModel):
    dim: int
    mi: float = Field(ge=0.0, description="Mutual information in nats.")


class FactorInformation(BaseModel):
    factor: str
    ranking: list[DimInformation]
    expected_dims: list[int]
    top_dim: int
    top_mi: float
    runner_up_dim: int | None = None
    runner_up_mi: float | None = None
    expected_is_top: bool

    @model_validator(mode="after")
    def validate_ranking(self) -> Self:
        values = [entry.mi for entry in self.ranking]
        if values != sorted(values, reverse=True):
            raise ValueError("Ranking must be sorted by descending mutual information")
        return self


class MIReport(BaseModel):
    split: str
    bins: int
    factors: dict[str, FactorInformation]


class EvaluationReport(BaseModel):
    config_digest: str
    manifest_digest: str
    checkpoint: str
    evaluations: dict[str, FactorEvaluation]
    mutual_information: MIReport
    warnings: list[str] = []
