import hashlib
import json
from pathlib import Path
import sys
from typing import Any, Literal

if sys.version_info >= (3, 11):
    from typing import Self
else:
    from typing_extensions import Self

from pydantic import BaseModel, Field, model_validator

STREAK_FACTOR = "streak_intensity"
SCENE_FACTOR = "scene"
SCENE_PATTERNS = ("stripes-h", "checker", "stripes-v")


class FactorSpec(BaseModel):
    name: str = Field(
        description="Name of the generative factor.", examples=[STREAK_FACTOR]
    )
    values: list[str] = Field(
        description=(
            "Every value the factor can take, in value-id order. Values not listed in `observed` are only "
            "seen at test time."
        ),
        examples=[["none", "low", "moderate", "heavy"]],
        min_length=1,
    )
    observed: list[str] = Field(
        description="Values observed during training and calibration.",
        examples=[["low", "moderate"]],
        min_length=1,
    )
    dims: list[int] = Field(
        default=[],
        description="Latent dimensions reserved for this factor.",
        examples=[[3]],
    )
    edges: list[float] | None = Field(
        default=None,
        description=(
            "Bin edges for continuous factors, one bin per entry of `values`. The last bin is closed."
        ),
        examples=[[0.0, 0.001, 0.004, 0.007, 0.01]],
    )

    @model_validator(mode="after")
    def validate_values(self) -> Self:
        if len(set(self.values)) != len(self.values):
            raise ValueError(f"Factor {self.name} has duplicated values")
        if unknown := set(self.observed) - set(self.values):
            raise ValueError(
                f"Factor {self.name} observes undeclared values: {', '.join(sorted(unknown))}"
            )
        if len(set(self.dims)) != len(self.dims) or any(dim < 0 for dim in self.dims):
            raise ValueError(f"Factor {self.name} has invalid reserved dims {self.dims}")
        if self.edges is not None:
            if len(self.edges) != len(self.values) + 1:
                raise ValueError(
                    f"Factor {self.name} needs {len(self.values) + 1} edges, got {len(self.edges)}"
                )
            if any(low >= high for low, high in zip(self.edges, self.edges[1:])):
                raise ValueError(f"Factor {self.name} edges must be strictly increasing")
        return self

    def value_id(self, value: str) -> int:
        return self.values.index(value)

    @property
    def observed_ids(self) -> list[int]:
        return [self.value_id(value) for value in self.observed]

    @property
    def ood_values(self) -> list[str]:
        return [value for value in self.values if value not in self.observed]


def default_factors() -> list[FactorSpec]:
    return [
        FactorSpec(
            name=STREAK_FACTOR,
            values=["none", "low", "moderate", "heavy"],
            observed=["low", "moderate"],
            dims=[3],
            edges=[0.0, 0.001, 0.004, 0.007, 0.01],
        ),
        FactorSpec(
            name=SCENE_FACTOR,
            values=list(SCENE_PATTERNS),
            observed=["stripes-h", "checker"],
            dims=[6],
        ),
    ]


class DatasetConfig(BaseModel):
    source: Literal["synthetic", "manifest"] = Field(
        default="synthetic",
        description="Generate the synthetic two-factor dataset, or use an existing manifest directory.",
    )
    directory: Path = Field(
        default=Path("dataset"),
        description="Dataset directory, relative paths are resolved against the output directory.",
    )
    image_size: int = Field(default=32, ge=4)
    channels: int = Field(default=1, ge=1, le=3)
    jitter: float = Field(
        default=0.02, ge=0.0, description="Std-dev of the per-pixel Gaussian jitter."
    )
    train_per_partition: int = Field(default=500, ge=1)
    calibration_per_partition: int = Field(default=100, ge=1)
    test_per_side: int = Field(
        default=240,
        ge=1,
        description="In-distribution and OOD samples in each per-factor test split.",
    )
    streak_bands: dict[str, tuple[float, float]] = Field(
        default={
            "none": (0.0, 0.0),
            "low": (0.002, 0.003),
            "moderate": (0.005, 0.006),
            "heavy": (0.008, 0.009),
        },
        description="Intensity band sampled for every streak level.",
    )
    streak_scale: float = Field(
        default=50.0, gt=0.0, description="Pixel amplitude per unit of streak intensity."
    )
    streak_period: int = Field(default=6, ge=2)
    streak_density: float = Field(default=0.7, gt=0.0, le=1.0)

    @model_validator(mode="after")
    def validate_bands(self) -> Self:
        for level, (low, high) in self.streak_bands.items():
            if low > high or low < 0:
                raise ValueError(f"Invalid streak band for {level}: [{low}, {high}]")
        return self


class ArchitectureConfig(BaseModel):
    preset: Literal["desk", "reference"] = Field(
        default="desk",
        description=(
            "`desk` is the small default network, `reference` the four conv layer 128/64/32/16 network "
            "with 2048/1000/250 dense layers and 30 latent dimensions."
        ),
    )
    image_size: int = Field(default=32, ge=4)
    channels: int = Field(default=1, ge=1, le=3)
    latent_size: int = Field(default=16, ge=2)
    conv_depths: list[int] = Field(default=[32, 16], min_length=1)
    kernel_size: int = Field(default=3, ge=1)
    dense_widths: list[int] = Field(default=[128, 64])
    negative_slope: float = Field(
        default=0.1, ge=0.0, description="Slope of the leaky rectifier nonlinearity."
    )

    @model_validator(mode="before")
    @classmethod
    def apply_preset(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("preset") == "reference":
            data = dict(data)
            data.setdefault("conv_depths", [128, 64, 32, 16])
            data.setdefault("dense_widths", [2048, 1000, 250])
            data.setdefault("latent_size", 30)
        return data

    @model_validator(mode="after")
    def validate_pooling(self) -> Self:
        downscale = 2 ** len(self.conv_depths)
        if self.image_size % downscale:
            raise ValueError(
                f"Image size {self.image_size} must be divisible by {downscale} for {len(self.conv_depths)} "
                "pooling layers"
            )
        if self.kernel_size % 2 == 0:
            raise ValueError("Kernel size must be odd to keep spatial extents")
        return self


class RulesConfig(BaseModel):
    factors: list[FactorSpec] = Field(default_factory=default_factors, min_length=1)
    pairs: dict[str, list[tuple[str, str]]] = Field(
        default={},
        description=(
            "Optional explicit pair lists per factor, by partition label (P1, P2, ...). Factors without an "
            "entry use every pair of partitions that differ only in that factor."
        ),
        examples=[{"streak_intensity": [("P1", "P2"), ("P3", "P4")]}],
    )
    aggregator_p: float = Field(default=2.0, ge=1.0)
    rec_weight: float = Field(default=1.0, ge=0.0)
    reg_weight: float = Field(default=1.0, ge=0.0)
    adapt_weight: float = Field(default=1.0, ge=0.0)
    iso_weight: float = Field(default=1.0, ge=0.0)
    normalization: Literal["batch", "sub_batch"] = Field(
        default="batch",
        description=(
            "`batch` normalizes Rec/KLU over all partition sub-batches together, `sub_batch` normalizes "
            "every sub-batch on its own."
        ),
    )
    normalization_gradient: Literal["frozen", "through"] = Field(
        default="frozen",
        description=(
            "`frozen` treats the batch minimum and spread of every normalization as constants when "
            "differentiating, `through` differentiates the min-max map exactly."
        ),
    )

    @model_validator(mode="after")
    def validate_factors(self) -> Self:
        names = [factor.name for factor in self.factors]
        if len(set(names)) != len(names):
            raise ValueError(f"Duplicated factor names: {names}")
        if unknown := set(self.pairs) - set(names):
            raise ValueError(f"Pairs given for unknown factors: {', '.join(sorted(unknown))}")
        if self.rec_weight + self.reg_weight + self.adapt_weight + self.iso_weight <= 0:
            raise ValueError("At least one rule weight must be positive")
        return self

    def factor(self, name: str) -> FactorSpec:
        for factor in self.factors:
            if factor.name == name:
                return factor
        raise KeyError(name)


class TrainingConfig(BaseModel):
    epochs: int = Field(default=50, ge=0)
    batch_size: int = Field(default=32, ge=1, description="Samples per partition per step.")
    learning_rate: float = Field(default=1e-3, gt=0.0)
    patience: int = Field(default=10, ge=1)
    holdout_fraction: float = Field(
        default=0.1,
        ge=0.0,
        lt=1.0,
        description="Slice of every training partition held out for early stopping.",
    )
    prefetch: int = Field(
        default=0, ge=0, description="Batches assembled ahead of the optimizer in a worker thread."
    )
    deterministic: bool = True
    checkpoint: str = "best"


class ReasonerConfig(BaseModel):
    quantile: float = Field(
        default=0.05,
        ge=0.0,
        le=1.0,
        description="Calibration density quantile used as the OOD threshold.",
    )
    clusters: int | None = Field(
        default=None,
        ge=1,
        description="Number of k-means clusters, defaults to the number of observed values.",
    )
    max_iters: int = Field(default=100, ge=1)
    variance_floor: float = Field(default=1e-6, ge=1e-6)


class EvalConfig(BaseModel):
    bins: int = Field(default=20, ge=2)
    mi_split: str = Field(
        default="calibration", description="Split used for the mutual-information report."
    )
    scatter_dims: tuple[int, int] | None = Field(
        default=None,
        description="Latent dimensions to plot against each other, by default the first two reserved dims.",
    )


class RunConfig(BaseModel):
    seed: int = 0
    dataset: DatasetConfig = DatasetConfig()
    model: ArchitectureConfig = ArchitectureConfig()
    rules: RulesConfig = RulesConfig()
    training: TrainingConfig = TrainingConfig()
    reasoner: ReasonerConfig = ReasonerConfig()
    eval: EvalConfig = EvalConfig()

    @model_validator(mode="after")
    def validate_run(self) -> Self:
        latent_size = self.model.latent_size
        reserved: set[int] = set()
        for factor in self.rules.factors:
            if out_of_range := [dim for dim in factor.dims if dim >= latent_size]:
                raise ValueError(
                    f"Factor {factor.name} reserves dims {out_of_range} outside a latent space of size {latent_size}"
                )
            if overlap := reserved & set(factor.dims):
                raise ValueError(
                    f"Factor {factor.name} reserves dims {sorted(overlap)} already used by another factor"
                )
            reserved |= set(factor.dims)
        if latent_size < len(reserved) + 1:
            raise ValueError(
                f"Latent size {latent_size} must exceed the {len(reserved)} reserved dimensions"
            )
        if self.model.image_size != self.dataset.image_size:
            raise ValueError(
                f"Model image size {self.model.image_size} does not match dataset image size {self.dataset.image_size}"
            )
        if self.model.channels != self.dataset.channels:
            raise ValueError(
                f"Model channels {self.model.channels} do not match dataset channels {self.dataset.channels}"
            )
        return self

    def digest(self) -> str:
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()
