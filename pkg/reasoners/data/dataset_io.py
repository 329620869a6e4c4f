import hashlib
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd
from PIL import Image, UnidentifiedImageError

from ..exceptions import ConfigError, ShapeError
from ..models.config_models import FactorSpec
from ..storage.base import provenance_header, split_provenance
from .partition import Sample

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.csv"
MEASURED_SUFFIX = "_measured"


@dataclass
class StoredDataset:
    samples: list[Sample]
    provenance: dict[str, Any]
    digest: str

    def split(self, name: str) -> list[Sample]:
        return [sample for sample in self.samples if sample.split == name]

    @property
    def splits(self) -> list[str]:
        return sorted({sample.split for sample in self.samples})


def _to_pixels(image: np.ndarray) -> Image.Image:
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
    if pixels.shape[-1] == 1:
        return Image.fromarray(pixels[..., 0], mode="L")
    return Image.fromarray(pixels, mode="RGB")


def load_image(path: Path, channels: int, size: int | None = None) -> np.ndarray:
    """Read an 8-bit raster file into an (H, W, C) float array in [0, 1]."""
    try:
        with Image.open(path) as raster:
            converted = raster.convert("L" if channels == 1 else "RGB")
            pixels = np.asarray(converted, dtype=np.float32) / 255.0
    except (OSError, UnidentifiedImageError) as error:
        raise ShapeError(f"Cannot read image {path}: {error}") from error
    if pixels.ndim == 2:
        pixels = pixels[..., None]
    if size is not None and pixels.shape[:2] != (size, size):
        raise ShapeError(f"Image {path} is {pixels.shape[1]}x{pixels.shape[0]}, expected {size}x{size}")
    return pixels


def file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_dataset(
    samples: Sequence[Sample],
    factors: Sequence[FactorSpec],
    directory: Path,
    provenance: dict[str, Any],
) -> str:
    """Write images and the manifest, returning the manifest digest."""
    rows = []
    for sample in samples:
        relative = Path("images") / sample.split / f"{sample.sample_id}.png"
        target = directory / relative
        target.parent.mkdir(parents=True, exist_ok=True)
        _to_pixels(sample.image).save(target, format="PNG")
        row: dict[str, Any] = {
            "path": relative.as_posix(),
            "sample_id": sample.sample_id,
            "split": sample.split,
            "partition": "-".join(str(value) for value in sample.key(factors)),
        }
        for factor in factors:
            row[factor.name] = sample.assignment[factor.name]
        for factor in factors:
            if factor.name in sample.measurements:
                row[f"{factor.name}{MEASURED_SUFFIX}"] = sample.measurements[factor.name]
        rows.append(row)

    table = pd.DataFrame(rows)
    buffer = io.StringIO()
    buffer.write(provenance_header(provenance))
    table.to_csv(buffer, index=False, float_format="%.9g", lineterminator="\n")

    manifest = directory / MANIFEST_NAME
    manifest.write_text(buffer.getvalue())
    digest = file_digest(manifest)
    logger.info(f"Wrote {len(rows)} samples to {directory}, manifest digest {digest}")
    return digest


def read_provenance(manifest: Path) -> dict[str, Any]:
    with manifest.open() as handle:
        first = handle.readline()
    return split_provenance(first)[0]


def read_dataset(
    directory: Path, factors: Sequence[FactorSpec], channels: int, size: int
) -> StoredDataset:
    manifest = directory / MANIFEST_NAME
    if not manifest.is_file():
        raise ConfigError(f"No dataset manifest at {manifest}")

    provenance, body = split_provenance(manifest.read_text())
    table = pd.read_csv(io.StringIO(body))
    if missing := {factor.name for factor in factors} - set(table.columns):
        raise ConfigError(f"Manifest {manifest} has no column for factors {sorted(missing)}")

    samples = []
    for record in table.to_dict(orient="records"):
        measurements = {
            factor.name: float(record[f"{factor.name}{MEASURED_SUFFIX}"])
            for factor in factors
            if f"{factor.name}{MEASURED_SUFFIX}" in record
            and not pd.isna(record[f"{factor.name}{MEASURED_SUFFIX}"])
        }
        samples.append(
            Sample(
                sample_id=str(record["sample_id"]),
                image=load_image(directory / record["path"], channels, size),
                assignment={factor.name: int(record[factor.name]) for factor in factors},
                split=str(record["split"]),
                measurements=measurements,
            )
        )
    logger.info(f"Loaded {len(samples)} samples from {directory}")
    return StoredDataset(samples=samples, provenance=provenance, digest=file_digest(manifest))
