import io
import json
import logging
from abc import ABC, abstractmethod
from typing import Any, TypeVar

import pandas as pd
import torch
import yaml
from pydantic import BaseModel

from ..models.artifacts import CheckpointMetadata, ReasonerModel
from .exceptions import StorageError

logger = logging.getLogger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)

CHECKPOINTS = "checkpoints"
REASONERS = "reasoners"
# first line of CSV artifacts that carry the digests they were produced from
HEADER_PREFIX = "# provenance: "


def to_yaml(document: BaseModel) -> str:
    return yaml.safe_dump(document.model_dump(mode="json"), sort_keys=True)


def from_yaml(text: str, model_class: type[ModelT]) -> ModelT:
    return model_class.model_validate(yaml.safe_load(text))


def provenance_header(provenance: dict[str, Any]) -> str:
    return f"{HEADER_PREFIX}{json.dumps(provenance, sort_keys=True)}\n"


def split_provenance(text: str) -> tuple[dict[str, Any], str]:
    """Separate a leading provenance line from the rest of a CSV document."""
    if not text.startswith(HEADER_PREFIX):
        return {}, text
    first, _, rest = text.partition("\n")
    return json.loads(first[len(HEADER_PREFIX) :]), rest


def reasoner_name(factor: str) -> str:
    return f"{REASONERS}/reasoner-{factor}.yaml"


class ArtifactStorage(ABC):
    """Run artifacts addressed by slash-separated names relative to the run."""

    @abstractmethod
    def write_bytes(self, name: str, data: bytes) -> None:
        pass

    @abstractmethod
    def read_bytes(self, name: str) -> bytes:
        pass

    @abstractmethod
    def exists(self, name: str) -> bool:
        pass

    @abstractmethod
    def list_names(self, prefix: str) -> list[str]:
        pass

    @abstractmethod
    def location(self, name: str) -> str:
        pass

    def write_text(self, name: str, text: str) -> None:
        self.write_bytes(name, text.encode())

    def read_text(self, name: str) -> str:
        return self.read_bytes(name).decode()

    def save_document(self, name: str, document: BaseModel) -> None:
        self.write_text(name, to_yaml(document))

    def load_document(self, name: str, model_class: type[ModelT]) -> ModelT:
        return from_yaml(self.read_text(name), model_class)

    def save_table(
        self, name: str, table: pd.DataFrame, provenance: dict[str, Any] | None = None
    ) -> None:
        header = "" if provenance is None else provenance_header(provenance)
        self.write_text(
            name, header + table.to_csv(index=False, float_format="%.9g", lineterminator="\n")
        )

    def load_table(self, name: str) -> pd.DataFrame:
        _, body = split_provenance(self.read_text(name))
        return pd.read_csv(io.StringIO(body))

    def table_provenance(self, name: str) -> dict[str, Any]:
        return split_provenance(self.read_text(name))[0]

    def save_checkpoint(
        self, name: str, state: dict[str, torch.Tensor], metadata: CheckpointMetadata
    ) -> str:
        buffer = io.BytesIO()
        torch.save(state, buffer)
        self.write_bytes(f"{CHECKPOINTS}/{name}/model.pt", buffer.getvalue())
        self.save_document(f"{CHECKPOINTS}/{name}/model.yaml", metadata)
        logger.debug(f"Saved checkpoint {name} at epoch {metadata.epoch}")
        return self.location(f"{CHECKPOINTS}/{name}")

    def load_checkpoint(
        self, name: str
    ) -> tuple[dict[str, torch.Tensor], CheckpointMetadata]:
        metadata = self.load_document(f"{CHECKPOINTS}/{name}/model.yaml", CheckpointMetadata)
        blob = self.read_bytes(f"{CHECKPOINTS}/{name}/model.pt")
        try:
            state = torch.load(io.BytesIO(blob), weights_only=True)
        except Exception as error:
            raise StorageError(f"Checkpoint {name} is corrupt: {error}") from error
        return state, metadata

    def save_reasoner(self, reasoner: ReasonerModel) -> None:
        self.save_document(reasoner_name(reasoner.factor), reasoner)

    def get_reasoner(self, factor: str) -> ReasonerModel:
        return self.load_document(reasoner_name(factor), ReasonerModel)

    def list_reasoners(self) -> list[ReasonerModel]:
        return [
            self.load_document(name, ReasonerModel)
            for name in self.list_names(f"{REASONERS}/")
            if name.endswith(".yaml")
        ]
