import logging

from .base import ArtifactStorage
from .exceptions import NotFoundInStorage

logger = logging.getLogger(__name__)


class MockStorage(ArtifactStorage):
    def __init__(self) -> None:
        self._artifacts: dict[str, bytes] = {}
        logger.info("MockStorage initialized.")

    def write_bytes(self, name: str, data: bytes) -> None:
        logger.debug(f"Storing {len(data)} bytes as {name}")
        self._artifacts[name] = data

    def read_bytes(self, name: str) -> bytes:
        if name not in self._artifacts:
            raise NotFoundInStorage(f"No artifact stored as {name}")
        return self._artifacts[name]

    def exists(self, name: str) -> bool:
        return name in self._artifacts

    def list_names(self, prefix: str) -> list[str]:
        return sorted(name for name in self._artifacts if name.startswith(prefix))

    def location(self, name: str) -> str:
        return f"mock://{name}"
