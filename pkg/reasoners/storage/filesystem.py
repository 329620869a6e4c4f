import logging
from pathlib import Path

from .base import ArtifactStorage
from .exceptions import NotFoundInStorage, StorageError

logger = logging.getLogger(__name__)


class FilesystemStorage(ArtifactStorage):
    def __init__(self, root: Path) -> None:
        self.root = root
        logger.info(f"FilesystemStorage initialized at {root}")

    def _path(self, name: str) -> Path:
        return self.root / name

    def write_bytes(self, name: str, data: bytes) -> None:
        path = self._path(name)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(data)
        except OSError as error:
            raise StorageError(f"Cannot write {path}: {error}") from error

    def read_bytes(self, name: str) -> bytes:
        path = self._path(name)
        if not path.is_file():
            raise NotFoundInStorage(f"No artifact {name} under {self.root}")
        return path.read_bytes()

    def exists(self, name: str) -> bool:
        return self._path(name).is_file()

    def list_names(self, prefix: str) -> list[str]:
        if not self.root.is_dir():
            return []
        return sorted(
            path.relative_to(self.root).as_posix()
            for path in self.root.rglob("*")
            if path.is_file() and path.relative_to(self.root).as_posix().startswith(prefix)
        )

    def location(self, name: str) -> str:
        return str(self._path(name))
