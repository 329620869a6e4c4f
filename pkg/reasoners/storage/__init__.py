from .base import ArtifactStorage, from_yaml, to_yaml
from .exceptions import NotFoundInStorage, StorageError
from .filesystem import FilesystemStorage
from .mock import MockStorage
from .utils import get_storage

__all__ = [
    "ArtifactStorage",
    "FilesystemStorage",
    "MockStorage",
    "NotFoundInStorage",
    "StorageError",
    "from_yaml",
    "get_storage",
    "to_yaml",
]
