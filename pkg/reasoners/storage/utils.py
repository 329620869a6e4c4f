import logging

from ..exceptions import ConfigError
from ..settings import Settings, get_settings
from .base import ArtifactStorage
from .filesystem import FilesystemStorage
from .mock import MockStorage

logger = logging.getLogger(__name__)

# cached loaded storage
storage: ArtifactStorage | None = None


def get_storage(
    settings: Settings | None = None, rebuild_storage: bool = False
) -> ArtifactStorage:
    global storage
    if settings is None:
        settings = get_settings()
    if storage is None or rebuild_storage:
        if settings.storage_type == "mock":
            logger.info("Returning mock storage")
            storage = MockStorage()

        elif settings.storage_type == "filesystem":
            logger.info("Returning filesystem storage")
            storage = FilesystemStorage(settings.out_dir)
        else:
            raise ConfigError(f"Invalid storage type: {settings.storage_type}")

    return storage
