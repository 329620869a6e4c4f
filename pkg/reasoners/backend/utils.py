import logging

from ..exceptions import ConfigError
from ..settings import Settings, get_settings
from .base import DiffBackend
from .torch_backend import TorchBackend

logger = logging.getLogger(__name__)

# cached loaded backend
backend: DiffBackend | None = None


def get_backend(
    settings: Settings | None = None, rebuild_backend: bool = False
) -> DiffBackend:
    global backend
    if settings is None:
        settings = get_settings()
    if backend is None or rebuild_backend:
        if settings.backend_type == "torch":
            logger.info("Returning torch backend")
            backend = TorchBackend(num_threads=settings.num_threads)
        else:
            raise ConfigError(f"Invalid backend type: {settings.backend_type}")

    return backend
