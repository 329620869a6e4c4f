import logging
from pathlib import Path
from typing import Literal

from pydantic_settings import BaseSettings, SettingsConfigDict

log = logging.getLogger(__name__)


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="REASONERS_")

    log_level: str = "info"
    backend_type: Literal["torch"] = "torch"
    storage_type: Literal["filesystem", "mock"] = "filesystem"
    out_dir: Path = Path("runs")
    # single-threaded kernels keep reruns bit-identical
    num_threads: int = 1


def get_settings() -> Settings:
    global settings
    if not settings:
        log.info("Loading config settings from the environment...")
        settings = Settings()

    return settings


settings: Settings | None = None
