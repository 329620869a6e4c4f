import logging

import pytest

import reasoners.backend.utils
import reasoners.settings
import reasoners.storage.utils
from reasoners.backend import TorchBackend
from reasoners.models.config_models import RunConfig
from reasoners.settings import Settings
from reasoners.storage import MockStorage
from reasoners.vae.model import LogicVAE, build_model

from .testlibs import get_run_config

logger = logging.getLogger(__name__)


@pytest.fixture(autouse=True)
def reset_cached_singletons(monkeypatch: pytest.MonkeyPatch):
    # force creating new settings, storage and backend on every test
    monkeypatch.setattr(reasoners.settings, "settings", None)
    monkeypatch.setattr(reasoners.storage.utils, "storage", None)
    monkeypatch.setattr(reasoners.backend.utils, "backend", None)
    yield


@pytest.fixture
def settings() -> Settings:
    settings = Settings(log_level="debug", storage_type="mock")
    reasoners.settings.settings = settings
    return settings


@pytest.fixture
def mock_storage() -> MockStorage:
    return MockStorage()


@pytest.fixture
def backend() -> TorchBackend:
    return TorchBackend(num_threads=1)


@pytest.fixture
def run_config() -> RunConfig:
    return get_run_config()


@pytest.fixture
def tiny_model(run_config: RunConfig) -> LogicVAE:
    return build_model(run_config.model)
