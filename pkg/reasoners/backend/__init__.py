from .base import DiffBackend, LossClosure, ParameterSet
from .torch_backend import TorchBackend, finite_guard
from .utils import get_backend

__all__ = [
    "DiffBackend",
    "LossClosure",
    "ParameterSet",
    "TorchBackend",
    "finite_guard",
    "get_backend",
]
