import logging
from abc import ABC, abstractmethod
from typing import Callable, Literal, Mapping, TypeAlias

import torch
from torch import nn

logger = logging.getLogger(__name__)


ParameterSet: TypeAlias = dict[str, torch.Tensor]
LossClosure: TypeAlias = Callable[[ParameterSet], torch.Tensor]


class DiffBackend(ABC):
    @abstractmethod
    def parameters(self, graph: nn.Module) -> ParameterSet:
        pass

    @abstractmethod
    def forward(
        self,
        graph: nn.Module,
        inputs: torch.Tensor | tuple[torch.Tensor, ...],
        params: Mapping[str, torch.Tensor] | None = None,
    ) -> torch.Tensor:
        pass

    @abstractmethod
    def backward(self, params: ParameterSet, loss: torch.Tensor) -> ParameterSet:
        pass

    @abstractmethod
    def finite_diff_check(
        self,
        loss_fn: LossClosure,
        params: ParameterSet,
        step: float,
        samples_per_tensor: int = 4,
        seed: int = 0,
        relative_to: Literal["entry", "gradient"] = "entry",
    ) -> float:
        pass

    @abstractmethod
    def seed(self, seed: int, deterministic: bool) -> None:
        pass
