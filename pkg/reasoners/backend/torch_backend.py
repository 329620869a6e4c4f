import logging
from contextlib import contextmanager
from typing import Iterator, Literal, Mapping

import torch
from torch import nn
from torch.func import functional_call

from ..exceptions import ContractError, DomainError, NumericError, ShapeError
from .base import DiffBackend, LossClosure, ParameterSet

logger = logging.getLogger(__name__)

# denominator floor of the finite difference relative error
NUMERIC_EPS = 1e-8


def _check_finite_hook(location: str):
    def hook(module: nn.Module, inputs: object, output: object) -> None:
        outputs = output if isinstance(output, tuple) else (output,)
        for value in outputs:
            if isinstance(value, torch.Tensor) and not bool(torch.isfinite(value).all()):
                raise NumericError(
                    f"Non-finite output from {type(module).__name__}", location=location
                )

    return hook


@contextmanager
def finite_guard(graph: nn.Module) -> Iterator[None]:
    """Raise NumericError naming the first submodule producing a non-finite value."""
    handles = [
        module.register_forward_hook(_check_finite_hook(name or type(graph).__name__))
        for name, module in graph.named_modules()
    ]
    try:
        yield
    finally:
        for handle in handles:
            handle.remove()


class TorchBackend(DiffBackend):
    def __init__(self, num_threads: int = 1) -> None:
        self.num_threads = num_threads

    def parameters(self, graph: nn.Module) -> ParameterSet:
        return dict(graph.named_parameters())

    def forward(
        self,
        graph: nn.Module,
        inputs: torch.Tensor | tuple[torch.Tensor, ...],
        params: Mapping[str, torch.Tensor] | None = None,
    ) -> torch.Tensor:
        args = inputs if isinstance(inputs, tuple) else (inputs,)
        with finite_guard(graph):
            try:
                if params is None:
                    return graph(*args)
                return functional_call(graph, dict(params), args)
            except RuntimeError as error:
                # torch reports shape mismatches of the operator set as RuntimeError
                raise ShapeError(f"Forward pass failed: {error}") from error

    def backward(self, params: ParameterSet, loss: torch.Tensor) -> ParameterSet:
        if loss.numel() != 1:
            raise ContractError(
                f"Loss must be a scalar, got a tensor of shape {tuple(loss.shape)}"
            )
        if not bool(torch.isfinite(loss).all()):
            raise NumericError("Non-finite loss", location="backward")

        names = list(params)
        if not loss.requires_grad:
            logger.debug("Loss does not depend on any parameter, gradients are zero")
            return {name: torch.zeros_like(params[name]) for name in names}

        grads = torch.autograd.grad(
            loss.reshape(()),
            [params[name] for name in names],
            allow_unused=True,
            retain_graph=True,
        )
        return {
            name: torch.zeros_like(params[name]) if grad is None else grad
            for name, grad in zip(names, grads)
        }

    def finite_diff_check(
        self,
        loss_fn: LossClosure,
        params: ParameterSet,
        step: float,
        samples_per_tensor: int = 4,
        seed: int = 0,
        relative_to: Literal["entry", "gradient"] = "entry",
    ) -> float:
        """
        Compare analytic gradients of ``loss_fn`` with central differences.

        Returns the largest ``|analytic - numeric| / (scale + 1e-8)`` over
        ``samples_per_tensor`` randomly chosen entries of every parameter. The
        scale is ``|numeric|`` of the entry itself, or with
        ``relative_to="gradient"`` the largest absolute analytic gradient over
        all parameters, which keeps near-zero entries from dominating.
        """
        if step <= 0:
            raise DomainError(f"Finite difference step must be positive, got {step}")

        analytic = self.backward(params, loss_fn(params))
        gradient_scale = max(
            (grad.abs().max().item() for grad in analytic.values() if grad.numel()), default=0.0
        )
        generator = torch.Generator().manual_seed(seed)
        worst = 0.0
        for name, param in params.items():
            flat = param.detach().reshape(-1)
            count = min(samples_per_tensor, flat.numel())
            indices = torch.randperm(flat.numel(), generator=generator)[:count]
            for index in indices.tolist():
                numeric = self._central_difference(loss_fn, params, name, index, step)
                exact = analytic[name].reshape(-1)[index].item()
                scale = gradient_scale if relative_to == "gradient" else abs(numeric)
                error = abs(exact - numeric) / (scale + NUMERIC_EPS)
                logger.debug(
                    f"{name}[{index}]: analytic={exact:.6e} numeric={numeric:.6e} error={error:.3e}"
                )
                worst = max(worst, error)
        return worst

    @staticmethod
    def _central_difference(
        loss_fn: LossClosure, params: ParameterSet, name: str, index: int, step: float
    ) -> float:
        values = []
        for delta in (step, -step):
            perturbed = dict(params)
            shifted = params[name].detach().clone()
            shifted.view(-1)[index] += delta
            perturbed[name] = shifted
            with torch.no_grad():
                values.append(loss_fn(perturbed).item())
        return (values[0] - values[1]) / (2 * step)

    def seed(self, seed: int, deterministic: bool) -> None:
        torch.manual_seed(seed)
        torch.set_num_threads(self.num_threads)
        torch.use_deterministic_algorithms(deterministic, warn_only=True)
        logger.debug(
            f"Seeded torch with {seed}, deterministic={deterministic}, threads={self.num_threads}"
        )
