"""
Convolutional VAE used as the functions of the logic tensor network.

Images travel as (batch, channels, height, width) tensors with pixel values in
[0, 1]. The encoder stacks conv, batch norm, leaky rectifier and 2x2 max
pooling blocks followed by dense layers; the decoder mirrors it and squashes
its output with a logistic sigmoid.
"""

import logging
from typing import NamedTuple, Sequence

import numpy as np
import torch
from torch import nn

from ..exceptions import DomainError, ShapeError
from ..models.config_models import ArchitectureConfig

logger = logging.getLogger(__name__)


class LatentCode(NamedTuple):
    mu: torch.Tensor
    logvar: torch.Tensor

    @property
    def size(self) -> int:
        return self.mu.shape[-1]

    def detach(self) -> "LatentCode":
        return LatentCode(self.mu.detach(), self.logvar.detach())

    @classmethod
    def prior(cls, batch: int, size: int, dtype: torch.dtype = torch.float32) -> "LatentCode":
        zeros = torch.zeros(batch, size, dtype=dtype)
        return cls(zeros, zeros.clone())


class NearestUpsample(nn.Module):
    """Doubles the spatial extent by repeating every pixel, using reshapes only."""

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        batch, channels, height, width = x.shape
        expanded = x[:, :, :, None, :, None].expand(batch, channels, height, 2, width, 2)
        return expanded.reshape(batch, channels, height * 2, width * 2)


def _conv_block(
    in_channels: int, out_channels: int, kernel_size: int, negative_slope: float
) -> list[nn.Module]:
    return [
        # batch norm follows, a conv bias would be cancelled by it
        nn.Conv2d(in_channels, out_channels, kernel_size, padding=kernel_size // 2, bias=False),
        nn.BatchNorm2d(out_channels),
        nn.LeakyReLU(negative_slope),
    ]


def _dense_stack(widths: Sequence[int], negative_slope: float) -> list[nn.Module]:
    layers: list[nn.Module] = []
    for in_features, out_features in zip(widths, widths[1:]):
        layers += [nn.Linear(in_features, out_features), nn.LeakyReLU(negative_slope)]
    return layers


class Encoder(nn.Module):
    def __init__(self, cfg: ArchitectureConfig) -> None:
        super().__init__()
        layers: list[nn.Module] = []
        in_channels = cfg.channels
        for depth in cfg.conv_depths:
            layers += _conv_block(in_channels, depth, cfg.kernel_size, cfg.negative_slope)
            layers.append(nn.MaxPool2d(2))
            in_channels = depth
        layers.append(nn.Flatten())
        reduced = cfg.image_size // 2 ** len(cfg.conv_depths)
        widths = [in_channels * reduced * reduced, *cfg.dense_widths]
        layers += _dense_stack(widths, cfg.negative_slope)
        self.features = nn.Sequential(*layers)
        self.mu = nn.Linear(widths[-1], cfg.latent_size)
        self.logvar = nn.Linear(widths[-1], cfg.latent_size)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        hidden = self.features(x)
        return self.mu(hidden), self.logvar(hidden)


class Decoder(nn.Module):
    def __init__(self, cfg: ArchitectureConfig) -> None:
        super().__init__()
        depths = list(reversed(cfg.conv_depths))
        reduced = cfg.image_size // 2 ** len(cfg.conv_depths)
        self.unflattened = (depths[0], reduced, reduced)

        widths = [cfg.latent_size, *reversed(cfg.dense_widths)]
        layers = _dense_stack(widths, cfg.negative_slope)
        layers += [
            nn.Linear(widths[-1], depths[0] * reduced * reduced),
            nn.LeakyReLU(cfg.negative_slope),
            nn.Unflatten(1, self.unflattened),
        ]
        for in_channels, out_channels in zip(depths, depths[1:] + [depths[-1]]):
            layers.append(NearestUpsample())
            layers += _conv_block(in_channels, out_channels, cfg.kernel_size, cfg.negative_slope)
        layers += [
            nn.Conv2d(depths[-1], cfg.channels, cfg.kernel_size, padding=cfg.kernel_size // 2),
            nn.Sigmoid(),
        ]
        self.layers = nn.Sequential(*layers)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.layers(z)


class LogicVAE(nn.Module):
    def __init__(self, cfg: ArchitectureConfig) -> None:
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)

    @property
    def latent_size(self) -> int:
        return self.cfg.latent_size

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (self.cfg.channels, self.cfg.image_size, self.cfg.image_size)

    def encode(self, x: torch.Tensor) -> LatentCode:
        if x.dim() != 4 or tuple(x.shape[1:]) != self.image_shape:
            raise ShapeError(
                f"Expected images of shape (B, {', '.join(map(str, self.image_shape))}), got {tuple(x.shape)}"
            )
        mu, logvar = self.encoder(x)
        return LatentCode(mu, logvar)

    def sample(self, code: LatentCode, noise: torch.Tensor) -> torch.Tensor:
        return sample(code, noise)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        if z.dim() != 2 or z.shape[1] != self.latent_size:
            raise ShapeError(
                f"Expected latent vectors of length {self.latent_size}, got shape {tuple(z.shape)}"
            )
        return self.decoder(z)

    def forward(
        self, x: torch.Tensor, noise: torch.Tensor
    ) -> tuple[LatentCode, torch.Tensor]:
        code = self.encode(x)
        return code, self.decode(self.sample(code, noise))


def sample(code: LatentCode, noise: torch.Tensor) -> torch.Tensor:
    """Reparameterized draw ``mu + exp(logvar / 2) * noise``."""
    if noise.shape != code.mu.shape:
        raise ShapeError(
            f"Noise of shape {tuple(noise.shape)} does not match code of shape {tuple(code.mu.shape)}"
        )
    return code.mu + torch.exp(code.logvar / 2) * noise


def build_model(cfg: ArchitectureConfig, dtype: torch.dtype = torch.float32) -> LogicVAE:
    model = LogicVAE(cfg).to(dtype)
    n_params = sum(param.numel() for param in model.parameters())
    logger.debug(f"Built {cfg.preset} model with {n_params} parameters, latent size {cfg.latent_size}")
    return model


def images_to_tensor(images: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(B, H, W, C) arrays in [0, 1] to (B, C, H, W) tensors."""
    if images.ndim != 4:
        raise ShapeError(f"Expected a (B, H, W, C) array, got shape {images.shape}")
    return torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2))).to(dtype)


@torch.no_grad()
def encode_images(
    model: LogicVAE, images: np.ndarray, batch_size: int = 256
) -> tuple[np.ndarray, np.ndarray]:
    """Encode images with frozen batch-norm statistics, returning (mu, logvar) arrays."""
    if len(images) == 0:
        raise DomainError("No images to encode")
    was_training = model.training
    model.eval()
    try:
        mus, logvars = [], []
        for start in range(0, len(images), batch_size):
            code = model.encode(images_to_tensor(images[start : start + batch_size]))
            mus.append(code.mu.numpy().astype(np.float64))
            logvars.append(code.logvar.numpy().astype(np.float64))
    finally:
        model.train(was_training)
    return np.concatenate(mus), np.concatenate(logvars)
