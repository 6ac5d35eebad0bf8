"""Slice autoencoder: joint (image, mask) slice encoder/decoder with slice-position conditioning."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import ConfigurationError, DomainError, ValidationError

LOGVAR_RANGE = (-30.0, 20.0)


def positional_embedding(index: int, depth: int, d_pos: int = 64) -> np.ndarray:
    """Sinusoidal code of a slice's relative position.

    The slice index is mapped to ``p = 1000 * i / (D - 1)`` and encoded as
    interleaved ``sin(p / 10000^(2k/d_pos))``, ``cos(...)`` pairs.
    """
    if d_pos % 2:
        raise DomainError(f"d_pos must be even, got {d_pos}")
    if not 0 <= index < depth:
        raise DomainError(f"slice index {index} outside [0, {depth})")
    p = 1000.0 * index / (depth - 1) if depth > 1 else 0.0
    k = np.arange(d_pos // 2, dtype=np.float64)
    angle = p / 10000.0 ** (2.0 * k / d_pos)
    out = np.empty(d_pos, dtype=np.float64)
    out[0::2] = np.sin(angle)
    out[1::2] = np.cos(angle)
    return out


def positional_table(depth: int, d_pos: int) -> np.ndarray:
    return np.stack([positional_embedding(i, depth, d_pos) for i in range(depth)])


@dataclass
class SlicePair:
    image: np.ndarray
    mask: np.ndarray
    index: int
    depth: int

    def __post_init__(self):
        if self.image.shape != self.mask.shape:
            raise ValidationError(f"image {self.image.shape} and mask {self.mask.shape} differ")
        if not 0 <= self.index < self.depth:
            raise ValidationError(f"slice index {self.index} outside [0, {self.depth})")


@dataclass
class VaeConfig:
    slice_shape: tuple[int, int] = (32, 32)  # (W, H)
    z_channels: int = 1
    channels: tuple[int, int] = (32, 64)
    d_pos: int = 64
    norm_groups: int = 8
    lambda_kl: float = 1e-4
    lambda_mask: float = 1.0

    def __post_init__(self):
        self.slice_shape = tuple(int(v) for v in self.slice_shape)
        self.channels = tuple(int(v) for v in self.channels)
        w, h = self.slice_shape
        if w % 4 or h % 4:
            raise ConfigurationError(f"slice shape {self.slice_shape} must be divisible by 4")
        if len(self.channels) != 2:
            raise ConfigurationError("channels must hold exactly two widths (one per downsampling stage)")
        if self.d_pos % 2:
            raise ConfigurationError("d_pos must be even")

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        """``(C_z, H/4, W/4)`` as laid out in tensors."""
        w, h = self.slice_shape
        return (self.z_channels, h // 4, w // 4)

    def to_json(self) -> dict:
        d = asdict(self)
        d["slice_shape"] = list(self.slice_shape)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "VaeConfig":
        return cls(**obj)


def _groups(channels: int, wanted: int) -> int:
    return math.gcd(channels, max(wanted, 1))


class ResBlock2d(nn.Module):
    def __init__(self, channels: int, groups: int):
        super().__init__()
        g = _groups(channels, groups)
        self.norm1 = nn.GroupNorm(g, channels)
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm2 = nn.GroupNorm(g, channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x: Tensor) -> Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = self.conv2(F.silu(self.norm2(h)))
        return x + h


class Encoder(nn.Module):
    def __init__(self, cfg: VaeConfig):
        super().__init__()
        c0, c1 = cfg.channels
        self.conv_in = nn.Conv2d(2, c0, 3, padding=1)
        self.pos = nn.Linear(cfg.d_pos, c0)
        self.block0 = ResBlock2d(c0, cfg.norm_groups)
        self.down0 = nn.Conv2d(c0, c1, 3, stride=2, padding=1)
        self.block1 = ResBlock2d(c1, cfg.norm_groups)
        self.down1 = nn.Conv2d(c1, c1, 3, stride=2, padding=1)
        self.block2 = ResBlock2d(c1, cfg.norm_groups)
        self.norm_out = nn.GroupNorm(_groups(c1, cfg.norm_groups), c1)
        self.conv_out = nn.Conv2d(c1, 2 * cfg.z_channels, 3, padding=1)

    def forward(self, x: Tensor, pos: Tensor) -> Tensor:
        h = self.conv_in(x) + self.pos(pos)[:, :, None, None]
        h = self.down0(self.block0(h))
        h = self.down1(self.block1(h))
        h = self.block2(h)
        return self.conv_out(F.silu(self.norm_out(h)))


class Decoder(nn.Module):
    def __init__(self, cfg: VaeConfig):
        super().__init__()
        c0, c1 = cfg.channels
        self.conv_in = nn.Conv2d(cfg.z_channels, c1, 3, padding=1)
        self.pos = nn.Linear(cfg.d_pos, c1)
        self.block0 = ResBlock2d(c1, cfg.norm_groups)
        self.up0 = nn.Conv2d(c1, c1, 3, padding=1)
        self.block1 = ResBlock2d(c1, cfg.norm_groups)
        self.up1 = nn.Conv2d(c1, c0, 3, padding=1)
        self.block2 = ResBlock2d(c0, cfg.norm_groups)
        self.norm_out = nn.GroupNorm(_groups(c0, cfg.norm_groups), c0)
        self.conv_out = nn.Conv2d(c0, 2, 3, padding=1)

    def forward(self, z: Tensor, pos: Tensor) -> Tensor:
        h = self.conv_in(z) + self.pos(pos)[:, :, None, None]
        h = self.block0(h)
        h = self.up0(F.interpolate(h, scale_factor=2.0, mode="nearest"))
        h = self.block1(h)
        h = self.up1(F.interpolate(h, scale_factor=2.0, mode="nearest"))
        h = self.block2(h)
        return self.conv_out(F.silu(self.norm_out(h)))


class SliceVAE(nn.Module):
    """Encoder ``q(z | x, m, l(i))`` and decoder ``p(x, m | z, l(i))`` over 2-D slices.

    Images and masks enter as two input channels; the decoder emits an image in
    ``[0, 1]`` through a sigmoid and raw mask logits.
    """

    def __init__(self, cfg: VaeConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def positions(self, indices, depth: int) -> Tensor:
        table = positional_table(depth, self.cfg.d_pos)
        dtype = next(self.parameters()).dtype
        return torch.as_tensor(table[np.asarray(indices, dtype=np.int64)], dtype=dtype)

    def _check_spatial(self, x: Tensor):
        w, h = self.cfg.slice_shape
        if tuple(x.shape[-2:]) != (h, w):
            raise ConfigurationError(f"slice spatial shape {tuple(x.shape[-2:])} != configured (H, W)={(h, w)}")

    def encode(self, image: Tensor, mask: Tensor, pos: Tensor) -> tuple[Tensor, Tensor]:
        """``image``, ``mask``: ``(B, H, W)``; ``pos``: ``(B, d_pos)``. Returns ``(mu, logvar)``."""
        self._check_spatial(image)
        x = torch.stack([image, mask.to(image.dtype)], dim=1)
        mu, logvar = self.encoder(x, pos).chunk(2, dim=1)
        return mu, logvar.clamp(*LOGVAR_RANGE)

    def decode(self, z: Tensor, pos: Tensor) -> tuple[Tensor, Tensor]:
        out = self.decoder(z, pos)
        return torch.sigmoid(out[:, 0]), out[:, 1]

    def forward(self, image, mask, pos, noise):
        mu, logvar = self.encode(image, mask, pos)
        z = reparameterize(mu, logvar, noise)
        image_hat, mask_logits = self.decode(z, pos)
        return image_hat, mask_logits, mu, logvar


def reparameterize(mu, logvar, noise):
    return mu + torch.exp(0.5 * logvar) * noise


def kl_divergence(mu: Tensor, logvar: Tensor) -> Tensor:
    return 0.5 * torch.mean(torch.exp(logvar) + mu * mu - 1.0 - logvar)


def vae_loss(model: SliceVAE, image: Tensor, mask: Tensor, pos: Tensor, noise: Tensor):
    """Return ``(total, recon_image, recon_mask, kl)`` for a batch of slices."""
    image_hat, mask_logits, mu, logvar = model(image, mask, pos, noise)
    recon_image = F.mse_loss(image_hat, image)
    recon_mask = F.binary_cross_entropy_with_logits(mask_logits, mask.to(mask_logits.dtype))
    kl = kl_divergence(mu, logvar)
    total = recon_image + model.cfg.lambda_mask * recon_mask + model.cfg.lambda_kl * kl
    return total, recon_image, recon_mask, kl


@torch.no_grad()
def encode_volume(model: SliceVAE, image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Posterior means of every slice of a ``(D, H, W)`` volume, stacked as ``(C, D, H', W')``."""
    depth = image.shape[0]
    dtype = next(model.parameters()).dtype
    img = torch.as_tensor(image, dtype=dtype)
    msk = torch.as_tensor(mask, dtype=dtype)
    mu, _ = model.encode(img, msk, model.positions(range(depth), depth))
    return mu.permute(1, 0, 2, 3).contiguous().numpy()


@torch.no_grad()
def decode_volume(model: SliceVAE, code: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Decode a ``(C, D, H', W')`` latent volume slice by slice.

    Returns the ``(D, H, W)`` image and the ``(D, H, W)`` mask logits.
    """
    depth = code.shape[1]
    dtype = next(model.parameters()).dtype
    z = torch.as_tensor(code, dtype=dtype).permute(1, 0, 2, 3)
    image, logits = model.decode(z, model.positions(range(depth), depth))
    return image.numpy(), logits.numpy()
