"""Attention-free 3-D U-Net noise predictor with timestep and tumor-feature conditioning.

Every residual block receives ``timestep_embedding(t) + tau(c)`` and applies it
through a scale-shift norm: ``GroupNorm(h) * (1 + s) + b``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import ConfigurationError, DomainError
from .features import N_FEATURES


@dataclass
class DenoiserConfig:
    in_channels: int = 1
    base_channels: int = 32
    channel_mults: tuple[int, ...] = (1, 2, 4)
    d_emb: int = 128
    tau_hidden: tuple[int, ...] = (64, 128)
    norm_groups: int = 8
    # fixed by design; present so that checkpoints are self-describing
    res_blocks_per_level: int = 1
    attention: bool = False

    def __post_init__(self):
        self.channel_mults = tuple(int(m) for m in self.channel_mults)
        self.tau_hidden = tuple(int(m) for m in self.tau_hidden)
        if self.res_blocks_per_level != 1:
            raise ConfigurationError("exactly one residual block per resolution is supported")
        if self.attention:
            raise ConfigurationError("attention modules are not supported")
        if self.d_emb % 2:
            raise ConfigurationError("d_emb must be even")
        if not self.channel_mults:
            raise ConfigurationError("channel_mults must not be empty")

    @property
    def levels(self) -> int:
        return len(self.channel_mults)

    def check_shape(self, spatial) -> None:
        factor = 2 ** (self.levels - 1)
        if any(int(n) % factor for n in spatial):
            raise ConfigurationError(f"latent dims {tuple(spatial)} not divisible by {factor}")

    def to_json(self) -> dict:
        d = asdict(self)
        d["channel_mults"] = list(self.channel_mults)
        d["tau_hidden"] = list(self.tau_hidden)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "DenoiserConfig":
        return cls(**obj)


def sinusoid(t, dim: int) -> Tensor:
    """Raw interleaved ``sin/cos`` features of (possibly batched) timesteps."""
    t = torch.as_tensor(t, dtype=torch.float64).reshape(-1)
    k = torch.arange(dim // 2, dtype=torch.float64)
    angle = t[:, None] / (10000.0 ** (2.0 * k / dim))[None, :]
    out = torch.empty(t.shape[0], dim, dtype=torch.float64)
    out[:, 0::2] = torch.sin(angle)
    out[:, 1::2] = torch.cos(angle)
    return out


def scale_shift(h: Tensor, scale: Tensor, shift: Tensor, num_groups: int) -> Tensor:
    """``GroupNorm(h) * (1 + scale) + shift`` with per-channel ``scale``/``shift`` of shape ``(B, C)``."""
    extra = (1,) * (h.dim() - 2)
    normed = F.group_norm(h, num_groups)
    return normed * (1 + scale.reshape(*scale.shape, *extra)) + shift.reshape(*shift.shape, *extra)


def _groups(channels: int, wanted: int) -> int:
    return math.gcd(channels, max(wanted, 1))


class ResBlock3d(nn.Module):
    def __init__(self, c_in: int, c_out: int, d_emb: int, groups: int):
        super().__init__()
        self.groups_in = _groups(c_in, groups)
        self.groups_out = _groups(c_out, groups)
        self.norm1 = nn.GroupNorm(self.groups_in, c_in)
        self.conv1 = nn.Conv3d(c_in, c_out, 3, padding=1)
        self.emb = nn.Linear(d_emb, 2 * c_out)
        self.conv2 = nn.Conv3d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv3d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x: Tensor, emb: Tensor) -> Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        s, b = self.emb(F.silu(emb)).chunk(2, dim=1)
        h = scale_shift(h, s, b, self.groups_out)
        h = self.conv2(F.silu(h))
        return self.skip(x) + h


class ConditionMLP(nn.Module):
    """The feature embedder ``tau``: standardize the 9 features, then an MLP."""

    def __init__(self, d_emb: int, hidden=(64, 128)):
        super().__init__()
        widths = [N_FEATURES, *hidden]
        layers: list[nn.Module] = []
        for a, b in zip(widths[:-1], widths[1:]):
            layers += [nn.Linear(a, b), nn.SiLU()]
        layers.append(nn.Linear(widths[-1], d_emb))
        self.net = nn.Sequential(*layers)
        self.register_buffer("cond_mean", torch.zeros(N_FEATURES))
        self.register_buffer("cond_std", torch.ones(N_FEATURES))

    def set_statistics(self, conditions: np.ndarray) -> None:
        c = np.asarray(conditions, dtype=np.float64)
        std = c.std(axis=0)
        self.cond_mean.copy_(torch.as_tensor(c.mean(axis=0)))
        self.cond_std.copy_(torch.as_tensor(np.where(std > 1e-8, std, 1.0)))

    def forward(self, c: Tensor) -> Tensor:
        check_condition_range(c)
        return self.net((c - self.cond_mean) / self.cond_std)


def check_condition_range(c: Tensor) -> None:
    if c.dim() != 2 or c.shape[1] != N_FEATURES:
        raise DomainError(f"condition batch must be (B, {N_FEATURES}), got {tuple(c.shape)}")
    if not torch.all(torch.isfinite(c)):
        raise DomainError("condition vector has non-finite components")
    vol, area, sph = c[:, 0], c[:, 1], c[:, 2]
    com, bbox = c[:, 3:6], c[:, 6:9]
    if (
        torch.any(vol <= 0) or torch.any(vol > 1)
        or torch.any(area < 0) or torch.any(area > 1)
        or torch.any(sph <= 0) or torch.any(sph > 1.1)
        or torch.any(com < 0) or torch.any(com > 1)
        or torch.any(bbox <= 0) or torch.any(bbox > 1)
    ):
        raise DomainError("condition vector component outside its declared range")


class Denoiser(nn.Module):
    """Predicts the injected noise of a ``(B, C, D, H', W')`` latent volume."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        chans = [cfg.base_channels * m for m in cfg.channel_mults]
        self.chans = chans
        self.time_proj = nn.Sequential(nn.Linear(cfg.d_emb, cfg.d_emb), nn.SiLU(), nn.Linear(cfg.d_emb, cfg.d_emb))
        self.tau = ConditionMLP(cfg.d_emb, cfg.tau_hidden)
        self.conv_in = nn.Conv3d(cfg.in_channels, chans[0], 3, padding=1)

        self.down_blocks = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        prev = chans[0]
        for i, ch in enumerate(chans):
            self.down_blocks.append(ResBlock3d(prev, ch, cfg.d_emb, cfg.norm_groups))
            prev = ch
            if i < len(chans) - 1:
                self.downsamples.append(nn.Conv3d(ch, ch, 3, stride=2, padding=1))

        self.up_blocks = nn.ModuleList()
        self.upsamples = nn.ModuleList()
        for i in reversed(range(len(chans))):
            ch = chans[i]
            self.up_blocks.append(ResBlock3d(prev + ch, ch, cfg.d_emb, cfg.norm_groups))
            prev = ch
            if i > 0:
                self.upsamples.append(nn.Conv3d(ch, chans[i - 1], 3, padding=1))
                prev = chans[i - 1]

        self.norm_out = nn.GroupNorm(_groups(chans[0], cfg.norm_groups), chans[0])
        self.conv_out = nn.Conv3d(chans[0], cfg.in_channels, 3, padding=1)

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def timestep_embedding(self, t, batch: int) -> Tensor:
        dtype = self.conv_in.weight.dtype
        raw = sinusoid(t, self.cfg.d_emb).to(dtype)
        if raw.shape[0] == 1 and batch > 1:
            raw = raw.expand(batch, -1)
        return self.time_proj(raw)

    def embedding(self, t, c: Tensor, batch: int) -> Tensor:
        c = torch.as_tensor(c, dtype=self.conv_in.weight.dtype)
        if c.dim() == 1:
            c = c[None]
        if c.shape[0] == 1 and batch > 1:
            c = c.expand(batch, -1)
        return self.timestep_embedding(t, batch) + self.tau(c)

    def forward(self, x: Tensor, t, c: Tensor) -> Tensor:
        self.cfg.check_shape(x.shape[2:])
        emb = self.embedding(t, c, x.shape[0])
        h = self.conv_in(x)
        skips = []
        for i, block in enumerate(self.down_blocks):
            h = block(h, emb)
            skips.append(h)
            if i < len(self.downsamples):
                h = self.downsamples[i](h)
        for j, block in enumerate(self.up_blocks):
            h = block(torch.cat([h, skips.pop()], dim=1), emb)
            if j < len(self.upsamples):
                h = self.upsamples[j](F.interpolate(h, scale_factor=2.0, mode="nearest"))
        return self.conv_out(F.silu(self.norm_out(h)))


def audit_structure(model: Denoiser) -> dict:
    """Count residual blocks per level on each path and any attention-like modules."""
    attention = [
        name
        for name, m in model.named_modules()
        if isinstance(m, nn.MultiheadAttention) or "attn" in type(m).__name__.lower() or "attention" in type(m).__name__.lower()
    ]
    return {
        "levels": model.cfg.levels,
        "down_blocks": sum(isinstance(m, ResBlock3d) for m in model.down_blocks),
        "up_blocks": sum(isinstance(m, ResBlock3d) for m in model.up_blocks),
        "attention_modules": attention,
    }
