"""Stacking per-slice latents into a latent volume, and latent normalization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ValidationError

SCALER_EPS = 1e-6


@dataclass
class LatentVolume:
    """Stacked slice codes. ``code`` has shape ``(C, D, H', W')``, slice ``k`` is ``code[:, k]``."""

    code: np.ndarray
    scaler_applied: bool = False

    def __post_init__(self):
        self.code = np.asarray(self.code)
        if self.code.ndim != 4:
            raise ValidationError(f"latent volume must be 4-D (C, D, H, W), got {self.code.shape}")

    @property
    def depth(self) -> int:
        return int(self.code.shape[1])

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """``(C, W', H', D)``."""
        c, d, h, w = self.code.shape
        return (c, w, h, d)

    def validate(self) -> None:
        if not np.all(np.isfinite(self.code)):
            raise ValidationError("latent volume contains non-finite values")


def assemble(slices) -> LatentVolume:
    """Stack ``D`` slice codes of shape ``(C, H', W')`` along a new depth axis."""
    slices = [np.asarray(s) for s in slices]
    if not slices:
        raise ValidationError("cannot assemble an empty slice list")
    shape = slices[0].shape
    for k, s in enumerate(slices):
        if s.shape != shape:
            raise ValidationError(f"slice {k} has shape {s.shape}, expected {shape}")
    if len(shape) != 3:
        raise ValidationError(f"slice codes must be (C, H', W'), got {shape}")
    return LatentVolume(np.stack(slices, axis=1))


def decompose(volume: LatentVolume) -> list[np.ndarray]:
    return [volume.code[:, k] for k in range(volume.depth)]


@dataclass(frozen=True)
class LatentScaler:
    mean: float = 0.0
    std: float = 1.0
    epsilon: float = SCALER_EPS

    def __post_init__(self):
        if not self.std >= self.epsilon:
            raise DomainError(f"scaler std {self.std} below epsilon {self.epsilon}")

    def to_json(self) -> dict:
        return {"mean": self.mean, "std": self.std, "epsilon": self.epsilon}

    @classmethod
    def from_json(cls, obj: dict) -> "LatentScaler":
        return cls(float(obj["mean"]), float(obj["std"]), float(obj.get("epsilon", SCALER_EPS)))


def fit_scaler(latents) -> LatentScaler:
    """Global mean/std over every element of every volume.

    Sums are accumulated in sorted order so the result does not depend on the
    order of ``latents``.
    """
    arrays = [np.asarray(getattr(z, "code", z), dtype=np.float64).ravel() for z in latents]
    if not arrays:
        raise DomainError("fit_scaler needs at least one latent volume")
    flat = np.sort(np.concatenate(arrays))
    mean = float(np.sum(flat) / flat.size)
    var = float(np.sum(np.sort((flat - mean) ** 2)) / flat.size)
    return LatentScaler(mean=mean, std=float(max(np.sqrt(var), SCALER_EPS)))


def apply_scaler(volume: LatentVolume, scaler: LatentScaler) -> LatentVolume:
    if volume.scaler_applied:
        raise ValidationError("scaler already applied to this latent volume")
    code = (volume.code.astype(np.float64) - scaler.mean) / scaler.std
    return LatentVolume(code.astype(volume.code.dtype), scaler_applied=True)


def invert_scaler(volume: LatentVolume, scaler: LatentScaler) -> LatentVolume:
    if not volume.scaler_applied:
        raise ValidationError("latent volume is not normalized")
    code = volume.code.astype(np.float64) * scaler.std + scaler.mean
    return LatentVolume(code.astype(volume.code.dtype), scaler_applied=False)
