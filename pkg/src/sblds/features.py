"""Tumor shape/size/position descriptors used as the conditioning vector.

All functions take a :class:`~sblds.volume_io.MaskGrid` or a raw ``(D, H, W)``
array. Coordinates are reported in ``(x, y, z)`` order, i.e. ``(W, H, D)`` axes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ValidationError

N_FEATURES = 9
FEATURE_NAMES = (
    "voxel_volume_norm",
    "surface_area_norm",
    "sphericity",
    "com_x",
    "com_y",
    "com_z",
    "bbox_w",
    "bbox_h",
    "bbox_d",
)


def _mask_array(mask) -> np.ndarray:
    arr = getattr(mask, "data", mask)
    arr = np.asarray(arr)
    if arr.ndim != 3:
        raise DomainError(f"mask must be 3-D, got shape {arr.shape}")
    return arr.astype(bool, copy=False)


def voxel_volume(mask) -> int:
    return int(np.count_nonzero(_mask_array(mask)))


def surface_area(mask) -> int:
    """Number of voxel faces that touch background or the grid boundary (6-neighbourhood)."""
    m = _mask_array(mask)
    padded = np.pad(m, 1, constant_values=False)
    inner = padded[1:-1, 1:-1, 1:-1]
    faces = 0
    for axis in range(3):
        for shift in (1, -1):
            neighbour = np.roll(padded, shift, axis=axis)[1:-1, 1:-1, 1:-1]
            faces += int(np.count_nonzero(inner & ~neighbour))
    return faces


def sphericity(volume: int, area: int) -> float:
    """``pi^(1/3) * (6V)^(2/3) / A``; equals (pi/6)^(1/3) for any voxel cube."""
    if area <= 0:
        raise DomainError("sphericity undefined for zero surface area")
    if volume < 1:
        raise DomainError("sphericity undefined for empty region")
    return math.pi ** (1.0 / 3.0) * (6.0 * volume) ** (2.0 / 3.0) / area


def center_of_mass(mask) -> tuple[float, float, float]:
    m = _mask_array(mask)
    zs, ys, xs = np.nonzero(m)
    if xs.size == 0:
        raise DomainError("center of mass of an empty mask")
    return (float(xs.mean()), float(ys.mean()), float(zs.mean()))


def bounding_box(mask) -> tuple[int, int, int]:
    m = _mask_array(mask)
    zs, ys, xs = np.nonzero(m)
    if xs.size == 0:
        raise DomainError("bounding box of an empty mask")
    return (
        int(xs.max() - xs.min() + 1),
        int(ys.max() - ys.min() + 1),
        int(zs.max() - zs.min() + 1),
    )


@dataclass(frozen=True)
class ConditionVector:
    """Normalized tumor features, see :data:`FEATURE_NAMES` for the canonical order."""

    voxel_volume_norm: float
    surface_area_norm: float
    sphericity: float
    com: tuple[float, float, float]
    bbox: tuple[float, float, float]

    def to_array(self) -> np.ndarray:
        return np.array(
            [self.voxel_volume_norm, self.surface_area_norm, self.sphericity, *self.com, *self.bbox],
            dtype=np.float64,
        )

    @classmethod
    def from_array(cls, values) -> "ConditionVector":
        v = [float(x) for x in np.asarray(values, dtype=np.float64).ravel()]
        if len(v) != N_FEATURES:
            raise ValidationError(f"condition vector needs {N_FEATURES} components, got {len(v)}")
        return cls(v[0], v[1], v[2], (v[3], v[4], v[5]), (v[6], v[7], v[8]))

    def to_json(self) -> dict:
        return {
            "voxel_volume_norm": self.voxel_volume_norm,
            "surface_area_norm": self.surface_area_norm,
            "sphericity": self.sphericity,
            "com": list(self.com),
            "bbox": list(self.bbox),
        }

    @classmethod
    def from_json(cls, obj) -> "ConditionVector":
        if isinstance(obj, (list, tuple)):
            return cls.from_array(obj)
        return cls(
            float(obj["voxel_volume_norm"]),
            float(obj["surface_area_norm"]),
            float(obj["sphericity"]),
            tuple(float(x) for x in obj["com"]),
            tuple(float(x) for x in obj["bbox"]),
        )

    def validate(self) -> None:
        v = self.to_array()
        if not np.all(np.isfinite(v)):
            raise DomainError("condition vector has non-finite components")
        if not 0.0 < self.voxel_volume_norm <= 1.0:
            raise DomainError(f"voxel_volume_norm {self.voxel_volume_norm} outside (0, 1]")
        if not 0.0 <= self.surface_area_norm <= 1.0:
            raise DomainError(f"surface_area_norm {self.surface_area_norm} outside [0, 1]")
        if not 0.0 < self.sphericity <= 1.1:
            raise DomainError(f"sphericity {self.sphericity} outside (0, 1.1]")
        if any(not 0.0 <= x <= 1.0 for x in self.com):
            raise DomainError(f"center of mass {self.com} outside [0, 1]")
        if any(not 0.0 < x <= 1.0 for x in self.bbox):
            raise DomainError(f"bounding box {self.bbox} outside (0, 1]")


def condition_vector(mask, dims=None) -> ConditionVector:
    """Assemble the normalized 9-component descriptor of a nonempty mask.

    Args:
        mask: MaskGrid or ``(D, H, W)`` array.
        dims: optional ``(W, H, D)``; must agree with the mask shape when given.
    """
    m = _mask_array(mask)
    d, h, w = m.shape
    if dims is not None and tuple(dims) != (w, h, d):
        raise DomainError(f"dims {tuple(dims)} do not match mask shape (W,H,D)={(w, h, d)}")
    vol = voxel_volume(m)
    if vol == 0:
        raise DomainError("empty mask has no condition vector")
    area = surface_area(m)
    max_area = 2 * (w * h + w * d + h * d)
    com = center_of_mass(m)
    bbox = bounding_box(m)
    return ConditionVector(
        voxel_volume_norm=vol / (w * h * d),
        surface_area_norm=min(area / max_area, 1.0),
        sphericity=sphericity(vol, area),
        com=tuple(c / max(n - 1, 1) for c, n in zip(com, (w, h, d))),
        bbox=(bbox[0] / w, bbox[1] / h, bbox[2] / d),
    )
