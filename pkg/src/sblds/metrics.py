"""PSNR, SSIM, Dice and IoU over volumes and masks."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DomainError

PSNR_CAP = 100.0


@dataclass
class MetricReport:
    name: str
    value: float
    std: float | None = None
    n: int = 1
    saturated: bool = False

    def to_json(self) -> dict:
        return {"name": self.name, "value": self.value, "std": self.std, "n": self.n, "saturated": self.saturated}


def _array(x, dtype=np.float64) -> np.ndarray:
    return np.asarray(getattr(x, "data", x), dtype=dtype)


def _same_shape(a, b):
    if a.shape != b.shape:
        raise DomainError(f"shape mismatch {a.shape} vs {b.shape}")


def psnr(a, b, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at :data:`PSNR_CAP` for identical inputs."""
    x, y = _array(a), _array(b)
    _same_shape(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * math.log10(data_range**2 / mse), PSNR_CAP)


def psnr_report(a, b, data_range: float = 1.0) -> MetricReport:
    value = psnr(a, b, data_range)
    return MetricReport("psnr", value, saturated=value >= PSNR_CAP)


def ssim(a, b, window: int = 7, k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Mean SSIM over all fully-contained uniform ``window``-cubed neighbourhoods.

    Local statistics are plain window means (population variance/covariance).
    """
    x, y = _array(a), _array(b)
    _same_shape(x, y)
    if x.ndim < 1 or min(x.shape) < window:
        raise DomainError(f"volume {x.shape} smaller than SSIM window {window}")
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2

    def local_mean(v):
        return ndimage.uniform_filter(v, size=window, mode="constant")

    mx, my = local_mean(x), local_mean(y)
    vx = local_mean(x * x) - mx * mx
    vy = local_mean(y * y) - my * my
    cxy = local_mean(x * y) - mx * my
    smap = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2))
    # uniform_filter centres the window; keep only windows that lie inside the grid
    lo = window // 2
    hi = window - 1 - lo
    valid = tuple(slice(lo, n - hi) for n in x.shape)
    return float(smap[valid].mean())


def _masks(m1, m2):
    a = _array(m1, dtype=bool)
    b = _array(m2, dtype=bool)
    _same_shape(a, b)
    return a, b


def dice(m1, m2) -> float:
    a, b = _masks(m1, m2)
    total = int(np.count_nonzero(a)) + int(np.count_nonzero(b))
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(a & b)) / total


def iou(m1, m2) -> float:
    a, b = _masks(m1, m2)
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a & b)) / union
