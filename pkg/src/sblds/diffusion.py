"""Variance schedules, forward noising, ε-prediction loss, DDPM and DDIM samplers.

Timesteps are 1-based (``t = 1..T``); ``alpha_bar(0)`` is defined as 1. Every
step function accepts numpy arrays or torch tensors. ``t`` may be a Python int
or a 1-D integer array/tensor holding one timestep per batch element.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import DomainError


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise DomainError("betas must be a non-empty 1-D array")
        if not (np.all(betas > 0) and np.all(betas < 1)):
            raise DomainError("betas must lie in (0, 1)")
        object.__setattr__(self, "betas", betas)
        alphas = 1.0 - betas
        alpha_bars = np.empty_like(alphas)
        acc = 1.0
        for i, a in enumerate(alphas):
            acc = acc * a
            alpha_bars[i] = acc
        prev = np.concatenate([[1.0], alpha_bars[:-1]])
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", alpha_bars)
        denom = 1.0 - alpha_bars
        ratio = np.divide(1.0 - prev, denom, out=np.zeros_like(denom), where=denom > 0)
        object.__setattr__(self, "posterior_vars", ratio * betas)
        # index 0 holds the t=0 convention so that tables can be gathered with t directly
        object.__setattr__(self, "_ab_table", np.concatenate([[1.0], alpha_bars]))

    @property
    def T(self) -> int:
        return int(self.betas.size)

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise DomainError(f"t={t} outside [0, {self.T}]")
        return float(self._ab_table[t])

    def validate_monotone(self) -> None:
        if np.any(np.diff(self.betas) < 0):
            raise DomainError("betas must be non-decreasing")
        if np.any(np.diff(self.alpha_bars) >= 0):
            raise DomainError("alpha_bars must be strictly decreasing")

    def to_json(self) -> dict:
        return {"T": self.T, "betas": self.betas.tolist()}


def linear_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise DomainError("T must be >= 1")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise DomainError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if T == 1:
        return NoiseSchedule(np.array([beta_start]))
    return NoiseSchedule(np.linspace(beta_start, beta_end, T, dtype=np.float64))


# --------------------------------------------------------------------------
# coefficient gathering


def _check_t(t, lo: int, hi: int):
    values = np.atleast_1d(t.detach().cpu().numpy() if torch.is_tensor(t) else np.asarray(t))
    if values.size and (values.min() < lo or values.max() > hi):
        raise DomainError(f"timestep(s) {values.min()}..{values.max()} outside [{lo}, {hi}]")


def _gather(table: np.ndarray, t, like):
    """Pick ``table[t]`` and broadcast it against ``like`` along the batch axis."""
    if isinstance(t, (int, np.integer)):
        return float(table[int(t)])
    if torch.is_tensor(like):
        idx = t if torch.is_tensor(t) else torch.as_tensor(np.asarray(t))
        vals = torch.as_tensor(table, dtype=like.dtype, device=like.device)[idx.long().to(like.device)]
        return vals.reshape(-1, *([1] * (like.dim() - 1)))
    vals = table[np.asarray(t, dtype=np.int64)]
    return vals.reshape(-1, *([1] * (np.ndim(like) - 1)))


def _sqrt(x):
    return torch.sqrt(x) if torch.is_tensor(x) else np.sqrt(x)


# --------------------------------------------------------------------------
# per-step algebra


def forward_sample(x0, t, eps, schedule: NoiseSchedule):
    """Closed-form marginal ``sqrt(ab_t) x0 + sqrt(1 - ab_t) eps``."""
    _check_t(t, 1, schedule.T)
    ab = _gather(schedule._ab_table, t, x0)
    return _sqrt(ab) * x0 + _sqrt(1.0 - ab) * eps


def predict_x0(x_t, eps_hat, t, schedule: NoiseSchedule):
    _check_t(t, 1, schedule.T)
    ab = _gather(schedule._ab_table, t, x_t)
    return (x_t - _sqrt(1.0 - ab) * eps_hat) / _sqrt(ab)


def ddpm_mean(x_t, eps_hat, t: int, schedule: NoiseSchedule):
    beta = float(schedule.betas[t - 1])
    alpha = float(schedule.alphas[t - 1])
    ab = float(schedule.alpha_bars[t - 1])
    return (x_t - (beta / np.sqrt(1.0 - ab)) * eps_hat) / np.sqrt(alpha)


def ddpm_step(x_t, eps_hat, t: int, schedule: NoiseSchedule, noise=None):
    """Ancestral step ``x_t -> x_{t-1}`` with variance ``posterior_vars[t]``.

    ``noise`` is ignored at ``t == 1`` (the posterior variance is exactly zero there).
    """
    if not 1 <= t <= schedule.T:
        raise DomainError(f"ddpm_step needs 1 <= t <= T, got t={t}")
    mean = ddpm_mean(x_t, eps_hat, t, schedule)
    if t == 1 or noise is None:
        return mean
    return mean + float(np.sqrt(schedule.posterior_vars[t - 1])) * noise


def ddim_step(x_t, eps_hat, t: int, t_prev: int, schedule: NoiseSchedule):
    """Deterministic (eta = 0) DDIM update from ``t`` to ``t_prev``."""
    if not 0 <= t_prev < t <= schedule.T:
        raise DomainError(f"ddim_step needs 0 <= t_prev < t <= T, got t={t}, t_prev={t_prev}")
    ab_prev = schedule.alpha_bar(t_prev)
    x0_hat = predict_x0(x_t, eps_hat, t, schedule)
    return float(np.sqrt(ab_prev)) * x0_hat + float(np.sqrt(1.0 - ab_prev)) * eps_hat


def noise_prediction_loss(denoiser, x0, t, eps, c, schedule: NoiseSchedule):
    """Mean squared error between ``eps`` and ``denoiser(x_t, t, c)``."""
    x_t = forward_sample(x0, t, eps, schedule)
    eps_hat = denoiser(x_t, t, c)
    diff = eps - eps_hat
    return (diff * diff).mean()


# --------------------------------------------------------------------------
# samplers


def ddim_timesteps(T: int, steps: int) -> list[int]:
    """Evenly spaced increasing subset of ``1..T`` of size ``steps`` that includes ``T``."""
    if not 1 <= steps <= T:
        raise DomainError(f"ddim_steps must lie in [1, {T}], got {steps}")
    if steps == 1:
        return [T]
    return [int(v) for v in np.rint(np.linspace(1, T, steps))]


@torch.no_grad()
def sample(
    denoiser,
    schedule: NoiseSchedule,
    c,
    shape,
    sampler: str = "ddim",
    ddim_steps: int = 50,
    seed: int = 0,
    x_T: torch.Tensor | None = None,
) -> torch.Tensor:
    """Run the reverse process from Gaussian noise.

    Args:
        denoiser: callable ``(x_t, t, c) -> eps_hat`` on float32 tensors.
        shape: full batch shape, e.g. ``(B, C, D, H, W)``.
        sampler: ``"ddpm"`` (ancestral, T steps) or ``"ddim"`` (eta = 0).
        seed: drives both the initial noise and DDPM's per-step noise.
        x_T: optional explicit starting noise, overrides the seeded draw.
    """
    gen = torch.Generator().manual_seed(int(seed) % 2**63)
    x = torch.randn(tuple(shape), generator=gen) if x_T is None else x_T.clone()
    if sampler == "ddpm":
        for t in range(schedule.T, 0, -1):
            eps_hat = denoiser(x, t, c)
            noise = torch.randn(x.shape, generator=gen) if t > 1 else None
            x = ddpm_step(x, eps_hat, t, schedule, noise)
        return x
    if sampler == "ddim":
        grid = ddim_timesteps(schedule.T, ddim_steps)
        prevs = [0] + grid[:-1]
        for t, t_prev in zip(reversed(grid), reversed(prevs)):
            x = ddim_step(x, denoiser(x, t, c), t, t_prev, schedule)
        return x
    raise DomainError(f"unknown sampler {sampler!r}")
