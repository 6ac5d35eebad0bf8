"""
Noise schedule and the two reverse samplers
===========================================

With a denoiser that knows the clean sample (an oracle), the deterministic
sampler recovers it exactly, and needs far fewer steps than ancestral sampling.
"""

import numpy as np
import torch

from sblds.diffusion import ddim_step, ddim_timesteps, ddpm_step, linear_schedule

schedule = linear_schedule(T=1000, beta_start=1e-4, beta_end=0.02)
for t in (1, 250, 500, 1000):
    print(f"t={t:4d}  alpha_bar={schedule.alpha_bar(t):.5f}  posterior var={schedule.posterior_vars[t - 1]:.2e}")

gen = torch.Generator().manual_seed(0)
x0 = torch.randn(1, 1, 4, 4, 4, generator=gen, dtype=torch.float64)


def oracle(x_t, t):
    ab = schedule.alpha_bar(t)
    return (x_t - np.sqrt(ab) * x0) / np.sqrt(1 - ab)


# a 50-step deterministic walk back from pure noise
grid = ddim_timesteps(schedule.T, 50)
print("DDIM grid head/tail:", grid[:3], "...", grid[-3:])
x = torch.randn(x0.shape, generator=gen, dtype=torch.float64)
for t, t_prev in zip(reversed(grid), reversed([0] + grid[:-1])):
    x = ddim_step(x, oracle(x, t), t, t_prev, schedule)
print("DDIM-50 max error vs x0:", (x - x0).abs().max().item())

# ancestral sampling adds fresh noise on every step except the last
x = torch.randn(x0.shape, generator=gen, dtype=torch.float64)
for t in range(schedule.T, 0, -1):
    noise = torch.randn(x0.shape, generator=gen, dtype=torch.float64) if t > 1 else None
    x = ddpm_step(x, oracle(x, t), t, schedule, noise)
print("DDPM-1000 max error vs x0:", (x - x0).abs().max().item())
