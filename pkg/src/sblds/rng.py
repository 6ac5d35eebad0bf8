"""Seed derivation shared by all stochastic stages."""
from __future__ import annotations

import numpy as np
import torch


def derive_seed(*parts: int) -> int:
    """Mix integers into a 63-bit seed (non-negative, accepted by torch)."""
    return int(np.random.SeedSequence([int(p) % 2**64 for p in parts]).generate_state(1, np.uint64)[0] >> 1)


def step_generator(seed: int, step: int) -> torch.Generator:
    """Per-step RNG, so a resumed run draws exactly what an uninterrupted one would."""
    return torch.Generator().manual_seed(derive_seed(seed, step))
