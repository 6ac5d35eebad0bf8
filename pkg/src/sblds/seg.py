"""Segmentation benchmark: a fixed small 3-D U-Net trained under several data regimes.

The network and its step budget are identical across regimes so that only the
training data varies.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage
from torch import Tensor, nn

from . import __version__
from .config import SegConfig
from .errors import DomainError, TrainingError, ValidationError
from .metrics import dice, iou
from .rng import derive_seed, step_generator
from .volume_io import DatasetManifest

log = logging.getLogger(__name__)

REGIMES = ("real", "real_aug", "synth_only", "real_plus_synth", "real_plus_synth_aug")


@dataclass(frozen=True)
class RegimeSpec:
    name: str
    n_real: int
    n_synth: int
    aug_factor: int = 1

    def validate(self) -> None:
        if self.name not in REGIMES:
            raise ValidationError(f"unknown regime {self.name!r}")
        uses_real = self.name != "synth_only"
        uses_synth = "synth" in self.name
        uses_aug = self.name.endswith("_aug")
        if uses_real != (self.n_real > 0):
            raise ValidationError(f"{self.name}: n_real={self.n_real} inconsistent with regime")
        if uses_synth != (self.n_synth > 0):
            raise ValidationError(f"{self.name}: n_synth={self.n_synth} inconsistent with regime")
        if uses_aug != (self.aug_factor > 1) or self.aug_factor < 1:
            raise ValidationError(f"{self.name}: aug_factor={self.aug_factor} inconsistent with regime")


def default_regimes(n_real: int = 20, n_synth: int = 20, aug_factor: int = 5, names=REGIMES) -> list[RegimeSpec]:
    table = {
        "real": RegimeSpec("real", n_real, 0, 1),
        "real_aug": RegimeSpec("real_aug", n_real, 0, aug_factor),
        "synth_only": RegimeSpec("synth_only", 0, n_synth, 1),
        "real_plus_synth": RegimeSpec("real_plus_synth", n_real, n_synth, 1),
        "real_plus_synth_aug": RegimeSpec("real_plus_synth_aug", n_real, n_synth, aug_factor),
    }
    out = []
    for name in names:
        if name not in table:
            raise ValidationError(f"unknown regime {name!r}")
        out.append(table[name])
    return out


@dataclass
class SegResult:
    regime: RegimeSpec
    dsc_mean: float
    dsc_std: float
    iou_mean: float
    iou_std: float
    seeds: list[int] = field(default_factory=list)
    per_seed: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        out = asdict(self)
        out["regime"] = asdict(self.regime)
        return out


# --------------------------------------------------------------------------
# classic augmentation


def flip(image: np.ndarray, mask: np.ndarray, axis: int):
    return np.flip(image, axis=axis).copy(), np.flip(mask, axis=axis).copy()


def classic_augment(image: np.ndarray, mask: np.ndarray, seed: int, ops=("flip", "rotate", "noise")):
    """Random flips, a small axial rotation and additive noise (image only).

    Arrays are ``(D, H, W)``. Rotations are within ``[-10, 10]`` degrees in the
    axial (H, W) plane, linear for the image and nearest-neighbour for the mask.
    """
    rng = np.random.default_rng(seed)
    img = np.asarray(image, dtype=np.float32)
    msk = np.asarray(mask, dtype=np.uint8)
    if "flip" in ops:
        for axis in range(3):
            if rng.uniform() < 0.5:
                img, msk = flip(img, msk, axis)
    if "rotate" in ops:
        angle = rng.uniform(-10.0, 10.0)
        img = ndimage.rotate(img, angle, axes=(1, 2), reshape=False, order=1, mode="constant", cval=0.0)
        msk = ndimage.rotate(msk, angle, axes=(1, 2), reshape=False, order=0, mode="constant", cval=0)
    if "noise" in ops:
        sigma = rng.uniform(0.0, 0.02)
        img = img + rng.normal(0.0, sigma, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32), (msk > 0).astype(np.uint8)


# --------------------------------------------------------------------------
# network


def _double_conv(c_in: int, c_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv3d(c_in, c_out, 3, padding=1),
        nn.GroupNorm(4, c_out),
        nn.SiLU(),
        nn.Conv3d(c_out, c_out, 3, padding=1),
        nn.GroupNorm(4, c_out),
        nn.SiLU(),
    )


class SegUNet(nn.Module):
    """Two-level 3-D U-Net emitting one logit channel."""

    def __init__(self, channels=(16, 32)):
        super().__init__()
        c0, c1 = channels
        self.enc0 = _double_conv(1, c0)
        self.enc1 = _double_conv(c0, c1)
        self.dec0 = _double_conv(c0 + c1, c0)
        self.out = nn.Conv3d(c0, 1, 1)

    def forward(self, x: Tensor) -> Tensor:
        h0 = self.enc0(x)
        h1 = self.enc1(F.max_pool3d(h0, 2))
        up = F.interpolate(h1, size=h0.shape[2:], mode="nearest")
        return self.out(self.dec0(torch.cat([h0, up], dim=1)))


def seg_loss(logits: Tensor, target: Tensor) -> Tensor:
    """Soft Dice (per sample) plus binary cross-entropy."""
    prob = torch.sigmoid(logits)
    dims = tuple(range(1, logits.dim()))
    inter = (prob * target).sum(dims)
    soft_dice = (2 * inter + 1.0) / (prob.sum(dims) + target.sum(dims) + 1.0)
    return (1 - soft_dice).mean() + F.binary_cross_entropy_with_logits(logits, target)


def train_segmenter(cases, config: SegConfig, seed: int):
    """Train on ``cases`` (list of ``(image, mask)`` arrays). Returns ``(model, losses)``."""
    if not cases:
        raise DomainError("segmenter needs at least one training case")
    torch.manual_seed(derive_seed(seed, 11))
    images = torch.from_numpy(np.stack([c[0] for c in cases]).astype(np.float32))[:, None]
    masks = torch.from_numpy(np.stack([c[1] for c in cases]).astype(np.float32))[:, None]
    model = SegUNet(tuple(config.channels))
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    losses = []
    model.train()
    for step in range(config.steps):
        gen = step_generator(derive_seed(seed, 12), step)
        sel = torch.randint(0, images.shape[0], (config.batch_size,), generator=gen)
        loss = seg_loss(model(images[sel]), masks[sel])
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingError("non-finite segmentation loss", step)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        losses.append(value)
    model.eval()
    return model, losses


@torch.no_grad()
def predict(model: SegUNet, image: np.ndarray) -> np.ndarray:
    x = torch.from_numpy(np.asarray(image, dtype=np.float32))[None, None]
    return (model(x)[0, 0] > 0).numpy().astype(np.uint8)


# --------------------------------------------------------------------------
# benchmark


def _pool(manifest: DatasetManifest, split: str, n: int, what: str):
    recs = sorted(manifest.split(split), key=lambda r: r.case_id)
    if len(recs) < n:
        raise ValidationError(f"{what}: need {n} cases, only {len(recs)} available")
    return recs[:n]


def _load(manifest, recs):
    out = []
    for r in recs:
        img, msk = manifest.load_case(r)
        out.append((img.data, msk.data))
    return out


def build_training_set(real_cases, synth_cases, regime: RegimeSpec, seed: int):
    base = list(real_cases) + list(synth_cases)
    out = list(base)
    for k, (img, msk) in enumerate(base):
        for copy in range(1, regime.aug_factor):
            out.append(classic_augment(img, msk, derive_seed(seed, 21, k, copy)))
    return out


def run_benchmark(manifest: DatasetManifest, synth: DatasetManifest | None, regimes, seeds, config: SegConfig):
    """Train and score one segmenter per (regime, seed); returns one :class:`SegResult` per regime."""
    test_recs = sorted(manifest.split("test"), key=lambda r: r.case_id)
    if not test_recs:
        raise ValidationError("manifest has no test cases")
    test_ids = {r.case_id for r in test_recs}
    test_cases = _load(manifest, test_recs)
    results = []
    for regime in regimes:
        regime.validate()
        real_recs = _pool(manifest, "train", regime.n_real, "real pool") if regime.n_real else []
        synth_recs = []
        if regime.n_synth:
            if synth is None:
                raise ValidationError(f"{regime.name} needs a synthetic dataset")
            synth_recs = _pool(synth, "train", regime.n_synth, "synthetic pool")
        # hard isolation check: no test case, nor anything generated from one, enters training
        sources = {d["case_id"]: d.get("source_case_id") for d in ((synth.provenance or {}).get("synthetic", []) if synth else [])}
        used = {r.case_id for r in real_recs} | {sources.get(r.case_id) for r in synth_recs}
        leaked = used & test_ids
        if leaked:
            raise ValidationError(f"{regime.name}: test cases used for training: {sorted(leaked)}")
        real_cases = _load(manifest, real_recs)
        synth_cases = _load(synth, synth_recs) if synth_recs else []
        per_seed = []
        dsc_all, iou_all = [], []
        for seed in seeds:
            train = build_training_set(real_cases, synth_cases, regime, seed)
            model, losses = train_segmenter(train, config, seed)
            d = [dice(predict(model, img), msk) for img, msk in test_cases]
            j = [iou(predict(model, img), msk) for img, msk in test_cases]
            dsc_all += d
            iou_all += j
            per_seed.append({"seed": int(seed), "dsc": float(np.mean(d)), "iou": float(np.mean(j)),
                             "n_train": len(train), "loss_initial": losses[0], "loss_final": losses[-1]})
            log.info("%s seed %d: dsc %.3f iou %.3f", regime.name, seed, np.mean(d), np.mean(j))
        results.append(SegResult(
            regime=regime,
            dsc_mean=float(np.mean(dsc_all)),
            dsc_std=float(np.std(dsc_all, ddof=1)) if len(dsc_all) > 1 else 0.0,
            iou_mean=float(np.mean(iou_all)),
            iou_std=float(np.std(iou_all, ddof=1)) if len(iou_all) > 1 else 0.0,
            seeds=[int(s) for s in seeds],
            per_seed=per_seed,
        ))
    return results


def benchmark_report(results: list[SegResult], config: SegConfig) -> dict:
    return {
        "code_version": __version__,
        "config": asdict(config),
        "results": [r.to_json() for r in results],
    }


_LABELS = {
    "real": "Real volumes",
    "real_aug": "Augmented volumes",
    "synth_only": "Synth only",
    "real_plus_synth": "Real + Synth",
    "real_plus_synth_aug": "Real + Synth + Aug.",
}


def format_table(results: list[SegResult]) -> str:
    lines = [f"{'Regime':<26}{'DSC':>16}{'IoU':>16}"]
    for r in results:
        label = _LABELS[r.regime.name]
        if r.regime.aug_factor > 1:
            label += f" (x{r.regime.aug_factor})"
        lines.append(f"{label:<26}{r.dsc_mean:>9.3f}±{r.dsc_std:<6.3f}{r.iou_mean:>9.3f}±{r.iou_std:<6.3f}")
    return "\n".join(lines) + "\n"
