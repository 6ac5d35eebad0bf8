"""Procedural brain-like phantoms with embedded lobed tumors.

A phantom is an ellipsoidal "head" (bright thin shell around a textured
interior) holding a tumor made of 1..n overlapping ellipsoidal lobes. Every
lobe contains one shared anchor voxel, so the voxelized union is a single
6-connected component.
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import __version__
from .errors import DomainError, GenerationError, PersistenceError
from .features import condition_vector
from .volume_io import (
    CaseRecord,
    DatasetManifest,
    MaskGrid,
    VolumeGrid,
    write_manifest,
    write_mask,
    write_volume,
)

SKULL_START = 0.9  # normalized head radius where the shell begins
BRAIN_LIMIT = 0.85  # tumor voxels must stay below this normalized radius
SPLIT_FRACTIONS = {"train": 4 / 7, "val": 1 / 7, "test": 2 / 7}


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int] = (32, 32, 16)
    head_axes_range: tuple[float, float] = (0.30, 0.45)
    tissue_texture_scale: float = 0.15
    tumor_radius_range: tuple[float, float] = (0.05, 0.20)
    tumor_intensity_delta: float = 0.35
    lobedness: tuple[int, int] = (1, 3)
    lobe_aspect_range: tuple[float, float] = (0.75, 1.33)
    max_retries: int = 100

    def validate(self) -> None:
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise DomainError(f"dims must be three positive ints, got {self.dims}")
        for name in ("head_axes_range", "tumor_radius_range"):
            lo, hi = getattr(self, name)
            if not 0.0 < lo <= hi < 1.0:
                raise DomainError(f"{name} must satisfy 0 < min <= max < 1, got {(lo, hi)}")
        lo, hi = self.lobe_aspect_range
        if not 0.0 < lo <= hi:
            raise DomainError(f"lobe_aspect_range invalid: {(lo, hi)}")
        lo, hi = self.lobedness
        if not 1 <= lo <= hi:
            raise DomainError(f"lobedness must satisfy 1 <= min <= max, got {(lo, hi)}")
        if self.tissue_texture_scale <= 0:
            raise DomainError("tissue_texture_scale must be positive")
        if not 0.0 < self.tumor_intensity_delta < 1.0:
            raise DomainError("tumor_intensity_delta must lie in (0, 1)")

    def to_json(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_json(cls, obj: dict) -> "PhantomSpec":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in obj.items()})


def _grid(dims):
    w, h, d = dims
    z, y, x = np.meshgrid(np.arange(d), np.arange(h), np.arange(w), indexing="ij")
    return x.astype(np.float64), y.astype(np.float64), z.astype(np.float64)


def _ellipsoid_radius(coords, center, axes):
    return np.sqrt(sum(((c - c0) / a) ** 2 for c, c0, a in zip(coords, center, axes)))


def _texture(rng, dims, scale):
    w, h, d = dims
    noise = rng.standard_normal((d, h, w))
    smooth = ndimage.gaussian_filter(noise, sigma=scale * min(dims) + 0.5, mode="wrap")
    peak = np.abs(smooth).max()
    return smooth / peak if peak > 0 else smooth


def _draw_tumor(rng, spec, coords, head_center, head_axes):
    """One rejection-sampling attempt; returns a bool mask or None."""
    mindim = min(spec.dims)
    # anchor voxel somewhere well inside the brain
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction) + 1e-12
    rho = 0.6 * rng.uniform() ** (1.0 / 3.0)
    anchor = np.rint(np.asarray(head_center) + rho * direction * np.asarray(head_axes))
    n_lobes = int(rng.integers(spec.lobedness[0], spec.lobedness[1] + 1))
    mask = np.zeros(coords[0].shape, dtype=bool)
    for k in range(n_lobes):
        radius = rng.uniform(*spec.tumor_radius_range) * mindim
        axes = radius * rng.uniform(*spec.lobe_aspect_range, size=3)
        if k == 0:
            center = anchor + rng.uniform(-0.3, 0.3, size=3)
        else:
            u = rng.standard_normal(3)
            u /= np.linalg.norm(u) + 1e-12
            center = anchor + rng.uniform(0.3, 0.7) * u * axes
        if np.sum(((anchor - center) / axes) ** 2) > 1.0:
            return None
        mask |= _ellipsoid_radius(coords, center, axes) <= 1.0
    head_rho = _ellipsoid_radius(coords, head_center, head_axes)
    if not mask.any() or head_rho[mask].max() > BRAIN_LIMIT:
        return None
    return mask


def generate_case(seed: int, spec: PhantomSpec | None = None) -> tuple[VolumeGrid, MaskGrid]:
    """Deterministically synthesize one (image, mask) phantom pair."""
    spec = spec or PhantomSpec()
    spec.validate()
    rng = np.random.default_rng(np.uint64(seed % 2**64))
    dims = tuple(int(v) for v in spec.dims)
    coords = _grid(dims)
    head_center = tuple((n - 1) / 2.0 + rng.uniform(-0.02, 0.02) * n for n in dims)
    head_axes = tuple(rng.uniform(*spec.head_axes_range) * n for n in dims)
    head_rho = _ellipsoid_radius(coords, head_center, head_axes)
    head = head_rho <= 1.0

    texture = _texture(rng, dims, spec.tissue_texture_scale)
    image = np.where(head_rho > SKULL_START, 0.6, 0.35 + 0.1 * texture)

    for _ in range(spec.max_retries):
        tumor = _draw_tumor(rng, spec, coords, head_center, head_axes)
        if tumor is not None:
            break
    else:
        raise GenerationError(f"tumor placement failed after {spec.max_retries} attempts (seed {seed})")

    image = image + spec.tumor_intensity_delta * tumor
    image = np.where(head, np.clip(image, 0.0, 1.0), 0.0)
    return VolumeGrid(image.astype(np.float32)), MaskGrid(tumor.astype(np.uint8))


def case_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed % 2**64, index]).generate_state(1, np.uint64)[0])


def _split_key(case_id: str) -> str:
    return hashlib.sha256(case_id.encode("utf-8")).hexdigest()


def assign_splits(case_ids: list[str], fractions=None) -> dict[str, str]:
    """Rank cases by a hash of their id and cut the ranking by split fraction."""
    fractions = fractions or SPLIT_FRACTIONS
    n = len(case_ids)
    n_train = int(round(n * fractions["train"]))
    n_val = min(int(round(n * fractions["val"])), n - n_train)
    ranked = sorted(case_ids, key=_split_key)
    out = {}
    for rank, cid in enumerate(ranked):
        out[cid] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    return out


def generate_dataset(seed: int, n_cases: int, spec: PhantomSpec | None, out_dir) -> DatasetManifest:
    """Write ``n_cases`` phantoms plus ``manifest.json`` into ``out_dir``."""
    if n_cases < 1:
        raise DomainError("n_cases must be >= 1")
    spec = spec or PhantomSpec()
    spec.validate()
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PersistenceError(f"cannot create dataset directory ({exc.strerror})", out) from exc

    ids = [f"case_{i:04d}" for i in range(n_cases)]
    splits = assign_splits(ids)
    records = []
    for i, cid in enumerate(ids):
        image, mask = generate_case(case_seed(seed, i), spec)
        image_rel, mask_rel = f"images/{cid}.sblv", f"masks/{cid}.sblm"
        write_volume(image, out / image_rel)
        write_mask(mask, out / mask_rel)
        records.append(CaseRecord(cid, image_rel, mask_rel, condition_vector(mask, spec.dims), splits[cid]))

    manifest = DatasetManifest(
        dims=tuple(spec.dims),
        cases=records,
        provenance={"code_version": __version__, "seed": seed, "n_cases": n_cases, "phantom_spec": spec.to_json()},
        root=out,
    )
    write_manifest(manifest, out / "manifest.json")
    return manifest
