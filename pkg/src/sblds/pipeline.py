"""Two-stage training, generation, the size sweep and generation-quality evaluation.

Run directories always contain ``config.json`` (the exact :class:`RunConfig`
plus code version). Reports contain only quantities that are a deterministic
function of their inputs; wall-clock timings are written to separate
``timing.json`` files.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy import stats

from . import __version__
from .checkpoint import load_checkpoint, optimizer_tensors, restore_optimizer, save_checkpoint
from .config import RunConfig, provenance
from .denoiser import Denoiser, DenoiserConfig
from .diffusion import linear_schedule, noise_prediction_loss, sample
from .errors import ConfigurationError, PersistenceError, TrainingError, ValidationError
from .features import N_FEATURES, ConditionVector, condition_vector
from .latent import LatentScaler, LatentVolume, apply_scaler, fit_scaler, invert_scaler
from .metrics import psnr, ssim
from .rng import derive_seed, step_generator
from .vae import SliceVAE, VaeConfig, decode_volume, encode_volume, vae_loss
from .volume_io import (
    CaseRecord,
    DatasetManifest,
    MaskGrid,
    VolumeGrid,
    read_json,
    read_latent,
    write_json,
    write_latent,
    write_manifest,
    write_mask,
    write_volume,
)

log = logging.getLogger(__name__)


def _mkdir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PersistenceError(f"cannot create directory ({exc.strerror})", path) from exc
    return path


def _write_run_config(config: RunConfig, out: Path) -> None:
    write_json(provenance(config), out / "config.json")


# --------------------------------------------------------------------------
# stage 1: slice autoencoder


def _slices(manifest: DatasetManifest, split: str):
    images, masks, index = [], [], []
    depth = manifest.dims[2]
    for rec in sorted(manifest.split(split), key=lambda r: r.case_id):
        img, msk = manifest.load_case(rec)
        images.append(img.data)
        masks.append(msk.data.astype(np.float32))
        index.append(np.arange(depth))
    if not images:
        return None
    return (
        torch.from_numpy(np.concatenate(images)),
        torch.from_numpy(np.concatenate(masks)),
        np.concatenate(index),
    )


@torch.no_grad()
def vae_validation_metrics(model: SliceVAE, manifest: DatasetManifest, split: str = "val") -> dict:
    """Reconstruction PSNR (posterior mean), the mean-image baseline PSNR and pooled mask Dice.

    Dice pools intersections and sizes over all slices whose reference mask is
    nonempty. The baseline predicts every volume by the voxelwise mean of the
    training volumes.
    """
    val = _slices(manifest, split)
    train = _slices(manifest, "train")
    if val is None or train is None:
        return {}
    x, m, idx = val
    depth = manifest.dims[2]
    pos = model.positions(idx, depth)
    mu, _ = model.encode(x, m, pos)
    image_hat, logits = model.decode(mu, pos)
    pred = (logits > 0).numpy()
    ref = m.numpy() > 0.5
    nonempty = ref.reshape(ref.shape[0], -1).any(axis=1)
    inter = np.count_nonzero(pred[nonempty] & ref[nonempty])
    total = np.count_nonzero(pred[nonempty]) + np.count_nonzero(ref[nonempty])
    mean_vol = train[0].numpy().reshape(-1, depth, *x.shape[1:]).mean(axis=0)
    baseline = np.tile(mean_vol, (x.shape[0] // depth, 1, 1))
    return {
        "psnr": psnr(x.numpy(), image_hat.numpy()),
        "baseline_psnr": psnr(x.numpy(), baseline),
        "mask_dice": 2.0 * inter / total if total else 1.0,
        "n_slices": int(x.shape[0]),
        "n_nonempty_slices": int(nonempty.sum()),
    }


def _train_loop(model, optimizer, loss_fn, steps: int, start: int, seed: int, on_eval=None, eval_every=0):
    losses = []
    for step in range(start, steps):
        gen = step_generator(seed, step)
        loss = loss_fn(gen)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingError("non-finite training loss", step)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        losses.append(value)
        if on_eval is not None and eval_every and ((step + 1) % eval_every == 0 or step + 1 == steps):
            on_eval(step + 1)
    return losses


def save_vae(path, model: SliceVAE, optimizer=None, step: int = 0, meta: dict | None = None) -> None:
    tensors = dict(model.state_dict())
    info = {"step": step, **(meta or {})}
    if optimizer is not None:
        opt_tensors, opt_meta = optimizer_tensors(optimizer, model)
        tensors.update(opt_tensors)
        info["optimizer"] = opt_meta
    save_checkpoint(path, "vae", model.cfg.to_json(), tensors, info)


def load_vae(path) -> tuple[SliceVAE, dict, dict]:
    header, tensors = load_checkpoint(path, kind="vae")
    model = SliceVAE(VaeConfig.from_json(header["config"]))
    model.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("optim/")})
    model.eval()
    return model, header, tensors


def train_vae(manifest: DatasetManifest, config: RunConfig, out_dir, resume: bool = False) -> Path:
    """Train the slice autoencoder on every slice of every training volume.

    Writes ``vae.ckpt``, ``loss_log.json`` and ``config.json`` to ``out_dir``.
    With ``resume`` an existing checkpoint there is continued up to the
    configured step count.
    """
    out = _mkdir(out_dir)
    _write_run_config(config, out)
    if tuple(manifest.dims) != config.dims:
        raise ConfigurationError(f"manifest dims {manifest.dims} != config dims {config.dims}")
    data = _slices(manifest, "train")
    if data is None:
        raise ValidationError("manifest has no training cases")
    x, m, idx = data
    depth = config.dims[2]
    tc = config.vae_train
    torch.manual_seed(derive_seed(config.seed, 1))
    model = SliceVAE(config.vae)
    optimizer = torch.optim.Adam(model.parameters(), lr=tc.learning_rate)
    start, history = 0, {"loss": [], "validation": []}
    ckpt_path = out / "vae.ckpt"
    if resume and ckpt_path.exists():
        model, header, tensors = load_vae(ckpt_path)
        model.train()
        optimizer = torch.optim.Adam(model.parameters(), lr=tc.learning_rate)
        restore_optimizer(optimizer, model, tensors)
        start = int(header["meta"]["step"])
        history = read_json(out / "loss_log.json")
    pos = model.positions(idx, depth)
    latent_shape = config.vae.latent_shape
    seed = derive_seed(config.seed, 2)

    def loss_fn(gen):
        sel = torch.randint(0, x.shape[0], (tc.batch_size,), generator=gen)
        noise = torch.randn((tc.batch_size, *latent_shape), generator=gen)
        return vae_loss(model, x[sel], m[sel], pos[sel], noise)[0]

    def on_eval(step):
        model.eval()
        metrics = vae_validation_metrics(model, manifest)
        model.train()
        history["validation"].append({"step": step, **metrics})
        log.info("vae step %d: %s", step, metrics)

    model.train()
    history["loss"] += _train_loop(model, optimizer, loss_fn, tc.steps, start, seed, on_eval, tc.eval_every)
    model.eval()
    save_vae(ckpt_path, model, optimizer, step=max(tc.steps, start), meta={"dims": list(config.dims), "seed": config.seed})
    write_json(history, out / "loss_log.json")
    return ckpt_path


# --------------------------------------------------------------------------
# latent cache


def encode_dataset(vae_ckpt, manifest: DatasetManifest, out_dir, split: str = "train") -> tuple[Path, LatentScaler]:
    """Encode every case of ``split`` with the posterior mean and fit the latent scaler.

    Writes ``latents/<case_id>.sblv`` (unnormalized) and ``latent_index.json``
    holding the scaler, the conditions and the latent shape.
    """
    model, header, _ = load_vae(vae_ckpt)
    w, h, d = manifest.dims
    if tuple(model.cfg.slice_shape) != (w, h):
        raise ConfigurationError(f"checkpoint slice shape {model.cfg.slice_shape} != dataset (W, H) {(w, h)}")
    out = _mkdir(out_dir)
    _mkdir(out / "latents")
    entries, codes = [], []
    for rec in sorted(manifest.split(split), key=lambda r: r.case_id):
        img, msk = manifest.load_case(rec)
        code = encode_volume(model, img.data, msk.data)
        rel = f"latents/{rec.case_id}.sblv"
        write_latent(code, out / rel)
        codes.append(code)
        entries.append({"case_id": rec.case_id, "latent_path": rel, "condition": rec.condition.to_json()})
    if not codes:
        raise ValidationError(f"split {split!r} is empty")
    scaler = fit_scaler(codes)
    index = {
        "code_version": __version__,
        "dims": list(manifest.dims),
        "latent_shape": list(codes[0].shape),
        "scaler": scaler.to_json(),
        "vae_checkpoint": Path(vae_ckpt).name,
        "cases": entries,
    }
    write_json(index, out / "latent_index.json")
    return out / "latent_index.json", scaler


def load_latent_cache(index_path) -> tuple[np.ndarray, np.ndarray, LatentScaler, dict]:
    """Return normalized latents ``(N, C, D, H', W')``, conditions ``(N, 9)``, scaler and index."""
    index = read_json(index_path)
    root = Path(index_path).parent
    scaler = LatentScaler.from_json(index["scaler"])
    latents, conds = [], []
    for entry in index["cases"]:
        vol = apply_scaler(LatentVolume(read_latent(root / entry["latent_path"])), scaler)
        latents.append(vol.code)
        cond = entry["condition"]
        arr = ConditionVector.from_json(cond).to_array() if isinstance(cond, dict) else np.asarray(cond, float)
        if arr.shape != (N_FEATURES,):
            raise ValidationError(f"case {entry['case_id']}: condition has {arr.size} components, expected {N_FEATURES}")
        conds.append(arr)
    return np.stack(latents), np.stack(conds), scaler, index


# --------------------------------------------------------------------------
# stage 2: latent diffusion


def save_ldm(path, model: Denoiser, meta: dict, optimizer=None, step: int = 0) -> None:
    tensors = dict(model.state_dict())
    info = {"step": step, **meta}
    if optimizer is not None:
        opt_tensors, opt_meta = optimizer_tensors(optimizer, model)
        tensors.update(opt_tensors)
        info["optimizer"] = opt_meta
    save_checkpoint(path, "ldm", model.cfg.to_json(), tensors, info)


def load_ldm(path) -> tuple[Denoiser, dict, dict]:
    header, tensors = load_checkpoint(path, kind="ldm")
    model = Denoiser(DenoiserConfig.from_json(header["config"]))
    model.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("optim/")})
    model.eval()
    return model, header, tensors


def train_diffusion(index_path, config: RunConfig, out_dir, resume: bool = False) -> Path:
    """Fit the ε-prediction objective on the cached, normalized latent volumes."""
    out = _mkdir(out_dir)
    _write_run_config(config, out)
    latents, conds, scaler, index = load_latent_cache(index_path)
    x0_all = torch.from_numpy(latents.astype(np.float32))
    c_all = torch.from_numpy(conds.astype(np.float32))
    schedule = linear_schedule(config.diffusion.T, config.diffusion.beta_start, config.diffusion.beta_end)
    tc = config.ldm_train
    torch.manual_seed(derive_seed(config.seed, 3))
    model = Denoiser(config.denoiser)
    model.cfg.check_shape(latents.shape[2:])
    model.tau.set_statistics(conds)
    optimizer = torch.optim.Adam(model.parameters(), lr=tc.learning_rate)
    start, history = 0, {"loss": []}
    ckpt_path = out / "ldm.ckpt"
    if resume and ckpt_path.exists():
        model, header, tensors = load_ldm(ckpt_path)
        model.train()
        optimizer = torch.optim.Adam(model.parameters(), lr=tc.learning_rate)
        restore_optimizer(optimizer, model, tensors)
        start = int(header["meta"]["step"])
        history = read_json(out / "loss_log.json")
    seed = derive_seed(config.seed, 4)

    def loss_fn(gen):
        sel = torch.randint(0, x0_all.shape[0], (tc.batch_size,), generator=gen)
        t = torch.randint(1, schedule.T + 1, (tc.batch_size,), generator=gen)
        eps = torch.randn((tc.batch_size, *x0_all.shape[1:]), generator=gen)
        return noise_prediction_loss(model, x0_all[sel], t, eps, c_all[sel], schedule)

    model.train()
    history["loss"] += _train_loop(model, optimizer, loss_fn, tc.steps, start, seed)
    model.eval()
    meta = {
        "dims": index["dims"],
        "latent_shape": index["latent_shape"],
        "scaler": scaler.to_json(),
        "diffusion": {k: getattr(config.diffusion, k) for k in ("T", "beta_start", "beta_end")},
        "condition_min": conds.min(axis=0).tolist(),
        "condition_max": conds.max(axis=0).tolist(),
        "train_conditions": conds.tolist(),
    }
    save_ldm(ckpt_path, model, meta, optimizer, step=max(tc.steps, start))
    write_json(history, out / "loss_log.json")
    return ckpt_path


# --------------------------------------------------------------------------
# generation


@dataclass
class SyntheticCase:
    image: VolumeGrid
    mask: MaskGrid
    requested_condition: ConditionVector
    measured_condition: ConditionVector | None


class Generator:
    """Frozen (autoencoder, denoiser) pair; never updates parameters."""

    def __init__(self, vae_ckpt, ldm_ckpt):
        self.vae, self.vae_header, _ = load_vae(vae_ckpt)
        self.denoiser, self.ldm_header, _ = load_ldm(ldm_ckpt)
        meta = self.ldm_header["meta"]
        self.dims = tuple(meta["dims"])
        if tuple(self.vae.cfg.slice_shape) != self.dims[:2]:
            raise ConfigurationError(f"vae slice shape {self.vae.cfg.slice_shape} incompatible with ldm dims {self.dims}")
        if tuple(meta["latent_shape"][:1]) != (self.vae.cfg.z_channels,):
            raise ConfigurationError("latent channel count differs between checkpoints")
        self.latent_shape = tuple(meta["latent_shape"])
        self.scaler = LatentScaler.from_json(meta["scaler"])
        d = meta["diffusion"]
        self.schedule = linear_schedule(d["T"], d["beta_start"], d["beta_end"])
        for p in list(self.vae.parameters()) + list(self.denoiser.parameters()):
            p.requires_grad_(False)

    @property
    def num_parameters(self) -> int:
        return self.vae.num_parameters() + self.denoiser.num_parameters()

    def sample_latents(self, conditions: np.ndarray, seeds, sampler: str = "ddim", ddim_steps: int = 50):
        conditions = np.atleast_2d(np.asarray(conditions, dtype=np.float64))
        if conditions.shape[1] != N_FEATURES:
            raise ValidationError(f"conditions need {N_FEATURES} components, got {conditions.shape[1]}")
        x_T = torch.stack(
            [torch.randn(self.latent_shape, generator=torch.Generator().manual_seed(int(s))) for s in seeds]
        )
        c = torch.as_tensor(conditions, dtype=torch.float32)
        z = sample(self.denoiser, self.schedule, c, x_T.shape, sampler, ddim_steps, seed=int(seeds[0]), x_T=x_T)
        return z.numpy()

    def generate(self, conditions, seed: int, sampler: str = "ddim", ddim_steps: int = 50, batch: int = 8):
        conditions = np.atleast_2d(np.asarray(conditions, dtype=np.float64))
        out = []
        for lo in range(0, len(conditions), batch):
            chunk = conditions[lo : lo + batch]
            seeds = [derive_seed(seed, lo + k) for k in range(len(chunk))]
            codes = self.sample_latents(chunk, seeds, sampler, ddim_steps)
            for code, cond in zip(codes, chunk):
                vol = invert_scaler(LatentVolume(code, scaler_applied=True), self.scaler)
                image, logits = decode_volume(self.vae, vol.code)
                mask = (logits > 0).astype(np.uint8)
                measured = condition_vector(mask) if mask.any() else None
                out.append(
                    SyntheticCase(
                        VolumeGrid(np.clip(image, 0.0, 1.0)),
                        MaskGrid(mask),
                        ConditionVector.from_array(cond),
                        measured,
                    )
                )
        return out


def generate(vae_ckpt, ldm_ckpt, c, n: int, seed: int, sampler: str = "ddim", ddim_steps: int = 50):
    """Draw ``n`` (volume, mask) pairs for the condition vector ``c``."""
    cond = c.to_array() if isinstance(c, ConditionVector) else np.asarray(c, dtype=np.float64)
    return Generator(vae_ckpt, ldm_ckpt).generate(np.tile(cond, (n, 1)), seed, sampler, ddim_steps)


def write_synthetic(cases: list[SyntheticCase], out_dir, dims, sources=None, extra: dict | None = None) -> DatasetManifest:
    """Persist synthetic cases as a dataset directory (all assigned to the train split)."""
    out = _mkdir(out_dir)
    _mkdir(out / "images")
    _mkdir(out / "masks")
    records, details = [], []
    for k, case in enumerate(cases):
        cid = f"synth_{k:04d}"
        write_volume(case.image, out / f"images/{cid}.sblv")
        write_mask(case.mask, out / f"masks/{cid}.sblm")
        cond = case.measured_condition or case.requested_condition
        records.append(CaseRecord(cid, f"images/{cid}.sblv", f"masks/{cid}.sblm", cond, "train"))
        details.append(
            {
                "case_id": cid,
                "source_case_id": sources[k] if sources else None,
                "requested_condition": case.requested_condition.to_json(),
                "measured_condition": case.measured_condition.to_json() if case.measured_condition else None,
                "empty_mask": case.measured_condition is None,
            }
        )
    manifest = DatasetManifest(
        dims=tuple(dims),
        cases=records,
        provenance={"code_version": __version__, "synthetic": details, **(extra or {})},
        root=out,
    )
    write_manifest(manifest, out / "manifest.json")
    return manifest


def sample_for_manifest(vae_ckpt, ldm_ckpt, manifest: DatasetManifest, split: str, n: int | None, seed: int,
                        out_dir, sampler: str = "ddim", ddim_steps: int = 50) -> DatasetManifest:
    """Generate one synthetic case per reference case of ``split``, using its condition vector."""
    gen = Generator(vae_ckpt, ldm_ckpt)
    refs = sorted(manifest.split(split), key=lambda r: r.case_id)
    if n is not None:
        refs = [refs[k % len(refs)] for k in range(n)]
    conds = np.stack([r.condition.to_array() for r in refs])
    t0 = time.perf_counter()
    cases = gen.generate(conds, seed, sampler, ddim_steps)
    elapsed = time.perf_counter() - t0
    extra = {
        "sampler": sampler,
        "ddim_steps": ddim_steps if sampler == "ddim" else None,
        "denoiser_evaluations": ddim_steps if sampler == "ddim" else gen.schedule.T,
        "seed": seed,
        "num_parameters": {"vae": gen.vae.num_parameters(), "denoiser": gen.denoiser.num_parameters()},
    }
    result = write_synthetic(cases, out_dir, manifest.dims, [r.case_id for r in refs], extra)
    write_json({"seconds_total": elapsed, "seconds_per_volume": elapsed / max(len(cases), 1), "n": len(cases)},
               Path(out_dir) / "timing.json")
    return result


# --------------------------------------------------------------------------
# size sweep


def _scaled_condition(base: np.ndarray, volume: float) -> np.ndarray:
    """Change the volume component and rescale area (V^2/3) and bbox extents (V^1/3) with it."""
    c = base.copy()
    ratio = volume / base[0]
    c[0] = volume
    c[1] = min(base[1] * ratio ** (2.0 / 3.0), 1.0)
    c[6:9] = np.clip(base[6:9] * ratio ** (1.0 / 3.0), 1e-6, 1.0)
    return c


def median_condition(conditions: np.ndarray) -> np.ndarray:
    """Condition of the training case whose tumor volume is the (lower) median."""
    order = np.argsort(conditions[:, 0], kind="stable")
    return conditions[order[(len(order) - 1) // 2]].copy()


def size_sweep(vae_ckpt, ldm_ckpt, base_c=None, grid=None, seed: int = 0, draws_per_point: int = 4,
               sampler: str = "ddim", ddim_steps: int = 50) -> dict:
    """Vary the requested tumor volume with position fixed and measure the generated volumes.

    Grid values in ``[0, 1]`` are mapped linearly onto the training range of the
    volume feature. Every grid point uses the same initial noises.
    """
    gen = Generator(vae_ckpt, ldm_ckpt)
    meta = gen.ldm_header["meta"]
    grid = list(grid if grid is not None else (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9))
    if base_c is None:
        base_c = median_condition(np.asarray(meta["train_conditions"]))
    base_c = base_c.to_array() if isinstance(base_c, ConditionVector) else np.asarray(base_c, dtype=np.float64)
    v_lo, v_hi = meta["condition_min"][0], meta["condition_max"][0]
    w, h, d = gen.dims
    n_vox = w * h * d
    entries = []
    for g in grid:
        requested = v_lo + g * (v_hi - v_lo)
        cond = _scaled_condition(base_c, requested)
        cases = gen.generate(np.tile(cond, (draws_per_point, 1)), seed, sampler, ddim_steps)
        volumes = [int(c.mask.data.sum()) for c in cases]
        coms = [c.measured_condition.com for c in cases if c.measured_condition is not None]
        entries.append(
            {
                "grid_value": g,
                "requested_volume_norm": requested,
                "requested_voxels": requested * n_vox,
                "measured_voxels": volumes,
                "measured_voxels_mean": float(np.mean(volumes)),
                "measured_volume_norm_mean": float(np.mean(volumes)) / n_vox,
                "nonempty_fraction": float(np.mean([v > 0 for v in volumes])),
                "com_mean": np.mean(coms, axis=0).tolist() if coms else None,
            }
        )
    measured = [e["measured_voxels_mean"] for e in entries]
    # rank correlation is undefined when every grid point measured the same volume
    rho = None
    if len(set(measured)) > 1:
        rho = float(stats.spearmanr([e["requested_volume_norm"] for e in entries], measured)[0])
    coms = np.array([e["com_mean"] for e in entries if e["com_mean"] is not None])
    drift = float(np.max(coms.max(axis=0) - coms.min(axis=0))) if len(coms) else None
    return {
        "code_version": __version__,
        "base_condition": base_c.tolist(),
        "seed": seed,
        "sampler": sampler,
        "ddim_steps": ddim_steps,
        "draws_per_point": draws_per_point,
        "entries": entries,
        "spearman_rho": rho,
        "com_drift": drift,
    }


# --------------------------------------------------------------------------
# generation quality


REFERENCE_BASELINES = ("3D-LSGAN", "3D-LDM")


def eval_generation(real: DatasetManifest, synth: DatasetManifest, split: str = "test") -> dict:
    """PSNR/SSIM of each synthetic volume against its source (or order-matched) real volume.

    Wall-clock sampling time is deliberately absent: the report must be a pure
    function of its inputs. The table instead lists the number of denoiser
    evaluations per volume; timings live in the synthetic set's ``timing.json``.
    """
    details = {d["case_id"]: d for d in (synth.provenance or {}).get("synthetic", [])}
    refs = sorted(real.split(split), key=lambda r: r.case_id)
    by_id = {r.case_id: r for r in real.cases}
    psnrs, ssims, pairs = [], [], []
    for k, rec in enumerate(sorted(synth.cases, key=lambda r: r.case_id)):
        src = details.get(rec.case_id, {}).get("source_case_id")
        ref = by_id.get(src) if src else None
        if ref is None:
            if not refs:
                raise ValidationError(f"no real case to pair with {rec.case_id}")
            ref = refs[k % len(refs)]
        a, _ = real.load_case(ref)
        b, _ = synth.load_case(rec)
        psnrs.append(psnr(a, b))
        ssims.append(ssim(a, b))
        pairs.append([rec.case_id, ref.case_id])

    def summary(name, values):
        arr = np.asarray(values, dtype=np.float64)
        return {"name": name, "value": float(arr.mean()), "std": float(arr.std(ddof=1)) if arr.size > 1 else None,
                "n": int(arr.size), "saturated": bool(np.any(arr >= 100.0)) if name == "psnr" else False}

    prov = synth.provenance or {}
    params = prov.get("num_parameters")
    n_params = sum(params.values()) if params else None
    label = "Slice LDM ({})".format("DDIM" if prov.get("sampler") == "ddim" else "DDPM")
    rows = [{"method": m, "psnr": None, "ssim": None, "num_parameters": None, "denoiser_evaluations": None,
             "note": "not reproduced"} for m in REFERENCE_BASELINES]
    rows.append({
        "method": label,
        "psnr": summary("psnr", psnrs)["value"],
        "ssim": summary("ssim", ssims)["value"],
        "num_parameters": n_params,
        "denoiser_evaluations": prov.get("denoiser_evaluations"),
        "note": "this run",
    })
    return {
        "code_version": __version__,
        "metrics": [summary("psnr", psnrs), summary("ssim", ssims)],
        "pairs": pairs,
        "table": rows,
    }


def format_generation_table(report: dict) -> str:
    lines = [f"{'Method':<16}{'PSNR':>10}{'SSIM':>10}{'#params':>12}{'Denoiser evals':>16}"]
    for row in report["table"]:
        def fmt(v, spec):
            return format(v, spec) if v is not None else "-"
        lines.append(
            f"{row['method']:<16}{fmt(row['psnr'], '.3f'):>10}{fmt(row['ssim'], '.3f'):>10}"
            f"{fmt(row['num_parameters'], 'd'):>12}{fmt(row['denoiser_evaluations'], 'd'):>16}"
        )
    return "\n".join(lines) + "\n"
