"""
Two-stage training and conditional generation, in miniature
===========================================================

A small 16 x 16 x 8 phantom set runs through every stage in about a minute:
slice autoencoder, latent cache, latent denoiser, conditional sampling, the
size sweep and the generation metrics. A 4 x 4 latent slice is too coarse to
keep the tumor, so the samples are tumor-free; the point is the data flow.
``desk_config()`` trains to useful quality in about half an hour on one core.
"""

import tempfile
from pathlib import Path

import numpy as np

from sblds import pipeline as P
from sblds.config import DiffusionConfig, RunConfig, TrainConfig
from sblds.denoiser import DenoiserConfig
from sblds.phantom import PhantomSpec, generate_dataset
from sblds.vae import VaeConfig

dims = (16, 16, 8)
cfg = RunConfig(
    dims=dims,
    n_cases=10,
    phantom=PhantomSpec(dims=dims),
    vae=VaeConfig(slice_shape=(16, 16), channels=(8, 16), d_pos=16),
    vae_train=TrainConfig(learning_rate=2e-3, batch_size=16, steps=300, eval_every=100),
    diffusion=DiffusionConfig(T=200),
    denoiser=DenoiserConfig(base_channels=8, d_emb=32, tau_hidden=(32,), norm_groups=4),
    ldm_train=TrainConfig(learning_rate=1e-3, batch_size=4, steps=300),
)
root = Path(tempfile.mkdtemp(prefix="sblds_demo_"))

# stage 0: data with a fixed train/val/test split
manifest = generate_dataset(cfg.seed, cfg.n_cases, cfg.phantom, root / "data")
print({s: len(manifest.split(s)) for s in ("train", "val", "test")})

# stage 1: slice autoencoder, then cache one latent volume per training case
vae = P.train_vae(manifest, cfg, root / "vae")
print("autoencoder:", P.vae_validation_metrics(P.load_vae(vae)[0], manifest))
index, scaler = P.encode_dataset(vae, manifest, root / "lat")
print("latent scaler:", scaler)

# stage 2: the conditional latent denoiser
ldm = P.train_diffusion(index, cfg, root / "ldm")

# conditional generation from the median training tumor
gen = P.Generator(vae, ldm)
median = P.median_condition(np.asarray(gen.ldm_header["meta"]["train_conditions"]))
for case in gen.generate(np.tile(median, (3, 1)), seed=1, ddim_steps=20):
    print("sample: image range", case.image.data.min().round(3), case.image.data.max().round(3),
          "tumor voxels", int(case.mask.data.sum()))

sweep = P.size_sweep(vae, ldm, grid=[0.2, 0.5, 0.8], seed=0, draws_per_point=1, ddim_steps=20)
print("size sweep rho:", sweep["spearman_rho"], "center drift:", sweep["com_drift"])

synth = P.sample_for_manifest(vae, ldm, manifest, "test", None, seed=0, out_dir=root / "synth", ddim_steps=20)
print(P.format_generation_table(P.eval_generation(manifest, synth, "test")))
print("outputs in", root)
