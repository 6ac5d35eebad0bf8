"""Shared fixtures-in-code for the test suite."""
from sblds.cli import EXIT_OK, main
from sblds.config import DiffusionConfig, RunConfig, SweepConfig, TrainConfig, save_config
from sblds.denoiser import DenoiserConfig
from sblds.phantom import PhantomSpec
from sblds.vae import VaeConfig


def tiny_config(seed=0, vae_steps=6, ldm_steps=6) -> RunConfig:
    dims = (16, 16, 8)
    return RunConfig(
        dims=dims,
        seed=seed,
        n_cases=7,
        phantom=PhantomSpec(dims=dims),
        vae=VaeConfig(slice_shape=(16, 16), channels=(8, 8), d_pos=16),
        vae_train=TrainConfig(learning_rate=2e-3, batch_size=4, steps=vae_steps, eval_every=3),
        diffusion=DiffusionConfig(T=50),
        denoiser=DenoiserConfig(base_channels=4, d_emb=16, tau_hidden=(16,), norm_groups=4),
        ldm_train=TrainConfig(learning_rate=1e-3, batch_size=2, steps=ldm_steps),
        sweep=SweepConfig(grid=(0.1, 0.5, 0.9), draws_per_point=1),
    )


def write_cli_config(path):
    """Save a tiny config whose segmentation benchmark also finishes in seconds."""
    cfg = tiny_config(vae_steps=4, ldm_steps=4)
    cfg.seg.channels = (8, 8)
    cfg.seg.steps = 4
    cfg.seg.n_real = 2
    cfg.seg.n_synth = 2
    cfg.seg.aug_factor = 2
    save_config(cfg, path)
    return path


def run_all(root, cfg_path):
    """Drive every data-producing verb once into ``root``; returns the sorted report paths."""
    c = ["--config", str(cfg_path)]
    assert main(["gen-data", *c, "--out", str(root / "data")]) == EXIT_OK
    assert main(["train-vae", *c, "--manifest", str(root / "data/manifest.json"), "--out", str(root / "vae")]) == EXIT_OK
    assert main(["encode", *c, "--vae", str(root / "vae/vae.ckpt"), "--manifest", str(root / "data/manifest.json"),
                 "--out", str(root / "lat")]) == EXIT_OK
    assert main(["train-ldm", *c, "--latents", str(root / "lat"), "--out", str(root / "ldm")]) == EXIT_OK
    ckpts = ["--vae", str(root / "vae/vae.ckpt"), "--ldm", str(root / "ldm/ldm.ckpt")]
    assert main(["sample", *c, *ckpts, "--manifest", str(root / "data/manifest.json"), "--split", "train",
                 "--n", "3", "--ddim-steps", "4", "--out", str(root / "synth")]) == EXIT_OK
    assert main(["sample", *c, *ckpts, "--manifest", str(root / "data/manifest.json"), "--split", "test",
                 "--ddim-steps", "4", "--out", str(root / "synth_test")]) == EXIT_OK
    assert main(["size-sweep", *c, *ckpts, "--grid", "0.1,0.9", "--draws", "1",
                 "--out", str(root / "reports/sweep.json")]) == EXIT_OK
    assert main(["eval-gen", *c, "--real", str(root / "data"), "--synth", str(root / "synth_test"),
                 "--out", str(root / "reports/gen.json")]) == EXIT_OK
    assert main(["segbench", *c, "--manifest", str(root / "data/manifest.json"), "--synth", str(root / "synth"),
                 "--seeds", "2", "--out", str(root / "reports/seg.json")]) == EXIT_OK
    return sorted((root / "reports").glob("*"))


# files every CLI run writes besides the reports; reruns must reproduce them byte for byte
RUN_ARTIFACTS = ("data/manifest.json", "data/images/case_0000.sblv", "vae/vae.ckpt", "ldm/ldm.ckpt",
                 "lat/latent_index.json", "synth/manifest.json", "synth/images/synth_0000.sblv",
                 "vae/loss_log.json", "ldm/loss_log.json", "ldm/config.json")
