"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Criteria 6-9 share one desk-scale training run (``desk_config``) built by the
module fixture below; it takes roughly half an hour on one CPU core.
"""
import time

import numpy as np
import pytest
import torch

from sblds.config import desk_config
from sblds.diffusion import ddim_step, ddim_timesteps, ddpm_step, linear_schedule
from sblds.errors import ValidationError
from sblds.features import surface_area, sphericity, voxel_volume
from sblds.latent import LatentScaler
from sblds.metrics import dice, iou, psnr, ssim
from sblds.phantom import generate_dataset
from sblds import pipeline as P
from sblds.seg import default_regimes, run_benchmark
from sblds.volume_io import (
    MaskGrid,
    VolumeGrid,
    read_latent,
    read_manifest,
    read_mask,
    read_volume,
    write_latent,
    write_manifest,
    write_mask,
    write_volume,
)

import test_denoiser
import test_features
import test_metrics
import test_vae
from helpers import RUN_ARTIFACTS, run_all, write_cli_config


@pytest.fixture
def verdict(capsys):
    """Print ``criterion N: PASS|FAIL detail`` straight to the terminal, then assert."""

    def report(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, f"criterion {n}: {detail}"

    return report


# --------------------------------------------------------------------------
# 1-5: algebraic and oracle checks


def test_c1_schedule_algebra(verdict):
    t0 = time.perf_counter()
    s = linear_schedule(1000)
    ab = 1.0
    worst_ab = 0.0
    a, v = 1.0, 0.0
    worst_av = 0.0
    for t in range(1, 1001):
        beta = s.betas[t - 1]
        ab *= 1.0 - beta
        worst_ab = max(worst_ab, abs(s.alpha_bar(t) - ab))
        # x_t = a_t x0 + noise of variance v_t, advanced one forward step at a time
        a = a * np.sqrt(1.0 - beta)
        v = (1.0 - beta) * v + beta
        worst_av = max(worst_av, abs(a - np.sqrt(s.alpha_bar(t))), abs(v - (1.0 - s.alpha_bar(t))))
    elapsed = time.perf_counter() - t0
    ok = worst_ab <= 1e-12 and worst_av <= 1e-9 and elapsed < 1.0
    verdict(1, ok, f"alpha_bar err {worst_ab:.1e}, (a,v) err {worst_av:.1e}, {elapsed:.3f}s")


def test_c2_oracle_sampler_identity(verdict):
    t0 = time.perf_counter()
    s = linear_schedule(1000)
    gen = torch.Generator().manual_seed(0)
    x0 = torch.randn(2, 1, 4, 4, 4, generator=gen, dtype=torch.float64)

    def oracle(x_t, t):
        ab = s.alpha_bar(t)
        return (x_t - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)

    grid = ddim_timesteps(1000, 1000)
    x = torch.randn(x0.shape, generator=gen, dtype=torch.float64)
    for t, t_prev in zip(reversed(grid), reversed([0] + grid[:-1])):
        x = ddim_step(x, oracle(x, t), t, t_prev, s)
    err = (x - x0).abs().max().item()

    x1 = torch.randn(x0.shape, generator=gen, dtype=torch.float64)
    eps = oracle(x1, 1)
    a = ddpm_step(x1, eps, 1, s, torch.randn(x0.shape, generator=gen, dtype=torch.float64))
    b = ddpm_step(x1, eps, 1, s, torch.randn(x0.shape, generator=gen, dtype=torch.float64))
    deterministic = s.posterior_vars[0] == 0.0 and torch.equal(a, b)
    elapsed = time.perf_counter() - t0
    ok = err < 1e-4 and deterministic and elapsed < 10
    verdict(2, ok, f"DDIM-1000 |x0_hat - x0|_inf {err:.1e}, sigma_1 = {s.posterior_vars[0]}, {elapsed:.2f}s")


def test_c3_gradient_correctness(verdict):
    t0 = time.perf_counter()
    failures = []
    for name, check in (("vae", test_vae.test_finite_difference_gradients),
                        ("denoiser", test_denoiser.test_finite_difference_gradients)):
        try:
            check()
        except AssertionError as exc:
            failures.append(f"{name}: {exc}")
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 120
    verdict(3, ok, f"finite differences on <=1000-param micro-configs, {elapsed:.1f}s {failures or ''}")


def test_c4_metric_oracles(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    mismatches = 0
    identity_err = 0.0
    for _ in range(10_000):
        shape = tuple(rng.integers(1, 6, size=3))
        a = rng.random(shape) < rng.random()
        b = rng.random(shape) < rng.random()
        inter = sum(int(x and y) for x, y in zip(a.ravel(), b.ravel()))
        union = sum(int(x or y) for x, y in zip(a.ravel(), b.ravel()))
        total = int(a.sum()) + int(b.sum())
        d_ref = 1.0 if total == 0 else 2 * inter / total
        j_ref = 1.0 if union == 0 else inter / union
        d, j = dice(a, b), iou(a, b)
        mismatches += d != d_ref or j != j_ref
        identity_err = max(identity_err, abs(d - 2 * j / (1 + j)))
    x = rng.random((8, 8, 8))
    psnr_err = abs(psnr(np.zeros((4, 4, 4)), np.full((4, 4, 4), 0.1)) - 20.0)
    ssim_err = abs(ssim(x, x) - 1.0)
    small = rng.random((8, 8, 8)), rng.random((8, 8, 8))
    ssim_route = abs(ssim(*small) - test_metrics.brute_ssim(*small))
    elapsed = time.perf_counter() - t0
    ok = (mismatches == 0 and identity_err <= 1e-12 and psnr_err <= 1e-9 and ssim_err <= 1e-9
          and ssim_route <= 1e-9 and elapsed < 60)
    verdict(4, ok, f"{mismatches} Dice/IoU mismatches in 1e4, identity {identity_err:.1e}, "
                   f"PSNR {psnr_err:.1e}, SSIM(a,a) {ssim_err:.1e}, {elapsed:.1f}s")


def test_c5_feature_oracles(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    mismatches = 0
    for _ in range(10_000):
        shape = tuple(rng.integers(1, 7, size=3))
        m = (rng.random(shape) < rng.random()).astype(np.uint8)
        mismatches += surface_area(m) != test_features.brute_force_faces(m)
    target = (np.pi / 6) ** (1 / 3)
    cube_err = 0.0
    for side in (1, 2, 4, 8):
        m = test_features.cube_mask(side)
        cube_err = max(cube_err, abs(sphericity(voxel_volume(m), surface_area(m)) - target))
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and cube_err <= 1e-4 and elapsed < 60
    verdict(5, ok, f"{mismatches} surface mismatches in 1e4, cube sphericity err {cube_err:.1e}, {elapsed:.1f}s")


# --------------------------------------------------------------------------
# 6-9: desk-scale training run


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    cfg = desk_config()
    manifest = generate_dataset(cfg.seed, cfg.n_cases, cfg.phantom, root / "data")
    t0 = time.perf_counter()
    vae = P.train_vae(manifest, cfg, root / "vae")
    vae_seconds = time.perf_counter() - t0
    index, _ = P.encode_dataset(vae, manifest, root / "lat")
    ldm = P.train_diffusion(index, cfg, root / "ldm")
    total_seconds = time.perf_counter() - t0
    return {"root": root, "cfg": cfg, "manifest": manifest, "vae": vae, "ldm": ldm,
            "vae_seconds": vae_seconds, "total_seconds": total_seconds}


def test_c6_vae_quality(desk, verdict):
    m = P.vae_validation_metrics(P.load_vae(desk["vae"])[0], desk["manifest"])
    n_train = len(desk["manifest"].split("train"))
    gain = m["psnr"] - m["baseline_psnr"]
    ok = n_train == 40 and desk["manifest"].dims == (32, 32, 16) and gain >= 6.0 and m["mask_dice"] >= 0.9 \
        and desk["vae_seconds"] <= 15 * 60
    verdict(6, ok, f"PSNR {m['psnr']:.2f} dB vs mean-image {m['baseline_psnr']:.2f} dB (+{gain:.2f}), "
                   f"mask Dice {m['mask_dice']:.3f} on {m['n_nonempty_slices']} slices, "
                   f"{desk['vae_seconds'] / 60:.1f} min on {n_train} volumes")


def test_c7_conditional_generation(desk, verdict):
    gen = P.Generator(desk["vae"], desk["ldm"])
    med = P.median_condition(np.asarray(gen.ldm_header["meta"]["train_conditions"]))
    cases = gen.generate(np.tile(med, (20, 1)), seed=123)
    nonempty = float(np.mean([c.mask.data.any() for c in cases]))
    sweep = P.size_sweep(desk["vae"], desk["ldm"], seed=7)
    rho, drift = sweep["spearman_rho"], sweep["com_drift"]
    minutes = desk["total_seconds"] / 60
    ok = nonempty >= 0.9 and rho >= 0.6 and drift <= 0.15 and minutes <= 60
    verdict(7, ok, f"nonempty {nonempty:.2f}, Spearman rho {rho:.3f}, COM drift {drift:.3f}, "
                   f"training {minutes:.1f} min")


def test_c8_sampling_time(desk, verdict):
    t_start = time.perf_counter()
    gen = P.Generator(desk["vae"], desk["ldm"])
    c = P.median_condition(np.asarray(gen.ldm_header["meta"]["train_conditions"]))[None]
    gen.generate(c, seed=0, ddim_steps=5)  # warm-up
    t0 = time.perf_counter()
    gen.generate(c, seed=1, sampler="ddim", ddim_steps=50)
    t_ddim = time.perf_counter() - t0
    t0 = time.perf_counter()
    gen.generate(c, seed=1, sampler="ddpm")
    t_ddpm = time.perf_counter() - t0
    elapsed = time.perf_counter() - t_start
    ok = t_ddim < t_ddpm / 10 and elapsed < 300
    verdict(8, ok, f"DDIM-50 {t_ddim:.3f}s vs DDPM-1000 {t_ddpm:.3f}s per volume ({t_ddpm / t_ddim:.1f}x)")


def test_c9_augmentation_benchmark(desk, verdict):
    cfg, manifest = desk["cfg"], desk["manifest"]
    synth = P.sample_for_manifest(desk["vae"], desk["ldm"], manifest, "train", cfg.seg.n_synth, cfg.seed,
                                  desk["root"] / "synth")
    # a synthetic set derived from test cases must be refused
    test_refs = manifest.split("test")[:2]
    leaky_cases = P.Generator(desk["vae"], desk["ldm"]).generate(
        np.stack([r.condition.to_array() for r in test_refs]), seed=0, ddim_steps=5)
    leaky = P.write_synthetic(leaky_cases, desk["root"] / "leaky", manifest.dims, [r.case_id for r in test_refs])
    try:
        run_benchmark(manifest, leaky, default_regimes(2, 2, 2, names=["synth_only"]), [0], cfg.seg)
        isolated = False
    except ValidationError:
        isolated = True

    regimes = default_regimes(cfg.seg.n_real, cfg.seg.n_synth, cfg.seg.aug_factor)
    seeds = list(range(cfg.seg.seeds))
    t0 = time.perf_counter()
    results = run_benchmark(manifest, synth, regimes, seeds, cfg.seg)
    minutes = (time.perf_counter() - t0) / 60
    by_name = {r.regime.name: r for r in results}
    names = [r.regime.name for r in results]
    ok = (names == ["real", "real_aug", "synth_only", "real_plus_synth", "real_plus_synth_aug"]
          and all(len(r.seeds) >= 3 for r in results) and isolated
          and by_name["synth_only"].dsc_mean < by_name["real_plus_synth"].dsc_mean and minutes <= 45)
    rows = ", ".join(f"{r.regime.name} {r.dsc_mean:.3f}±{r.dsc_std:.3f}" for r in results)
    verdict(9, ok, f"DSC {rows}; {len(seeds)} seeds, isolation {'enforced' if isolated else 'MISSING'}, "
                   f"{minutes:.1f} min")


# --------------------------------------------------------------------------
# 10: determinism and provenance


def test_c10_determinism_and_roundtrip(tmp_path, verdict):
    cfg_path = write_cli_config(tmp_path / "config.json")
    a, b = tmp_path / "a", tmp_path / "b"
    reports_a, reports_b = run_all(a, cfg_path), run_all(b, cfg_path)
    differ = [pa.name for pa, pb in zip(reports_a, reports_b) if pa.read_bytes() != pb.read_bytes()]
    differ += [rel for rel in RUN_ARTIFACTS if (a / rel).read_bytes() != (b / rel).read_bytes()]
    same_reports = [p.name for p in reports_a] == [p.name for p in reports_b] and len(reports_a) == 6

    rng = np.random.default_rng(10)
    files = tmp_path / "rt"
    files.mkdir()
    vol = VolumeGrid(rng.random((4, 6, 5)).astype(np.float32))
    mask = MaskGrid((rng.random((4, 6, 5)) > 0.5).astype(np.uint8))
    code = rng.standard_normal((1, 4, 3, 2)).astype(np.float32)
    write_volume(vol, files / "v.sblv")
    write_mask(mask, files / "m.sblm")
    write_latent(code, files / "z.sbll")
    manifest = read_manifest(a / "data/manifest.json")
    write_manifest(manifest, files / "manifest.json")
    roundtrip = (read_volume(files / "v.sblv") == vol and read_mask(files / "m.sblm") == mask
                 and np.array_equal(read_latent(files / "z.sbll"), code)
                 and (files / "manifest.json").read_bytes() == (a / "data/manifest.json").read_bytes()
                 and LatentScaler.from_json(LatentScaler(0.1, 2.0).to_json()) == LatentScaler(0.1, 2.0))
    ok = not differ and same_reports and roundtrip
    verdict(10, ok, f"{len(reports_a)} reports + {len(RUN_ARTIFACTS)} artifacts byte-identical across reruns "
                    f"{differ or ''}, format round-trip {'exact' if roundtrip else 'BROKEN'}")
