"""``sblds`` command line.

Exit codes: 0 success, 2 validation/configuration error, 3 training
divergence, 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, desk_config, load_config
from .errors import PersistenceError, SbldsError, TrainingError, ValidationError, DomainError
from .features import ConditionVector, condition_vector
from .volume_io import _write_bytes, read_json, read_manifest, read_mask, write_json

EXIT_OK, EXIT_VALIDATION, EXIT_DIVERGENCE, EXIT_IO = 0, 2, 3, 4


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else desk_config()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _require_out(args) -> Path:
    if not args.out:
        raise ValidationError("--out is required for this command")
    return Path(args.out)


def _write_report(report: dict, path: Path, table: str | None = None) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    write_json(report, path)
    if table is not None:
        _write_bytes(path.with_suffix(".txt"), table.encode("utf-8"))
        print(table, end="")


def _parse_dims(text: str) -> tuple[int, int, int]:
    try:
        dims = tuple(int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise ValidationError(f"dims must look like WxHxD, got {text!r}") from exc
    if len(dims) != 3:
        raise ValidationError(f"dims must look like WxHxD, got {text!r}")
    return dims


def cmd_gen_data(args) -> None:
    from dataclasses import replace

    from .phantom import generate_dataset

    cfg = _config(args)
    spec = cfg.phantom if args.dims is None else replace(cfg.phantom, dims=_parse_dims(args.dims))
    seed = cfg.seed
    n = args.n if args.n is not None else cfg.n_cases
    manifest = generate_dataset(seed, n, spec, _require_out(args))
    counts = {s: len(manifest.split(s)) for s in ("train", "val", "test")}
    print(f"wrote {len(manifest.cases)} cases to {args.out} {counts}")


def cmd_features(args) -> None:
    mask = read_mask(args.mask)
    cv = condition_vector(mask)
    print(json.dumps(cv.to_array().tolist()))


def cmd_train_vae(args) -> None:
    from .pipeline import train_vae

    cfg = _config(args)
    manifest = read_manifest(args.manifest, check_files=True)
    ckpt = train_vae(manifest, cfg, _require_out(args), resume=args.resume)
    print(f"checkpoint: {ckpt}")


def cmd_encode(args) -> None:
    from .pipeline import encode_dataset

    manifest = read_manifest(args.manifest, check_files=True)
    index, scaler = encode_dataset(args.vae, manifest, _require_out(args), split=args.split)
    print(f"latent index: {index} (mean {scaler.mean:.6g}, std {scaler.std:.6g})")


def cmd_train_ldm(args) -> None:
    from .pipeline import train_diffusion

    cfg = _config(args)
    index = Path(args.latents)
    if index.is_dir():
        index = index / "latent_index.json"
    ckpt = train_diffusion(index, cfg, _require_out(args), resume=args.resume)
    print(f"checkpoint: {ckpt}")


def cmd_sample(args) -> None:
    from .pipeline import Generator, sample_for_manifest, write_synthetic

    cfg = _config(args)
    sampler = args.sampler or cfg.diffusion.sampler
    steps = args.ddim_steps or cfg.diffusion.ddim_steps
    out = _require_out(args)
    if args.condition:
        cond = ConditionVector.from_json(json.loads(args.condition))
        gen = Generator(args.vae, args.ldm)
        cases = gen.generate(np.tile(cond.to_array(), (args.n or 1, 1)), cfg.seed, sampler, steps)
        manifest = write_synthetic(cases, out, gen.dims, extra={"sampler": sampler, "seed": cfg.seed})
    else:
        if not args.manifest:
            raise ValidationError("sample needs --manifest or --condition")
        ref = read_manifest(args.manifest)
        manifest = sample_for_manifest(args.vae, args.ldm, ref, args.split, args.n, cfg.seed, out, sampler, steps)
    empty = sum(d["empty_mask"] for d in manifest.provenance["synthetic"])
    print(f"wrote {len(manifest.cases)} synthetic cases to {out} ({empty} with empty masks)")


def cmd_size_sweep(args) -> None:
    from .pipeline import size_sweep

    cfg = _config(args)
    grid = [float(v) for v in args.grid.split(",")] if args.grid else list(cfg.sweep.grid)
    base = ConditionVector.from_json(json.loads(args.base_condition)) if args.base_condition else None
    report = size_sweep(args.vae, args.ldm, base, grid, cfg.seed, args.draws or cfg.sweep.draws_per_point,
                        cfg.diffusion.sampler, cfg.diffusion.ddim_steps)
    lines = [f"{'size':>6}{'requested vox':>15}{'measured vox':>14}{'nonempty':>10}"]
    for e in report["entries"]:
        lines.append(f"{e['grid_value']:>6.2f}{e['requested_voxels']:>15.1f}{e['measured_voxels_mean']:>14.1f}{e['nonempty_fraction']:>10.2f}")
    drift = report["com_drift"]
    lines.append(f"spearman rho = {report['spearman_rho']}, center-of-mass drift = "
                 f"{'undefined' if drift is None else format(drift, '.4f')}")
    _write_report(report, _require_out(args), "\n".join(lines) + "\n")


def cmd_eval_gen(args) -> None:
    from .pipeline import eval_generation, format_generation_table

    real = read_manifest(Path(args.real) / "manifest.json", check_files=True)
    synth = read_manifest(Path(args.synth) / "manifest.json", check_files=True)
    report = eval_generation(real, synth, args.split)
    _write_report(report, _require_out(args), format_generation_table(report))
    # wall-clock stays out of the report so reruns stay byte-identical
    timing_path = Path(args.synth) / "timing.json"
    if timing_path.exists():
        print(f"sampling time: {read_json(timing_path)['seconds_per_volume']:.3f} s/volume")


def cmd_segbench(args) -> None:
    from .seg import benchmark_report, default_regimes, format_table, run_benchmark

    cfg = _config(args)
    manifest = read_manifest(args.manifest, check_files=True)
    synth = read_manifest(Path(args.synth) / "manifest.json", check_files=True) if args.synth else None
    names = [r.strip() for r in args.regimes.split(",")] if args.regimes else None
    kw = {"names": names} if names else {}
    regimes = default_regimes(cfg.seg.n_real, cfg.seg.n_synth, cfg.seg.aug_factor, **kw)
    n_seeds = args.seeds if args.seeds is not None else cfg.seg.seeds
    seeds = [cfg.seed + k for k in range(n_seeds)]
    results = run_benchmark(manifest, synth, regimes, seeds, cfg.seg)
    _write_report(benchmark_report(results, cfg.seg), _require_out(args), format_table(results))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="RunConfig JSON (default: desk preset)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", help="output directory or report path")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="sblds", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write a phantom dataset")
    p.add_argument("--n", type=int)
    p.add_argument("--dims", help="WxHxD")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("features", parents=[common], help="print the condition vector of a mask")
    p.add_argument("--mask", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train-vae", parents=[common], help="train the slice autoencoder")
    p.add_argument("--manifest", required=True)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train_vae)

    p = sub.add_parser("encode", parents=[common], help="cache posterior-mean latent volumes")
    p.add_argument("--vae", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="train")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train-ldm", parents=[common], help="train the latent denoiser")
    p.add_argument("--latents", required=True, help="latent cache directory or latent_index.json")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train_ldm)

    p = sub.add_parser("sample", parents=[common], help="generate synthetic volumes and masks")
    p.add_argument("--vae", required=True)
    p.add_argument("--ldm", required=True)
    p.add_argument("--manifest", help="reference dataset whose conditions are reused")
    p.add_argument("--split", default="train")
    p.add_argument("--condition", help="explicit condition as JSON (9-list or object)")
    p.add_argument("--n", type=int)
    p.add_argument("--sampler", choices=("ddpm", "ddim"))
    p.add_argument("--ddim-steps", type=int)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("size-sweep", parents=[common], help="size-conditioned generation sweep")
    p.add_argument("--vae", required=True)
    p.add_argument("--ldm", required=True)
    p.add_argument("--grid", help="comma-separated sizes in [0, 1]")
    p.add_argument("--base-condition", help="condition JSON fixing position/shape")
    p.add_argument("--draws", type=int)
    p.set_defaults(func=cmd_size_sweep)

    p = sub.add_parser("eval-gen", parents=[common], help="PSNR/SSIM of synthetic vs real volumes")
    p.add_argument("--real", required=True, help="real dataset directory")
    p.add_argument("--synth", required=True, help="synthetic dataset directory")
    p.add_argument("--split", default="test")
    p.set_defaults(func=cmd_eval_gen)

    p = sub.add_parser("segbench", parents=[common], help="segmentation augmentation benchmark")
    p.add_argument("--manifest", required=True)
    p.add_argument("--synth", help="synthetic dataset directory")
    p.add_argument("--regimes", help="comma-separated regime names")
    p.add_argument("--seeds", type=int)
    p.set_defaults(func=cmd_segbench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        args.func(args)
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (PersistenceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, DomainError, SbldsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
