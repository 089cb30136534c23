"""
The ``hsnerf`` command line.

Every command reads and writes files only. Exit codes: 0 success, 2
configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations


__all__ = ["main", "build_parser"]

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from hsnerf.backend import set_dtype, set_threads
from hsnerf.checkpoint import load_checkpoint
from hsnerf.config import (
    Experiment,
    apply_overrides,
    dump_experiment,
    load_experiment,
)
from hsnerf.dataio import (
    HyperCube,
    load_dataset,
    read_cube,
    read_mask,
    read_poses,
    write_cube,
)
from hsnerf.errors import ConfigError, DataError, HsNerfError, exit_code
from hsnerf.experiments import (
    run_ablation,
    run_lambda_sweep,
    run_rgb_comparison,
    run_superres,
)
from hsnerf.metrics import write_metrics_csv
from hsnerf.renderer import SamplerConfig, render_image
from hsnerf.spectools import (
    DEFAULT_RGB_BANDS,
    fit_linear_map,
    fit_residual,
    pseudo_rgb_fixed,
    read_response_csv,
    read_rgb,
    simulate_sensor,
    superres_report,
    write_response_csv,
    write_rgb,
)
from hsnerf.synthetic import (
    RingSpec,
    SyntheticScene,
    random_scene,
    three_sphere_scene,
    wavelength_grid,
    write_synthetic_dataset,
)
from hsnerf.trainer import CHECKPOINT_FILE, Trainer, evaluate


logger = logging.getLogger("hsnerf")


def _floats(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _experiment(args: argparse.Namespace) -> Experiment:
    exp = load_experiment(args.config) if args.config else Experiment()
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    exp = apply_overrides(exp, overrides)
    set_dtype(exp.train.dtype)  # type: ignore[arg-type]
    return exp


def _progress(args: argparse.Namespace) -> bool:
    return not args.quiet


def cmd_synth(args: argparse.Namespace) -> None:
    lo, hi = args.range
    rng = np.random.default_rng(args.seed or 0)
    if args.scene_file:
        try:
            text = Path(args.scene_file).read_text()
        except OSError as e:
            raise DataError(f"cannot read scene {args.scene_file}: {e}") from e
        scene = SyntheticScene.from_dict(json.loads(text))
    elif args.scene == "random":
        scene = random_scene(
            rng, args.spheres, (lo, hi), background=args.background
        )
    elif args.scene == "empty":
        scene = SyntheticScene((), args.background)
    else:
        scene = three_sphere_scene((lo, hi), args.background)
    ring = RingSpec(
        n_cameras=args.cameras,
        image_width=args.size,
        image_height=args.size,
        height_jitter=args.height_jitter,
    )
    write_synthetic_dataset(
        args.out,
        scene,
        ring,
        wavelength_grid(args.wavelengths, (lo, hi)),
        rng,
        n_steps=args.march_steps,
        progress=_progress(args),
    )


def cmd_train(args: argparse.Namespace) -> None:
    out = Path(args.out)
    checkpoint = out / CHECKPOINT_FILE
    dataset = load_dataset(args.dataset)
    if args.resume:
        if not checkpoint.is_file():
            raise DataError(f"nothing to resume: {checkpoint} does not exist")
        trainer = Trainer.resume(
            checkpoint, dataset, out_dir=out, progress=_progress(args)
        )
        logger.info("resuming at step %d", trainer.step)
    else:
        exp = _experiment(args)
        out.mkdir(parents=True, exist_ok=True)
        dump_experiment(exp, out)
        trainer = Trainer.create(
            dataset,
            exp.field,
            exp.train,
            exp.sampler,
            exp.split,
            out_dir=out,
            progress=_progress(args),
        )
    trainer.run()
    if trainer.eval_images:
        report = trainer.evaluate(lambdas=trainer.train_wavelengths)
        write_metrics_csv(out / "metrics.csv", report.per_wavelength())
        logger.info(
            "eval: PSNR %.2f dB, SSIM %.4f", report.mean_psnr, report.mean_ssim
        )


def cmd_render(args: argparse.Namespace) -> None:
    ckpt = load_checkpoint(args.checkpoint)
    cameras, _ = read_poses(args.poses)
    if not 0 <= args.frame < len(cameras):
        raise DataError(f"frame {args.frame} of {len(cameras)}")
    sampler = SamplerConfig.from_dict(ckpt.meta.get("sampler", {}))
    if args.wavelengths == "all":
        lam = np.asarray(ckpt.field.config.channel_wavelengths or (), float)
        if not lam.size:
            raise ConfigError("the checkpoint stores no channel grid")
    else:
        lam = np.asarray(_floats(args.wavelengths))
        if not lam.size or np.any(np.diff(lam) <= 0):
            raise ConfigError(
                "--wavelengths must list strictly increasing values in nm"
            )
    render = render_image(
        ckpt.field,
        cameras[args.frame],
        lam,
        sampler,
        float(ckpt.meta.get("background", 0.0)),
        progress=_progress(args),
    )
    cube = HyperCube(lam, render.cube)
    write_cube(cube, args.out)
    if args.rgb:
        write_rgb(pseudo_rgb_fixed(cube, *args.bands), args.rgb)


def cmd_eval(args: argparse.Namespace) -> None:
    ckpt = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    meta = ckpt.meta
    try:
        train_images = meta["train_images"]
        eval_images = meta["eval_images"]
        held = meta["held_channels"]
        trained = meta["train_channels"]
    except KeyError as e:
        raise DataError(f"checkpoint lacks split metadata {e}") from None
    sampler = SamplerConfig.from_dict(meta.get("sampler", {}))
    lam = dataset.wavelengths
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    report = evaluate(
        ckpt.field,
        dataset,
        eval_images,
        lam[trained],
        sampler,
        progress=_progress(args),
    )
    write_metrics_csv(out / "metrics.csv", report.per_wavelength())
    logger.info(
        "eval images: PSNR %.2f dB, SSIM %.4f",
        report.mean_psnr,
        report.mean_ssim,
    )
    if held:
        quadrants = superres_report(
            ckpt.field,
            dataset,
            train_images,
            eval_images,
            lam[trained],
            lam[held],
            sampler,
            progress=_progress(args),
        )
        (out / "quadrants.json").write_text(
            json.dumps(quadrants.row(), indent=2) + "\n"
        )


def cmd_ablate(args: argparse.Namespace) -> None:
    exp = _experiment(args)
    dataset = load_dataset(args.dataset)
    if args.lambda_terms:
        run_lambda_sweep(
            dataset,
            exp,
            args.out,
            _ints(args.lambda_terms),
            progress=_progress(args),
        )
        return
    rows = [r - 1 for r in _ints(args.rows)] if args.rows else range(6)
    if any(not 0 <= r < 6 for r in rows):
        raise ConfigError("ablation rows are numbered 1 to 6")
    run_ablation(dataset, exp, args.out, rows=rows, progress=_progress(args))


def cmd_sensor(args: argparse.Namespace) -> None:
    cube = read_cube(args.cube)
    if args.action == "fit":
        rgb = read_rgb(args.rgb)
        if rgb.shape[:2] != (cube.height, cube.width):
            raise DataError(
                f"rgb image is {rgb.shape[1]}x{rgb.shape[0]}, cube "
                f"{cube.width}x{cube.height}"
            )
        mask = None
        if args.mask:
            # masks mark background; the fit uses the rest
            mask = ~read_mask(args.mask)
        response = fit_linear_map(cube, rgb, ridge=args.ridge, mask=mask)
        write_response_csv(response, args.out)
        logger.info(
            "fit residual (RMS) %.3g", fit_residual(cube, rgb, response)
        )
    else:
        response = read_response_csv(args.response)
        write_rgb(simulate_sensor(cube, response), args.out)


def cmd_superres(args: argparse.Namespace) -> None:
    exp = _experiment(args)
    dataset = load_dataset(args.dataset)
    keeps = _ints(args.keep) if args.keep else [
        dataset.n_channels,
        max(dataset.n_channels // 2, 1),
        max(dataset.n_channels // 4, 1),
    ]
    run_superres(dataset, exp, args.out, keeps, progress=_progress(args))


def cmd_rgb(args: argparse.Namespace) -> None:
    exp = _experiment(args)
    dataset = load_dataset(args.dataset)
    run_rgb_comparison(dataset, exp, args.out, progress=_progress(args))


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="experiment JSON file")
    parser.add_argument(
        "--set",
        action="append",
        metavar="SECTION.KEY=VALUE",
        help="override one config value (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hsnerf", description="Hyperspectral neural radiance fields"
    )
    parser.add_argument("--seed", type=int, help="seed of every random draw")
    parser.add_argument(
        "--threads", type=int, default=1, help="rendering worker threads"
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic dataset")
    p.add_argument("out")
    p.add_argument(
        "--scene", choices=("three", "random", "empty"), default="three"
    )
    p.add_argument("--scene-file", help="scene description JSON")
    p.add_argument("--spheres", type=int, default=3)
    p.add_argument("--wavelengths", type=int, default=16)
    p.add_argument(
        "--range", type=float, nargs=2, default=(400.0, 1000.0), metavar="NM"
    )
    p.add_argument("--cameras", type=int, default=20)
    p.add_argument("--size", type=int, default=48)
    p.add_argument("--height-jitter", type=float, default=0.0)
    p.add_argument("--background", type=float, default=0.0)
    p.add_argument("--march-steps", type=int, default=512)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a field on a dataset")
    p.add_argument("dataset")
    p.add_argument("out")
    p.add_argument(
        "--resume", action="store_true", help="continue the run in OUT"
    )
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render one camera of a pose file")
    p.add_argument("checkpoint")
    p.add_argument("poses", help="pose file (transforms.json)")
    p.add_argument("out", help="output HSC1 cube")
    p.add_argument("--frame", type=int, default=0)
    p.add_argument(
        "--wavelengths", default="all", help="'all' or comma-separated nm"
    )
    p.add_argument("--rgb", help="also write a pseudo-RGB PNG")
    p.add_argument(
        "--bands",
        type=float,
        nargs=3,
        default=DEFAULT_RGB_BANDS,
        metavar=("R", "G", "B"),
    )
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="score a checkpoint on its split")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("out", help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train the architecture matrix")
    p.add_argument("dataset")
    p.add_argument("out")
    p.add_argument("--rows", help="comma-separated rows (1-6), default all")
    p.add_argument(
        "--lambda-terms", help="sweep wavelength term counts, e.g. 2,4,8,16"
    )
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sensor", help="fit or simulate a camera response")
    p.add_argument("action", choices=("fit", "simulate"))
    p.add_argument("cube", help="HSC1 cube")
    p.add_argument("out", help="response CSV (fit) or PNG (simulate)")
    p.add_argument("--rgb", help="aligned RGB photo (fit)")
    p.add_argument("--mask", help="background mask PNG excluded from the fit")
    p.add_argument("--ridge", type=float, default=1e-8)
    p.add_argument("--response", help="response CSV (simulate)")
    p.set_defaults(func=cmd_sensor)

    p = sub.add_parser("superres", help="train with withheld wavelengths")
    p.add_argument("dataset")
    p.add_argument("out")
    p.add_argument("--keep", help="comma-separated kept wavelength counts")
    _add_config_flags(p)
    p.set_defaults(func=cmd_superres)

    p = sub.add_parser("rgb", help="hyperspectral vs RGB comparison")
    p.add_argument("dataset")
    p.add_argument("out")
    _add_config_flags(p)
    p.set_defaults(func=cmd_rgb)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG
        if args.verbose
        else logging.WARNING
        if args.quiet
        else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        set_threads(args.threads)
        if args.command == "sensor":
            needed = "rgb" if args.action == "fit" else "response"
            if getattr(args, needed) is None:
                raise ConfigError(f"sensor {args.action} needs --{needed}")
        args.func(args)
    except HsNerfError as e:
        print(f"hsnerf {args.command}: {e}", file=sys.stderr)
        return exit_code(e)
    except ValueError as e:
        # numeric argument errors from the library
        print(f"hsnerf {args.command}: {e}", file=sys.stderr)
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
