"""
Multi-run experiments: the architecture ablation matrix, the wavelength
encoding sweep, wavelength-withholding super-resolution and the
hyperspectral versus RGB comparison.

Each run lives in its own subdirectory with its config, loss log and
checkpoint; a finished run leaves a ``result.json`` and is skipped when the
experiment is started again.
"""

from __future__ import annotations


__all__ = [
    "RunResult",
    "ROW_OVERRIDES",
    "row_train_config",
    "train_and_evaluate",
    "run_ablation",
    "run_lambda_sweep",
    "run_superres",
    "run_rgb_comparison",
    "pseudo_rgb_dataset",
    "write_results_csv",
]

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from hsnerf.config import Experiment, dump_experiment
from hsnerf.dataio import Dataset, HyperCube
from hsnerf.field import ABLATION_ROWS
from hsnerf.spectools import (
    DEFAULT_RGB_BANDS,
    QUADRANTS,
    SuperresReport,
    pseudo_rgb_fixed,
    superres_report,
)
from hsnerf.trainer import (
    CHECKPOINT_FILE,
    SplitSpec,
    TrainConfig,
    Trainer,
    split_dataset,
)


logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

RESULT_FILE = "result.json"

# (wavelengths_per_step, cache_images) per ablation row
ROW_OVERRIDES: Tuple[Tuple[Union[int, str], Union[int, str]], ...] = (
    ("all", "all"),
    ("all", "all"),
    (8, "all"),
    (12, "all"),
    (6, "all"),
    ("all", 10),
)


@dataclass(frozen=True)
class RunResult:
    name: str
    label: str
    psnr: float
    ssim: float
    parameters: int
    steps: int
    seconds: float
    extra: Dict[str, Any] = dataclasses.field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> RunResult:
        return cls(**data)


def _clamp(value: Union[int, str], limit: int) -> Union[int, str]:
    return value if value == "all" else min(int(value), limit)


def row_train_config(
    row: int, train: TrainConfig, n_channels: int, n_train_images: int
) -> TrainConfig:
    """Per-row sampling overrides, clamped to the channels and training
    images available, and a row-specific seed."""
    wavelengths, cache = ROW_OVERRIDES[row]
    seed = int(np.random.default_rng([train.seed, row]).integers(2**31))
    return train.replace(
        wavelengths_per_step=_clamp(wavelengths, n_channels),
        cache_images=_clamp(cache, n_train_images),
        seed=seed,
    )


def _finished(run_dir: Path) -> Optional[RunResult]:
    path = run_dir / RESULT_FILE
    if not path.is_file():
        return None
    return RunResult.from_dict(json.loads(path.read_text()))


def train_and_evaluate(
    dataset: Dataset,
    experiment: Experiment,
    run_dir: PathLike,
    name: str,
    *,
    progress: bool = False,
) -> Tuple[Trainer, RunResult]:
    """Train one configuration (resuming a checkpoint left in `run_dir`) and
    score it on the held-out images at the training wavelengths."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    dump_experiment(experiment, run_dir)
    checkpoint = run_dir / CHECKPOINT_FILE
    if checkpoint.is_file():
        trainer = Trainer.resume(
            checkpoint, dataset, out_dir=run_dir, progress=progress
        )
        logger.info("%s: resuming at step %d", name, trainer.step)
    else:
        trainer = Trainer.create(
            dataset,
            experiment.field,
            experiment.train,
            experiment.sampler,
            experiment.split,
            out_dir=run_dir,
            progress=progress,
        )
    start = time.perf_counter()
    trainer.run()
    seconds = time.perf_counter() - start
    report = trainer.evaluate(lambdas=trainer.train_wavelengths)
    result = RunResult(
        name=name,
        label=trainer.field.config.label,
        psnr=report.mean_psnr,
        ssim=report.mean_ssim,
        parameters=trainer.field.parameter_count(),
        steps=trainer.step,
        seconds=seconds,
    )
    (run_dir / RESULT_FILE).write_text(json.dumps(result.to_dict(), indent=2))
    logger.info(
        "%s (%s): PSNR %.2f dB, SSIM %.4f",
        name,
        result.label,
        result.psnr,
        result.ssim,
    )
    return trainer, result


def run_ablation(
    dataset: Dataset,
    experiment: Experiment,
    out_dir: PathLike,
    *,
    rows: Sequence[int] = range(len(ABLATION_ROWS)),
    progress: bool = False,
) -> List[RunResult]:
    """Train and score the architecture rows in their fixed order."""
    out = Path(out_dir)
    n_train = len(split_dataset(len(dataset), experiment.split)[0])
    results = []
    for row in rows:
        radiance, density, proposal = ABLATION_ROWS[row]
        name = f"row{row + 1}"
        run_dir = out / name
        done = _finished(run_dir)
        if done is None:
            field = experiment.field.replace(
                radiance_variant=radiance,
                density_variant=density,
                proposal_variant=proposal,
                shared_latent=radiance == "C",
            )
            train = row_train_config(
                row, experiment.train, dataset.n_channels, n_train
            )
            run = dataclasses.replace(experiment, field=field, train=train)
            _, done = train_and_evaluate(
                dataset, run, run_dir, name, progress=progress
            )
        results.append(done)
    write_results_csv(out / "ablation.csv", results)
    return results


def run_lambda_sweep(
    dataset: Dataset,
    experiment: Experiment,
    out_dir: PathLike,
    terms: Sequence[int] = (2, 4, 8, 16),
    *,
    progress: bool = False,
) -> List[RunResult]:
    """Train the configured architecture once per wavelength term count."""
    out = Path(out_dir)
    results = []
    for n_terms in terms:
        name = f"lambda_terms_{n_terms}"
        run_dir = out / name
        done = _finished(run_dir)
        if done is None:
            field = experiment.field.replace(lambda_terms=int(n_terms))
            run = dataclasses.replace(experiment, field=field)
            _, done = train_and_evaluate(
                dataset, run, run_dir, name, progress=progress
            )
        results.append(done)
    write_results_csv(out / "lambda_terms.csv", results)
    return results


def run_superres(
    dataset: Dataset,
    experiment: Experiment,
    out_dir: PathLike,
    keeps: Sequence[int],
    *,
    progress: bool = False,
) -> List[SuperresReport]:
    """One run per number of kept wavelengths, each reported over the four
    image x wavelength quadrants."""
    out = Path(out_dir)
    reports = []
    for keep in keeps:
        name = f"keep_{keep}"
        split = dataclasses.replace(
            experiment.split, keep_wavelengths=int(keep), wavelengths=None
        )
        run = dataclasses.replace(experiment, split=split)
        trainer, _ = train_and_evaluate(
            dataset, run, out / name, name, progress=progress
        )
        report = superres_report(
            trainer.field,
            dataset,
            trainer.train_images,
            trainer.eval_images,
            trainer.train_wavelengths,
            trainer.held_wavelengths,
            trainer.sampler,
            progress=progress,
        )
        reports.append(report)
    _write_superres_csv(out / "superres.csv", reports)
    return reports


def _write_superres_csv(path: Path, reports: Sequence[SuperresReport]) -> None:
    header = ["wavelengths"] + [
        f"{q}_{m}" for q in QUADRANTS for m in ("psnr", "ssim")
    ]
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=header)
        writer.writeheader()
        for report in reports:
            writer.writerow(report.row())


def pseudo_rgb_dataset(
    dataset: Dataset, bands: Sequence[float] = DEFAULT_RGB_BANDS
) -> Dataset:
    """Three-channel copy of `dataset` made of the channels nearest to the R,
    G and B bands, stored in ascending wavelength order."""
    order = np.argsort(bands)
    lam = np.asarray(bands, dtype=np.float64)[order]
    cubes = []
    for cube in dataset.cubes:
        rgb = pseudo_rgb_fixed(cube, *bands)
        cubes.append(HyperCube(lam, rgb[..., order]))
    return Dataset(
        list(dataset.cameras),
        cubes,
        dataset.background,
        dataset.root,
        dict(dataset.meta),
    )


def run_rgb_comparison(
    dataset: Dataset,
    experiment: Experiment,
    out_dir: PathLike,
    *,
    progress: bool = False,
) -> List[RunResult]:
    """The continuous spectral field against per-channel RGB heads, both
    trained on the same pseudo-RGB images."""
    rgb = pseudo_rgb_dataset(dataset)
    out = Path(out_dir)
    runs = (("continuous", "C", "sigma0"), ("discrete_rgb", "C1", "sigma1"))
    results = []
    for name, radiance, density in runs:
        run_dir = out / name
        done = _finished(run_dir)
        if done is None:
            field = experiment.field.replace(
                radiance_variant=radiance,
                density_variant=density,
                proposal_variant="P0",
                shared_latent=radiance == "C",
            )
            train = experiment.train.replace(wavelengths_per_step="all")
            split = SplitSpec(
                experiment.split.train_fraction, experiment.split.n_eval
            )
            run = dataclasses.replace(
                experiment, field=field, train=train, split=split
            )
            _, done = train_and_evaluate(
                rgb, run, run_dir, name, progress=progress
            )
        results.append(done)
    write_results_csv(out / "rgb.csv", results)
    return results


def write_results_csv(path: PathLike, results: Sequence[RunResult]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["name", "architecture", "psnr_db", "ssim", "parameters", "steps"]
        )
        for r in results:
            writer.writerow(
                [
                    r.name,
                    r.label,
                    f"{r.psnr:.4f}",
                    f"{r.ssim:.4f}",
                    r.parameters,
                    r.steps,
                ]
            )
