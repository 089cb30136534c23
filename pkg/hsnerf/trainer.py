"""
Training: image and wavelength subsampling, Adam steps, checkpoints, the
loss log and evaluation renders.

Every random draw of step ``s`` comes from a generator seeded with
``(seed, s, purpose)``, so a run resumed from a checkpoint replays the exact
trajectory of an uninterrupted one.
"""

from __future__ import annotations


__all__ = [
    "TrainConfig",
    "SplitSpec",
    "StepLosses",
    "Batch",
    "EvalReport",
    "LOSS_LOG_HEADER",
    "CHECKPOINT_FILE",
    "LOSS_LOG_FILE",
    "split_dataset",
    "split_wavelengths",
    "sample_wavelengths",
    "refresh_image_cache",
    "draw_batch",
    "scene_box_for",
    "train_step",
    "evaluate",
    "Trainer",
]

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import (
    Any,
    Dict,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np
import numpy.typing as npt
from tqdm import tqdm

from hsnerf import autodiff as ad
from hsnerf.backend import set_dtype
from hsnerf.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from hsnerf.compositing import recon_loss
from hsnerf.dataio import Dataset
from hsnerf.errors import ConfigError, DataError, NumericalError
from hsnerf.field import Field, FieldConfig, build_field
from hsnerf.metrics import SpectrumMetrics, spectrum_metrics
from hsnerf.numbers import Array, IntArray, evenly_spaced
from hsnerf.optim import AdamState, adam_step, lr_schedule
from hsnerf.renderer import SamplerConfig, render_image, render_rays
from hsnerf.sampling import RayBatch, SceneBox, compute_scene_box, generate_rays


logger = logging.getLogger(__name__)

LOSS_LOG_HEADER = ("step", "lr", "recon", "interlevel", "total", "seconds")
CHECKPOINT_FILE = "checkpoint.hfck"
LOSS_LOG_FILE = "losses.csv"

# purposes of the per-step generators
_BATCH, _JITTER, _LAMBDA, _CACHE, _SPLIT = range(5)

Count = Union[int, str]


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([seed, *key])


def _count(value: Count, total: int, what: str) -> int:
    if value == "all":
        return total
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ConfigError(f"{what} must be a positive integer or 'all'")
    if value > total:
        raise ConfigError(f"{what}={value} exceeds the available {total}")
    return value


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 25000
    rays_per_step: int = 4096
    wavelengths_per_step: Count = "all"
    cache_images: Count = "all"
    cache_refresh_steps: int = 50
    base_lr: float = 1e-2
    final_lr: float = 1e-4
    decay_steps: int = 20000
    seed: int = 0
    recon_weight: float = 1.0
    interlevel_weight: float = 1.0
    checkpoint_every: int = 1000
    log_every: int = 100
    depth_range: Optional[Tuple[float, float]] = None
    dtype: str = "float64"

    def validate(self) -> TrainConfig:
        for key in (
            "total_steps",
            "rays_per_step",
            "cache_refresh_steps",
            "decay_steps",
            "checkpoint_every",
            "log_every",
        ):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be positive")
        for key in ("wavelengths_per_step", "cache_images"):
            value = getattr(self, key)
            if value != "all" and (not isinstance(value, int) or value < 1):
                raise ConfigError(f"{key} must be a positive integer or 'all'")
        if self.base_lr <= 0 or self.final_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.recon_weight < 0 or self.interlevel_weight < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"unsupported dtype {self.dtype!r}")
        return self

    def replace(self, **changes: Any) -> TrainConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        data = dataclasses.asdict(self)
        if self.depth_range is not None:
            data["depth_range"] = list(self.depth_range)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TrainConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        values = dict(data)
        if values.get("depth_range") is not None:
            values["depth_range"] = tuple(values["depth_range"])
        return cls(**values).validate()


@dataclass(frozen=True)
class SplitSpec:
    """Image split and, for super-resolution runs, the training wavelengths.

    `keep_wavelengths` keeps that many evenly spaced channels; `wavelengths`
    lists them explicitly. Neither means all channels train.
    """

    train_fraction: float = 0.9
    n_eval: Optional[int] = None
    keep_wavelengths: Optional[int] = None
    wavelengths: Optional[Tuple[float, ...]] = None

    def validate(self) -> SplitSpec:
        if not 0 < self.train_fraction <= 1:
            raise ConfigError("train_fraction must lie in (0, 1]")
        if self.n_eval is not None and self.n_eval < 1:
            raise ConfigError("n_eval must be positive")
        if self.keep_wavelengths is not None and self.wavelengths is not None:
            raise ConfigError("give keep_wavelengths or wavelengths, not both")
        if self.keep_wavelengths is not None and self.keep_wavelengths < 1:
            raise ConfigError("keep_wavelengths must be positive")
        return self

    def to_dict(self) -> Dict[str, Any]:
        data = dataclasses.asdict(self)
        if self.wavelengths is not None:
            data["wavelengths"] = list(self.wavelengths)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SplitSpec:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown split keys: {sorted(unknown)}")
        values = dict(data)
        if values.get("wavelengths") is not None:
            values["wavelengths"] = tuple(values["wavelengths"])
        return cls(**values).validate()


def split_dataset(
    frames: Union[int, Sequence[Any]], split: SplitSpec, seed: int = 0
) -> Tuple[List[int], List[int]]:
    """Train and eval image indices; eval images are evenly spaced through
    the capture sequence, with a seed-dependent phase."""
    n = frames if isinstance(frames, int) else len(frames)
    if n < 2:
        raise DataError("splitting needs at least two frames")
    split.validate()
    if split.n_eval is not None:
        n_eval = split.n_eval
    else:
        n_eval = n - int(round(split.train_fraction * n))
    n_eval = min(max(n_eval, 1), n - 1)
    phase = float(_rng(seed, _SPLIT).uniform(0.0, 1.0))
    held = set(evenly_spaced(n, n_eval, phase or 0.5).tolist())
    train = [i for i in range(n) if i not in held]
    return train, sorted(held)


def split_wavelengths(
    split: SplitSpec, wavelengths: npt.ArrayLike
) -> Tuple[IntArray, IntArray]:
    """Channel indices used for training and those withheld from it."""
    lam = np.asarray(wavelengths, dtype=np.float64).reshape(-1)
    n = lam.size
    if split.keep_wavelengths is not None:
        if split.keep_wavelengths > n:
            raise ConfigError(
                f"cannot keep {split.keep_wavelengths} of {n} wavelengths"
            )
        train = evenly_spaced(n, split.keep_wavelengths)
    elif split.wavelengths is not None:
        wanted = np.asarray(split.wavelengths, dtype=np.float64)
        train = np.abs(wanted[:, None] - lam[None, :]).argmin(axis=1)
        off = np.abs(lam[train] - wanted) > 1e-3
        if np.any(off):
            raise ConfigError(
                f"no dataset channel at {wanted[off].tolist()} nm"
            )
        train = np.unique(train)
    else:
        train = np.arange(n)
    held = np.setdiff1d(np.arange(n), train)
    return train.astype(np.intp), held.astype(np.intp)


def sample_wavelengths(
    all_lambdas: npt.ArrayLike, k: int, rng: np.random.Generator
) -> Array:
    """`k` distinct wavelengths drawn uniformly without replacement, sorted."""
    lam = np.asarray(all_lambdas, dtype=np.float64).reshape(-1)
    if not 1 <= k <= lam.size:
        raise ValueError(f"cannot sample {k} of {lam.size} wavelengths")
    if k == lam.size:
        return lam.copy()
    return np.sort(lam[rng.choice(lam.size, size=k, replace=False)])


def refresh_image_cache(
    train_frames: Sequence[int],
    cache_images: Count,
    step: int,
    seed: int = 0,
    refresh_steps: int = 50,
) -> List[int]:
    """Images rays may be drawn from at `step`.

    The subset is redrawn at every multiple of `refresh_steps` and depends on
    nothing but the seed and ``step // refresh_steps``.
    """
    frames = list(train_frames)
    k = _count(cache_images, len(frames), "cache_images")
    if k == len(frames):
        return frames
    block = step // refresh_steps
    pick = _rng(seed, block, _CACHE).choice(len(frames), size=k, replace=False)
    return sorted(frames[i] for i in pick)


@dataclass(frozen=True)
class Batch:
    rays: RayBatch
    targets: Array  # (R, L)
    images: IntArray  # (R,)


def draw_batch(
    dataset: Dataset,
    images: Sequence[int],
    n_rays: int,
    channels: npt.ArrayLike,
    rng: np.random.Generator,
) -> Batch:
    """Rays uniform over every pixel of the active images, background
    pixels included."""
    images = list(images)
    idx = np.asarray(channels, dtype=np.intp)
    sizes = np.array([dataset.cameras[i].n_pixels for i in images], float)
    pick = rng.choice(len(images), size=n_rays, p=sizes / sizes.sum())

    origins = np.empty((n_rays, 3))
    directions = np.empty((n_rays, 3))
    pixels = np.empty((n_rays, 2), dtype=np.intp)
    targets = np.empty((n_rays, idx.size))
    for j in np.unique(pick):
        sel = np.flatnonzero(pick == j)
        image = images[j]
        camera = dataset.cameras[image]
        flat = rng.integers(0, camera.n_pixels, size=sel.size)
        pix = np.stack([flat % camera.width, flat // camera.width], axis=-1)
        rays = generate_rays(camera, pix)
        origins[sel] = rays.origins
        directions[sel] = rays.directions
        pixels[sel] = pix
        targets[sel] = dataset.spectra(image, pix, idx)
    ray_batch = RayBatch(origins=origins, directions=directions, pixels=pixels)
    return Batch(ray_batch, targets, np.asarray(images, np.intp)[pick])


def scene_box_for(
    dataset: Dataset,
    images: Optional[Sequence[int]] = None,
    depth_range: Optional[Tuple[float, float]] = None,
) -> SceneBox:
    """The dataset's stored box, else the frusta intersection of `images`."""
    if "scene_box" in dataset.meta:
        return SceneBox.from_dict(dataset.meta["scene_box"])
    if depth_range is None and "depth_range" in dataset.meta:
        depth_range = tuple(dataset.meta["depth_range"])  # type: ignore
    if depth_range is None:
        raise ConfigError(
            "the dataset stores no scene box; set train.depth_range"
        )
    cams = dataset.cameras
    if images is not None:
        cams = [cams[i] for i in images]
    return compute_scene_box(cams, depth_range)


@dataclass(frozen=True)
class StepLosses:
    step: int
    lr: float
    recon: float
    interlevel: float
    total: float
    seconds: float = 0.0

    def row(self) -> List[str]:
        return [
            str(self.step),
            repr(self.lr),
            repr(self.recon),
            repr(self.interlevel),
            repr(self.total),
            f"{self.seconds:.3f}",
        ]


def train_step(
    field: Field,
    batch: Batch,
    lambdas: npt.ArrayLike,
    config: TrainConfig,
    step: int,
    adam: AdamState,
    sampler: SamplerConfig,
    background: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> StepLosses:
    """One forward, backward and Adam update; parameters change in place."""
    lr = lr_schedule(step, config.base_lr, config.final_lr, config.decay_steps)
    rng = rng if rng is not None else _rng(config.seed, step, _JITTER)
    with ad.Tape() as tape:
        out = render_rays(
            field,
            batch.rays,
            lambdas,
            sampler,
            background,
            rng=rng,
            training=True,
        )
        recon = recon_loss(out.pixels, batch.targets)
        total = (
            config.recon_weight * recon
            + config.interlevel_weight * out.interlevel
        )

    values = (recon.item(), out.interlevel.item(), total.item())
    if not np.all(np.isfinite(values)):
        raise NumericalError(
            f"non-finite loss at step {step}: recon={values[0]}, "
            f"interlevel={values[1]}, lr={lr}"
        )

    params = field.parameters()
    grads = ad.backward(tape, total, list(params.values()))
    adam_step(params, {name: grads[p] for name, p in params.items()}, adam, lr)
    for name, p in params.items():
        if not np.all(np.isfinite(p.data)):
            raise NumericalError(
                f"parameter {name!r} non-finite after step {step}"
            )
    return StepLosses(step, lr, *values)


@dataclass(frozen=True)
class EvalReport:
    images: Tuple[int, ...]
    per_image: Tuple[SpectrumMetrics, ...]

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([m.mean_psnr for m in self.per_image]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([m.mean_ssim for m in self.per_image]))

    def per_wavelength(self) -> SpectrumMetrics:
        """Metrics of every wavelength, averaged over the images."""
        return SpectrumMetrics(
            wavelengths=self.per_image[0].wavelengths,
            psnr=np.mean([m.psnr for m in self.per_image], axis=0),
            ssim=np.mean([m.ssim for m in self.per_image], axis=0),
        )


def evaluate(
    field: Field,
    dataset: Dataset,
    images: Sequence[int],
    lambdas: Union[str, npt.ArrayLike] = "all",
    sampler: Optional[SamplerConfig] = None,
    *,
    progress: bool = False,
) -> EvalReport:
    """Render `images` at `lambdas` and score them against the dataset."""
    if not len(images):
        raise DataError("no images to evaluate")
    if isinstance(lambdas, str):
        if lambdas != "all":
            raise ConfigError(f"unknown wavelength selection {lambdas!r}")
        lam = dataset.wavelengths
    else:
        lam = np.asarray(lambdas, dtype=np.float64).reshape(-1)
    results = []
    for i in tqdm(list(images), desc="eval", disable=not progress):
        cube = dataset.cubes[i]
        target = cube.data[..., cube.channel_indices(lam)]
        render = render_image(
            field, dataset.cameras[i], lam, sampler, dataset.background
        )
        results.append(spectrum_metrics(render.cube, target, lam))
    return EvalReport(tuple(int(i) for i in images), tuple(results))


class Trainer:
    """A resumable training run.

    With an output directory the run writes ``config.json`` (by the CLI),
    ``losses.csv`` with every step and ``checkpoint.hfck`` every
    ``checkpoint_every`` steps and at the end.
    """

    def __init__(
        self,
        field: Field,
        dataset: Dataset,
        config: TrainConfig,
        sampler: SamplerConfig,
        *,
        train_images: Sequence[int],
        eval_images: Sequence[int] = (),
        train_channels: Optional[npt.ArrayLike] = None,
        adam: Optional[AdamState] = None,
        step: int = 0,
        out_dir: Optional[Union[str, Path]] = None,
        progress: bool = False,
    ):
        self.field = field
        self.dataset = dataset
        self.config = config.validate()
        self.sampler = sampler.validate()
        self.train_images = [int(i) for i in train_images]
        self.eval_images = [int(i) for i in eval_images]
        if not self.train_images:
            raise DataError("no training images")
        n = dataset.n_channels
        self.train_channels = (
            np.arange(n)
            if train_channels is None
            else np.asarray(train_channels, dtype=np.intp)
        )
        self.held_channels = np.setdiff1d(np.arange(n), self.train_channels)
        self.adam = adam if adam is not None else AdamState(config.base_lr)
        self.step = step
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.progress = progress
        self.history: List[StepLosses] = []

        self._k = _count(
            config.wavelengths_per_step,
            self.train_channels.size,
            "wavelengths_per_step",
        )
        _count(config.cache_images, len(self.train_images), "cache_images")

    @classmethod
    def create(
        cls,
        dataset: Dataset,
        field_config: FieldConfig,
        config: TrainConfig,
        sampler: SamplerConfig,
        split: SplitSpec,
        **kwargs: Any,
    ) -> Trainer:
        """Split the data, bind the channel grid and build the field."""
        config.validate()
        set_dtype(config.dtype)  # type: ignore[arg-type]
        train_images, eval_images = split_dataset(
            len(dataset), split, config.seed
        )
        train_channels, _ = split_wavelengths(split, dataset.wavelengths)
        lam = dataset.wavelengths
        field_config = field_config.with_channels(
            lam[train_channels], (float(lam[0]), float(lam[-1]))
        )
        box = scene_box_for(dataset, train_images, config.depth_range)
        field = build_field(field_config, config.seed, box)
        logger.info(
            "%s: %d train / %d eval images, %d of %d wavelengths, %d params",
            field_config.label,
            len(train_images),
            len(eval_images),
            train_channels.size,
            lam.size,
            field.parameter_count(),
        )
        return cls(
            field,
            dataset,
            config,
            sampler,
            train_images=train_images,
            eval_images=eval_images,
            train_channels=train_channels,
            **kwargs,
        )

    @classmethod
    def resume(
        cls,
        checkpoint: Union[str, Path, Checkpoint],
        dataset: Dataset,
        **kwargs: Any,
    ) -> Trainer:
        ckpt = (
            checkpoint
            if isinstance(checkpoint, Checkpoint)
            else load_checkpoint(checkpoint)
        )
        meta = ckpt.meta
        try:
            config = TrainConfig.from_dict(meta["train"])
            sampler = SamplerConfig.from_dict(meta["sampler"])
            train_images = meta["train_images"]
            eval_images = meta["eval_images"]
            train_channels = meta["train_channels"]
        except KeyError as e:
            raise DataError(f"checkpoint lacks run metadata {e}") from None
        set_dtype(config.dtype)  # type: ignore[arg-type]
        for p in ckpt.field.parameters().values():
            p.data = p.data.astype(config.dtype)
        for moments in (ckpt.adam.first_moment, ckpt.adam.second_moment):
            for name, value in moments.items():
                moments[name] = value.astype(config.dtype)
        return cls(
            ckpt.field,
            dataset,
            config,
            sampler,
            train_images=train_images,
            eval_images=eval_images,
            train_channels=train_channels,
            adam=ckpt.adam,
            step=ckpt.step,
            **kwargs,
        )

    @property
    def train_wavelengths(self) -> Array:
        return self.dataset.wavelengths[self.train_channels]

    @property
    def held_wavelengths(self) -> Array:
        return self.dataset.wavelengths[self.held_channels]

    def meta(self) -> Dict[str, Any]:
        return {
            "train": self.config.to_dict(),
            "sampler": self.sampler.to_dict(),
            "train_images": self.train_images,
            "eval_images": self.eval_images,
            "train_channels": self.train_channels.tolist(),
            "held_channels": self.held_channels.tolist(),
            "background": self.dataset.background,
        }

    def step_once(self) -> StepLosses:
        step = self.step
        seed = self.config.seed
        active = refresh_image_cache(
            self.train_images,
            self.config.cache_images,
            step,
            seed,
            self.config.cache_refresh_steps,
        )
        lambdas = sample_wavelengths(
            self.train_wavelengths, self._k, _rng(seed, step, _LAMBDA)
        )
        channels = self.dataset.cubes[0].channel_indices(lambdas)
        batch = draw_batch(
            self.dataset,
            active,
            self.config.rays_per_step,
            channels,
            _rng(seed, step, _BATCH),
        )
        losses = train_step(
            self.field,
            batch,
            lambdas,
            self.config,
            step,
            self.adam,
            self.sampler,
            self.dataset.background,
            _rng(seed, step, _JITTER),
        )
        self.step = step + 1
        return losses

    def save(self, path: Optional[Union[str, Path]] = None) -> Path:
        if path is None:
            if self.out_dir is None:
                raise ConfigError("no output directory for the checkpoint")
            path = self.out_dir / CHECKPOINT_FILE
        return save_checkpoint(
            path, self.field, self.adam, self.step, self.meta()
        )

    def _open_log(self):
        assert self.out_dir is not None
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / LOSS_LOG_FILE
        kept: List[List[str]] = []
        if path.exists():
            with open(path, newline="") as f:
                rows = list(csv.reader(f))
            # drop rows past the checkpoint a resumed run restarts from
            kept = [r for r in rows[1:] if r and int(r[0]) < self.step]
        f = open(path, "w", newline="")
        writer = csv.writer(f)
        writer.writerow(LOSS_LOG_HEADER)
        writer.writerows(kept)
        return f, writer

    def run(self, until: Optional[int] = None) -> List[StepLosses]:
        """Train up to step `until` (default: ``total_steps``)."""
        end = self.config.total_steps if until is None else until
        log_file = writer = None
        if self.out_dir is not None:
            log_file, writer = self._open_log()
        start = time.perf_counter()
        done: List[StepLosses] = []
        bar = tqdm(
            total=max(end - self.step, 0),
            desc=self.field.config.label,
            disable=not self.progress,
        )
        try:
            while self.step < end:
                losses = self.step_once()
                losses = dataclasses.replace(
                    losses, seconds=time.perf_counter() - start
                )
                done.append(losses)
                if writer is not None:
                    writer.writerow(losses.row())
                if losses.step % self.config.log_every == 0:
                    logger.info(
                        "step %d lr %.3g recon %.6f interlevel %.6f "
                        "total %.6f (%.1fs)",
                        losses.step,
                        losses.lr,
                        losses.recon,
                        losses.interlevel,
                        losses.total,
                        losses.seconds,
                    )
                bar.update(1)
                bar.set_postfix(loss=f"{losses.total:.4g}", refresh=False)
                if self.out_dir is not None and (
                    self.step % self.config.checkpoint_every == 0
                    or self.step == self.config.total_steps
                ):
                    if log_file is not None:
                        log_file.flush()
                    self.save()
        finally:
            bar.close()
            if log_file is not None:
                log_file.close()
        self.history.extend(done)
        return done

    def evaluate(
        self,
        images: Optional[Sequence[int]] = None,
        lambdas: Union[str, npt.ArrayLike] = "all",
    ) -> EvalReport:
        return evaluate(
            self.field,
            self.dataset,
            self.eval_images if images is None else images,
            lambdas,
            self.sampler,
            progress=self.progress,
        )
