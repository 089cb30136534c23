"""
Ray rendering: proposal stages, fine samples and per-wavelength compositing.
"""

from __future__ import annotations


__all__ = [
    "SamplerConfig",
    "RayRender",
    "ImageRender",
    "render_rays",
    "render_image",
]

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt
from tqdm import tqdm

from hsnerf import autodiff as ad
from hsnerf.autodiff import Tensor
from hsnerf.backend import get_threads
from hsnerf.compositing import (
    composite,
    composite_weights,
    interlevel_loss,
    wavelength_penalty_check,
)
from hsnerf.errors import ConfigError
from hsnerf.field import Field
from hsnerf.numbers import Array, IntArray, as_wavelengths
from hsnerf.sampling import (
    CameraFrame,
    RayBatch,
    SampleSet,
    generate_rays,
    pdf_resample,
    stratified_samples,
)


logger = logging.getLogger(__name__)

Background = Union[float, npt.ArrayLike]


@dataclass(frozen=True)
class SamplerConfig:
    proposal_samples: Tuple[int, ...] = (96, 48)
    fine_samples: int = 32
    chunk_rays: int = 1024
    single_jitter: bool = False

    def validate(self) -> SamplerConfig:
        if not self.proposal_samples:
            raise ConfigError("at least one proposal stage is required")
        if min(self.proposal_samples) < 1 or self.fine_samples < 1:
            raise ConfigError("sample counts must be positive")
        if self.chunk_rays < 1:
            raise ConfigError("chunk_rays must be positive")
        return self

    def to_dict(self) -> Dict[str, object]:
        data = dataclasses.asdict(self)
        data["proposal_samples"] = list(self.proposal_samples)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> SamplerConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown sampler keys: {sorted(unknown)}")
        values = dict(data)
        if "proposal_samples" in values:
            counts = values["proposal_samples"]
            values["proposal_samples"] = tuple(counts)  # type: ignore
        return cls(**values).validate()  # type: ignore


@dataclass(frozen=True)
class RayRender:
    pixels: Tensor  # (R, L)
    interlevel: Tensor  # scalar, summed over proposal stages
    accumulation: Array  # (R, L)
    depth: Array  # (R, L)
    interlevel_per_lambda: Optional[Array] = None  # (L,), shared proposals
    fallback_rays: int = 0


@dataclass(frozen=True)
class ImageRender:
    cube: Array  # (H, W, L)
    accumulation: Array  # (H, W, L)
    depth: Array  # (H, W, L)
    wavelengths: Array


def _background(background: Background, count: int) -> Array:
    bg = np.asarray(background, dtype=np.float64).reshape(-1)
    if bg.size == 1:
        return np.full(count, float(bg[0]))
    if bg.size != count:
        raise ValueError(f"{bg.size} background values for {count} wavelengths")
    return bg


def _proposal_stages(
    field: Field,
    rays: RayBatch,
    sampler: SamplerConfig,
    lam: Optional[float],
    live: Array,
    jitter: bool,
    rng: Optional[np.random.Generator],
) -> Tuple[List[Tuple[SampleSet, Tensor]], SampleSet]:
    """Run every proposal stage; return the (bins, weights) histograms and
    the fine sample set drawn from the last one."""
    stages: List[Tuple[SampleSet, Tensor]] = []
    counts = list(sampler.proposal_samples)
    if len(counts) != len(field.proposals):
        raise ConfigError(
            f"{len(counts)} proposal sample counts for "
            f"{len(field.proposals)} proposal networks"
        )
    bins = stratified_samples(
        rays.near,
        rays.far,
        counts[0],
        jitter=jitter,
        rng=rng,
        single_jitter=sampler.single_jitter,
    )
    fallback = 0
    for stage in range(len(counts)):
        points = rays.points(bins.samples)
        density = field.proposal(stage, points.reshape(-1, 3), lam)
        density = ad.reshape(density, bins.samples.shape)
        weights = composite_weights(density, bins.deltas * live)
        stages.append((bins, weights))
        last = stage + 1 == len(counts)
        n_next = sampler.fine_samples if last else counts[stage + 1]
        bins = pdf_resample(
            bins.edges, weights.data, n_next, jitter=jitter, rng=rng
        )
        fallback = int(bins.fallback.sum())
    if fallback:
        logger.debug("%d rays fell back to uniform fine samples", fallback)
    return stages, bins


def _fine_pass(
    field: Field,
    rays: RayBatch,
    bins: SampleSet,
    lam: Array,
    background: Array,
    live: Array,
):
    n_rays, k = bins.samples.shape
    points = rays.points(bins.samples).reshape(-1, 3)
    dirs = np.repeat(rays.directions[:, None, :], k, axis=1).reshape(-1, 3)
    sample = field.query(points, dirs, lam)
    assert sample.radiance is not None
    shape = (n_rays, k, lam.size)
    return composite(
        ad.reshape(sample.density, shape),
        ad.reshape(sample.radiance, shape),
        bins.deltas * live,
        background,
        distances=bins.samples,
    )


def render_rays(
    field: Field,
    rays: RayBatch,
    lambdas: npt.ArrayLike,
    sampler: SamplerConfig,
    background: Background = 0.0,
    *,
    rng: Optional[np.random.Generator] = None,
    training: bool = False,
) -> RayRender:
    """Render `rays` at every wavelength in `lambdas`.

    Rays are clipped to the field's scene box; misses get zero-length bins
    and therefore composite to the background. In training mode the stratified
    and resampled bins are jittered with `rng`.
    """
    lam = as_wavelengths(lambdas)
    bg = _background(background, lam.size)
    if training and rng is None:
        raise ValueError("training renders need an rng for jitter")
    if not rays.near.size:
        rays = rays.clipped(field.box)
    hit = rays.hit
    if not np.all(hit):
        logger.debug(
            "%d of %d rays miss the scene box", (~hit).sum(), len(rays)
        )
        rays = dataclasses.replace(
            rays,
            near=np.where(hit, rays.near, 0.0),
            far=np.where(hit, rays.far, 1.0),
        )
    live = hit.astype(np.float64)[:, None]

    if field.config.proposal_variant == "P0":
        stages, bins = _proposal_stages(
            field, rays, sampler, None, live, training, rng
        )
        out = _fine_pass(field, rays, bins, lam, bg, live)
        per_lambda = np.zeros(lam.size)
        total: Optional[Tensor] = None
        for prop_bins, prop_weights in stages:
            values, mean = wavelength_penalty_check(
                bins.edges, out.weights, prop_bins.edges, prop_weights
            )
            per_lambda += values
            total = mean if total is None else total + mean
        assert total is not None and out.depth is not None
        return RayRender(
            pixels=out.pixel_spectrum,
            interlevel=total,
            accumulation=out.accumulation.data,
            depth=out.depth.data,
            interlevel_per_lambda=per_lambda,
            fallback_rays=int(bins.fallback.sum()),
        )

    # wavelength-dependent proposals: one sample set per wavelength
    pixels: List[Tensor] = []
    accumulation: List[Array] = []
    depth: List[Array] = []
    total = None
    fallback = 0
    for j, value in enumerate(lam):
        stages, bins = _proposal_stages(
            field, rays, sampler, float(value), live, training, rng
        )
        out = _fine_pass(field, rays, bins, lam[j : j + 1], bg[j : j + 1], live)
        fine_w = ad.reshape(out.weights, bins.samples.shape)
        for prop_bins, prop_weights in stages:
            term = interlevel_loss(
                bins.edges, fine_w, prop_bins.edges, prop_weights
            )
            total = term if total is None else total + term
        assert out.depth is not None
        pixels.append(out.pixel_spectrum)
        accumulation.append(out.accumulation.data)
        depth.append(out.depth.data)
        fallback += int(bins.fallback.sum())
    assert total is not None
    return RayRender(
        pixels=ad.concat(pixels, axis=-1),
        interlevel=total / float(lam.size),
        accumulation=np.concatenate(accumulation, axis=-1),
        depth=np.concatenate(depth, axis=-1),
        fallback_rays=fallback,
    )


def render_image(
    field: Field,
    camera: CameraFrame,
    lambdas: npt.ArrayLike,
    sampler: Optional[SamplerConfig] = None,
    background: Background = 0.0,
    *,
    progress: bool = False,
    workers: Optional[int] = None,
) -> ImageRender:
    """Render a whole camera in chunks of ``sampler.chunk_rays`` rays,
    spread over `workers` threads (default `get_threads()`)."""
    sampler = sampler or SamplerConfig()
    lam = as_wavelengths(lambdas)
    rays = generate_rays(camera).clipped(field.box)
    n = len(rays)
    cube = np.empty((n, lam.size))
    acc = np.empty((n, lam.size))
    depth = np.empty((n, lam.size))
    chunks = [
        np.arange(start, min(start + sampler.chunk_rays, n))
        for start in range(0, n, sampler.chunk_rays)
    ]

    def work(chunk: IntArray) -> RayRender:
        # the tape stack is thread-local
        with ad.no_grad():
            return render_rays(
                field, rays.subset(chunk), lam, sampler, background
            )

    bar = tqdm(total=len(chunks), desc="render", disable=not progress)
    with ThreadPoolExecutor(max_workers=workers or get_threads()) as pool:
        for chunk, out in zip(chunks, pool.map(work, chunks)):
            cube[chunk] = out.pixels.data
            acc[chunk] = out.accumulation
            depth[chunk] = out.depth
            bar.update(1)
    bar.close()
    shape = (camera.height, camera.width, lam.size)
    return ImageRender(
        cube=cube.reshape(shape),
        accumulation=acc.reshape(shape),
        depth=depth.reshape(shape),
        wavelengths=lam,
    )
