"""
Analytic sphere scenes with band-limited spectra, rendered by fine ray
marching. They are the ground truth of the end-to-end checks.
"""

from __future__ import annotations


__all__ = [
    "GaussianSpectrum",
    "Sphere",
    "SyntheticScene",
    "RingSpec",
    "look_at",
    "three_sphere_scene",
    "random_scene",
    "render_synthetic_view",
    "generate_synthetic_dataset",
    "write_synthetic_dataset",
    "wavelength_grid",
]

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt
from tqdm import tqdm

from hsnerf import autodiff as ad
from hsnerf.compositing import composite
from hsnerf.dataio import HyperCube, write_dataset
from hsnerf.errors import ConfigError
from hsnerf.numbers import Array, as_wavelengths
from hsnerf.sampling import (
    CameraFrame,
    SceneBox,
    compute_scene_box,
    generate_rays,
    ray_box_clip,
)


logger = logging.getLogger(__name__)

Vec3 = Tuple[float, float, float]


@dataclass(frozen=True)
class GaussianSpectrum:
    """sum_k a_k exp(-(lambda - mu_k)^2 / (2 s_k^2)), clamped to [0, 1]."""

    amplitudes: Tuple[float, ...]
    centers: Tuple[float, ...]
    widths: Tuple[float, ...]

    def __post_init__(self) -> None:
        if not len(self.amplitudes) == len(self.centers) == len(self.widths):
            raise ConfigError("spectrum terms must have equal lengths")
        if any(s <= 0 for s in self.widths):
            raise ConfigError("spectrum widths must be positive")

    def __call__(self, lambdas: npt.ArrayLike) -> Array:
        lam = np.asarray(lambdas, dtype=np.float64)[..., None]
        a = np.asarray(self.amplitudes)
        mu = np.asarray(self.centers)
        s = np.asarray(self.widths)
        value = (a * np.exp(-((lam - mu) ** 2) / (2 * s * s))).sum(axis=-1)
        return np.clip(value, 0.0, 1.0)

    @classmethod
    def flat(cls, value: float) -> GaussianSpectrum:
        return cls((value,), (0.0,), (1e9,))

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> GaussianSpectrum:
        return cls(
            tuple(data["amplitudes"]),
            tuple(data["centers"]),
            tuple(data["widths"]),
        )


@dataclass(frozen=True)
class Sphere:
    """A soft-edged sphere; `density` scales `peak_density` per wavelength."""

    center: Vec3
    radius: float
    radiance: GaussianSpectrum
    density: GaussianSpectrum = GaussianSpectrum.flat(1.0)
    peak_density: float = 200.0
    softness: float = 0.01

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ConfigError("sphere radius must be positive")
        if self.peak_density < 0 or self.softness <= 0:
            raise ConfigError("sphere density and softness must be positive")

    def occupancy(self, points: Array) -> Array:
        """(...) in [0, 1]: 1 inside, 0 outside, a sigmoid shell between."""
        r = np.linalg.norm(points - np.asarray(self.center), axis=-1)
        return 0.5 * (1.0 + np.tanh(0.5 * (self.radius - r) / self.softness))

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Sphere:
        return cls(
            center=tuple(data["center"]),  # type: ignore
            radius=float(data["radius"]),
            radiance=GaussianSpectrum.from_dict(data["radiance"]),
            density=GaussianSpectrum.from_dict(data["density"]),
            peak_density=float(data["peak_density"]),
            softness=float(data["softness"]),
        )


@dataclass(frozen=True)
class SyntheticScene:
    spheres: Tuple[Sphere, ...] = ()
    background: float = 0.0

    def density(self, points: Array, lambdas: Array) -> Array:
        """Summed sphere densities (..., L)."""
        out = np.zeros(points.shape[:-1] + (lambdas.size,))
        for s in self.spheres:
            sigma = s.peak_density * s.density(lambdas)
            out += s.occupancy(points)[..., None] * sigma
        return out

    def radiance(self, points: Array, lambdas: Array) -> Array:
        """Density-weighted mix of the sphere radiances (..., L)."""
        num = np.zeros(points.shape[:-1] + (lambdas.size,))
        den = np.zeros_like(num)
        for s in self.spheres:
            sigma = s.occupancy(points)[..., None] * (
                s.peak_density * s.density(lambdas)
            )
            num += sigma * s.radiance(lambdas)
            den += sigma
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(den > 0, num / np.maximum(den, 1e-300), 0.0)

    def bounds(self, margin: float = 0.05) -> Optional[SceneBox]:
        if not self.spheres:
            return None
        centers = np.array([s.center for s in self.spheres], dtype=np.float64)
        radii = np.array([s.radius for s in self.spheres])[:, None]
        pad = radii + margin + 10 * np.array(
            [s.softness for s in self.spheres]
        )[:, None]
        lo = (centers - pad).min(axis=0)
        return SceneBox(lo, (centers + pad).max(axis=0))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SyntheticScene:
        return cls(
            spheres=tuple(Sphere.from_dict(s) for s in data.get("spheres", ())),
            background=float(data.get("background", 0.0)),
        )


def look_at(
    origin: npt.ArrayLike,
    target: npt.ArrayLike = (0.0, 0.0, 0.0),
    up: npt.ArrayLike = (0.0, 0.0, 1.0),
) -> Array:
    """Camera-to-world pose looking from `origin` at `target` (-z forward)."""
    o = np.asarray(origin, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - o
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    norm = np.linalg.norm(right)
    if norm < 1e-9:
        raise ConfigError("view direction is parallel to the up vector")
    right /= norm
    cam_up = np.cross(right, forward)
    pose = np.eye(4)
    pose[:3, 0] = right
    pose[:3, 1] = cam_up
    pose[:3, 2] = -forward
    pose[:3, 3] = o
    return pose


@dataclass(frozen=True)
class RingSpec:
    """Cameras evenly spaced on a horizontal circle, facing its center."""

    n_cameras: int = 20
    radius: float = 3.0
    elevation: float = 0.8
    image_width: int = 48
    image_height: int = 48
    fov_degrees: float = 40.0
    height_jitter: float = 0.0

    def __post_init__(self) -> None:
        if self.n_cameras < 1 or self.image_width < 1 or self.image_height < 1:
            raise ConfigError("ring needs cameras and a positive image size")
        if not 0 < self.fov_degrees < 180:
            raise ConfigError("field of view must lie in (0, 180) degrees")

    @property
    def depth_range(self) -> Tuple[float, float]:
        distance = float(np.hypot(self.radius, self.elevation))
        return 0.5 * distance, 1.5 * distance

    def cameras(
        self, rng: Optional[np.random.Generator] = None
    ) -> List[CameraFrame]:
        half_fov = np.radians(self.fov_degrees) / 2
        focal = 0.5 * self.image_width / np.tan(half_fov)
        heights = np.full(self.n_cameras, self.elevation)
        if self.height_jitter > 0:
            if rng is None:
                raise ConfigError("height jitter requires an rng")
            heights += rng.normal(0.0, self.height_jitter, self.n_cameras)
        out = []
        for i, z in enumerate(heights):
            angle = 2 * np.pi * i / self.n_cameras
            r = self.radius
            origin = (r * np.cos(angle), r * np.sin(angle), z)
            out.append(
                CameraFrame(
                    fx=focal,
                    fy=focal,
                    cx=self.image_width / 2,
                    cy=self.image_height / 2,
                    width=self.image_width,
                    height=self.image_height,
                    camera_to_world=look_at(origin),
                )
            )
        return out


def three_sphere_scene(
    wavelength_range: Tuple[float, float] = (400.0, 1000.0),
    background: float = 0.0,
) -> SyntheticScene:
    lo, hi = wavelength_range
    span = hi - lo
    return SyntheticScene(
        spheres=(
            Sphere(
                center=(0.0, 0.0, 0.0),
                radius=0.45,
                radiance=GaussianSpectrum(
                    (0.8, 0.3),
                    (lo + 0.25 * span, lo + 0.8 * span),
                    (0.12 * span, 0.1 * span),
                ),
            ),
            Sphere(
                center=(0.55, 0.35, 0.15),
                radius=0.25,
                radiance=GaussianSpectrum(
                    (0.9,), (lo + 0.6 * span,), (0.15 * span,)
                ),
                density=GaussianSpectrum(
                    (0.6, 0.6),
                    (lo + 0.3 * span, lo + 0.9 * span),
                    (0.3 * span, 0.3 * span),
                ),
            ),
            Sphere(
                center=(-0.4, -0.5, -0.1),
                radius=0.3,
                radiance=GaussianSpectrum(
                    (0.5, 0.5), (lo, hi), (0.2 * span, 0.25 * span)
                ),
            ),
        ),
        background=background,
    )


def random_scene(
    rng: np.random.Generator,
    n_spheres: int = 3,
    wavelength_range: Tuple[float, float] = (400.0, 1000.0),
    extent: float = 0.6,
    background: float = 0.0,
) -> SyntheticScene:
    lo, hi = wavelength_range
    span = hi - lo
    spheres = []
    for _ in range(n_spheres):
        k = int(rng.integers(1, 3))
        spheres.append(
            Sphere(
                center=tuple(rng.uniform(-extent, extent, 3)),  # type: ignore
                radius=float(rng.uniform(0.15, 0.4)),
                radiance=GaussianSpectrum(
                    tuple(rng.uniform(0.3, 0.9, k)),
                    tuple(rng.uniform(lo, hi, k)),
                    tuple(rng.uniform(0.08, 0.3, k) * span),
                ),
            )
        )
    return SyntheticScene(tuple(spheres), background)


def render_synthetic_view(
    scene: SyntheticScene,
    camera: CameraFrame,
    wavelengths: npt.ArrayLike,
    n_steps: int = 512,
    chunk_rays: int = 256,
) -> Array:
    """March `n_steps` midpoints per ray through the scene bounds and
    composite them exactly; rays missing the bounds see the background."""
    lam = as_wavelengths(wavelengths)
    rays = generate_rays(camera)
    image = np.full((len(rays), lam.size), scene.background, dtype=np.float64)
    box = scene.bounds()
    if box is None:
        return image.reshape(camera.height, camera.width, lam.size)

    near, far, hit = ray_box_clip(rays.origins, rays.directions, box)
    idx = np.flatnonzero(hit)
    u = (np.arange(n_steps) + 0.5) / n_steps
    with ad.no_grad():
        for start in range(0, idx.size, chunk_rays):
            sel = idx[start : start + chunk_rays]
            span = (far[sel] - near[sel])[:, None]
            t = near[sel][:, None] + span * u
            points = (
                rays.origins[sel, None, :]
                + rays.directions[sel, None, :] * t[..., None]
            )
            deltas = np.broadcast_to(span / n_steps, t.shape)
            out = composite(
                scene.density(points, lam),
                scene.radiance(points, lam),
                deltas,
                np.full(lam.size, scene.background),
            )
            image[sel] = out.pixel_spectrum.data
    shape = (camera.height, camera.width, lam.size)
    return np.clip(image, 0.0, 1.0).reshape(shape)


def generate_synthetic_dataset(
    scene: SyntheticScene,
    ring: RingSpec,
    wavelengths: npt.ArrayLike,
    rng: Optional[np.random.Generator] = None,
    *,
    n_steps: int = 512,
    progress: bool = False,
) -> Tuple[List[CameraFrame], List[HyperCube]]:
    """Render every ring camera; deterministic given the scene and ring."""
    lam = as_wavelengths(wavelengths)
    cameras = ring.cameras(rng)
    cubes = []
    for camera in tqdm(cameras, desc="synth", disable=not progress):
        cube = render_synthetic_view(scene, camera, lam, n_steps)
        cubes.append(HyperCube(lam, cube))
    return cameras, cubes


def write_synthetic_dataset(
    directory: Union[str, Path],
    scene: SyntheticScene,
    ring: RingSpec,
    wavelengths: npt.ArrayLike,
    rng: Optional[np.random.Generator] = None,
    *,
    n_steps: int = 512,
    progress: bool = False,
    extra: Optional[Mapping[str, Any]] = None,
) -> Path:
    cameras, cubes = generate_synthetic_dataset(
        scene, ring, wavelengths, rng, n_steps=n_steps, progress=progress
    )
    depth = ring.depth_range
    meta: Dict[str, Any] = {
        "depth_range": list(depth),
        "scene": scene.to_dict(),
        "ring": asdict(ring),
        **dict(extra or {}),
    }
    if len(cameras) >= 2:
        meta["scene_box"] = compute_scene_box(cameras, depth).to_dict()
    root = write_dataset(directory, cameras, cubes, scene.background, meta)
    logger.info("wrote %d synthetic views to %s", len(cubes), root)
    return root


def wavelength_grid(
    n: int, wavelength_range: Tuple[float, float] = (400.0, 1000.0)
) -> Array:
    """`n` evenly spaced wavelengths across the range (nm)."""
    lo, hi = wavelength_range
    if n < 1 or not lo < hi:
        raise ConfigError("need n >= 1 and an ascending range")
    return np.linspace(lo, hi, n) if n > 1 else np.array([(lo + hi) / 2])
