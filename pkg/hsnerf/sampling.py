"""
Rays, scene bounds and sample placement along rays.

Camera convention: the camera looks along its local -z axis with +y up, the
convention of the pose files consumed by `hsnerf.dataio`.
"""

from __future__ import annotations


__all__ = [
    "CameraFrame",
    "SceneBox",
    "RayBatch",
    "SampleSet",
    "generate_rays",
    "compute_scene_box",
    "ray_box_clip",
    "stratified_samples",
    "pdf_resample",
    "pixel_grid",
]

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from hsnerf.errors import DataError
from hsnerf.numbers import Array, BoolArray, IntArray, searchsorted_rows


logger = logging.getLogger(__name__)

# smallest resampled bin, as a fraction of the mean bin width
MIN_BIN_FRACTION = 1e-6


@dataclass(frozen=True)
class CameraFrame:
    """Undistorted pinhole camera with a camera-to-world pose."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    camera_to_world: Array
    image_path: Optional[str] = None

    def __post_init__(self) -> None:
        pose = np.asarray(self.camera_to_world, dtype=np.float64)
        if pose.shape == (3, 4):
            pose = np.vstack([pose, [0.0, 0.0, 0.0, 1.0]])
        if pose.shape != (4, 4):
            raise DataError(f"camera_to_world must be 4x4, got {pose.shape}")
        if self.fx <= 0 or self.fy <= 0:
            raise DataError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise DataError("image size must be positive")
        rot = pose[:3, :3]
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-6):
            raise DataError("camera rotation is not orthonormal")
        object.__setattr__(self, "camera_to_world", pose)

    @property
    def rotation(self) -> Array:
        return self.camera_to_world[:3, :3]

    @property
    def origin(self) -> Array:
        return self.camera_to_world[:3, 3]

    @property
    def n_pixels(self) -> int:
        return self.width * self.height

    def corner_directions(self) -> Array:
        """Unnormalized world-space directions through the four image corners,
        scaled to unit depth along the optical axis."""
        u = np.array([0.0, self.width, self.width, 0.0])
        v = np.array([0.0, 0.0, self.height, self.height])
        local = np.stack(
            [(u - self.cx) / self.fx, -(v - self.cy) / self.fy, -np.ones(4)],
            axis=-1,
        )
        return local @ self.rotation.T


@dataclass(frozen=True)
class SceneBox:
    """Axis-aligned ray-sampling bounds."""

    min: Array
    max: Array

    def __post_init__(self) -> None:
        lo = np.asarray(self.min, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max, dtype=np.float64).reshape(3)
        if not np.all(lo < hi):
            raise DataError(f"empty scene box {lo} .. {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def size(self) -> Array:
        return self.max - self.min

    @property
    def center(self) -> Array:
        return (self.min + self.max) / 2

    def normalize(self, points: npt.ArrayLike) -> Array:
        """World points -> unit cube coordinates (clamped)."""
        p = (np.asarray(points, dtype=np.float64) - self.min) / self.size
        return np.clip(p, 0.0, 1.0)

    def contains(self, points: npt.ArrayLike, tol: float = 0.0) -> BoolArray:
        p = np.asarray(points, dtype=np.float64)
        return np.all((p >= self.min - tol) & (p <= self.max + tol), axis=-1)

    def to_dict(self) -> dict:
        return {"min": self.min.tolist(), "max": self.max.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> SceneBox:
        return cls(np.asarray(data["min"]), np.asarray(data["max"]))


@dataclass(frozen=True)
class RayBatch:
    origins: Array
    directions: Array
    pixels: IntArray
    near: Array = field(default_factory=lambda: np.zeros(0))
    far: Array = field(default_factory=lambda: np.zeros(0))
    hit: BoolArray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def __len__(self) -> int:
        return int(self.origins.shape[0])

    def clipped(self, box: SceneBox) -> RayBatch:
        near, far, hit = ray_box_clip(self.origins, self.directions, box)
        return replace(self, near=near, far=far, hit=hit)

    def subset(self, mask: npt.ArrayLike) -> RayBatch:
        m = np.asarray(mask)
        return RayBatch(
            origins=self.origins[m],
            directions=self.directions[m],
            pixels=self.pixels[m],
            near=self.near[m] if self.near.size else self.near,
            far=self.far[m] if self.far.size else self.far,
            hit=self.hit[m] if self.hit.size else self.hit,
        )

    def points(self, t: Array) -> Array:
        """Points at distances t (R, K) -> (R, K, 3)."""
        steps = self.directions[:, None, :] * t[..., None]
        return self.origins[:, None, :] + steps


@dataclass(frozen=True)
class SampleSet:
    """Per-ray bins t_0 < ... < t_K and the distances evaluated in them.

    `samples` equals `midpoints` unless the bins were jittered.
    """

    edges: Array
    samples: Array
    fallback: BoolArray = field(default_factory=lambda: np.zeros(0, bool))

    @property
    def midpoints(self) -> Array:
        return 0.5 * (self.edges[..., 1:] + self.edges[..., :-1])

    @property
    def deltas(self) -> Array:
        return np.diff(self.edges, axis=-1)

    @property
    def n_samples(self) -> int:
        return int(self.edges.shape[-1] - 1)


def pixel_grid(camera: CameraFrame) -> IntArray:
    """All (u, v) pixel indices of `camera`, row-major."""
    v, u = np.mgrid[0 : camera.height, 0 : camera.width]
    return np.stack([u.reshape(-1), v.reshape(-1)], axis=-1)


def generate_rays(
    camera: CameraFrame, pixels: Optional[npt.ArrayLike] = None
) -> RayBatch:
    """Rays through pixel centers; `pixels` holds (u, v) = (column, row)."""
    pix = pixel_grid(camera) if pixels is None else np.asarray(pixels)
    pix = pix.reshape(-1, 2).astype(np.intp)
    u, v = pix[:, 0], pix[:, 1]
    if np.any((u < 0) | (u >= camera.width) | (v < 0) | (v >= camera.height)):
        raise DataError(
            f"pixel outside the {camera.width}x{camera.height} image"
        )

    local = np.stack(
        [
            (u + 0.5 - camera.cx) / camera.fx,
            -(v + 0.5 - camera.cy) / camera.fy,
            -np.ones(u.shape),
        ],
        axis=-1,
    )
    directions = local @ camera.rotation.T
    directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
    origins = np.broadcast_to(camera.origin, directions.shape).copy()
    return RayBatch(origins=origins, directions=directions, pixels=pix)


def _frustum_corners(camera: CameraFrame, depth_range: Tuple[float, float]):
    dirs = camera.corner_directions()
    return np.concatenate(
        [camera.origin + d * dirs for d in depth_range], axis=0
    )


def compute_scene_box(
    cameras: Sequence[CameraFrame],
    depth_range: Tuple[float, float],
    *,
    allow_single: bool = False,
) -> SceneBox:
    """Intersect the cameras' view frusta, projected onto the xz and yz planes.

    Each frustum, truncated to `depth_range` along the optical axis, is
    projected onto both planes; the x and y extents come from the xz and yz
    projections, z from both. The box is the intersection of all projected
    extents. Hence it contains the region covered by all frusta.
    """
    d_min, d_max = depth_range
    if not 0 <= d_min < d_max:
        raise DataError("depth range must satisfy 0 <= d_min < d_max")
    if len(cameras) < (1 if allow_single else 2):
        raise DataError("at least two cameras are needed for scene bounds")

    lo = np.full(3, -np.inf)
    hi = np.full(3, np.inf)
    for camera in cameras:
        corners = _frustum_corners(camera, (d_min, d_max))
        xz, yz = corners[:, [0, 2]], corners[:, [1, 2]]
        lo_xz, hi_xz = xz.min(axis=0), xz.max(axis=0)
        lo_yz, hi_yz = yz.min(axis=0), yz.max(axis=0)
        cam_lo = np.array([lo_xz[0], lo_yz[0], max(lo_xz[1], lo_yz[1])])
        cam_hi = np.array([hi_xz[0], hi_yz[0], min(hi_xz[1], hi_yz[1])])
        lo = np.maximum(lo, cam_lo)
        hi = np.minimum(hi, cam_hi)

    if not np.all(lo < hi):
        raise DataError(
            "camera frusta do not overlap; review the camera poses "
            "(e.g. the pose canonicalization) or widen the depth range"
        )
    return SceneBox(lo, hi)


def ray_box_clip(
    origins: npt.ArrayLike, directions: npt.ArrayLike, box: SceneBox
) -> Tuple[Array, Array, BoolArray]:
    """Slab-method entry/exit distances; near is clamped to 0.

    Returns (near, far, hit); rays with an empty interval have hit=False.
    """
    o = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    d = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t0 = (box.min - o) * inv
        t1 = (box.max - o) * inv
    t_lo = np.minimum(t0, t1)
    t_hi = np.maximum(t0, t1)

    # a ray parallel to a slab hits it iff its origin lies within the slab
    parallel = d == 0
    inside = (o >= box.min) & (o <= box.max)
    t_lo = np.where(parallel, np.where(inside, -np.inf, np.inf), t_lo)
    t_hi = np.where(parallel, np.where(inside, np.inf, -np.inf), t_hi)

    near = np.maximum(np.max(t_lo, axis=-1), 0.0)
    far = np.min(t_hi, axis=-1)
    hit = far > near
    return near, far, hit


def stratified_samples(
    near: npt.ArrayLike,
    far: npt.ArrayLike,
    n_samples: int,
    *,
    jitter: bool = False,
    rng: Optional[np.random.Generator] = None,
    single_jitter: bool = False,
) -> SampleSet:
    """`n_samples` equal bins in [near, far] per ray; with `jitter` one
    uniform draw per bin, bin midpoints otherwise. `single_jitter` shares
    one draw between all bins of a ray."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    lo = np.atleast_1d(np.asarray(near, dtype=np.float64))
    hi = np.atleast_1d(np.asarray(far, dtype=np.float64))
    if np.any(lo >= hi):
        raise ValueError("stratified sampling needs near < far")

    u = np.linspace(0.0, 1.0, n_samples + 1)
    edges = lo[:, None] + (hi - lo)[:, None] * u[None, :]
    if jitter:
        if rng is None:
            raise ValueError("jittered sampling requires an rng")
        if single_jitter:
            offset = np.repeat(rng.uniform(size=(lo.size, 1)), n_samples, 1)
        else:
            offset = rng.uniform(size=(lo.size, n_samples))
    else:
        offset = np.full((lo.size, n_samples), 0.5)
    samples = edges[:, :-1] + np.diff(edges, axis=-1) * offset
    return SampleSet(edges=edges, samples=samples)


def _separate(t: Array, n_samples: int) -> Array:
    """Strictly increasing edges with the same first and last value; edges
    already at least `MIN_BIN_FRACTION` of a bin apart are unchanged."""
    start, end = t[:, :1], t[:, -1:]
    span = end - start
    steps = np.arange(t.shape[-1]) * (MIN_BIN_FRACTION * span / n_samples)
    spread = np.maximum.accumulate(t - steps, axis=-1) + steps
    stretched = spread[:, -1:] - start
    scale = np.divide(
        span, stretched, out=np.ones_like(span), where=stretched > 0
    )
    return start + (spread - start) * scale


def pdf_resample(
    prop_edges: npt.ArrayLike,
    prop_weights: npt.ArrayLike,
    n_samples: int,
    *,
    jitter: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> SampleSet:
    """Inverse-transform sampling of a piecewise-constant ray histogram.

    The CDF is inverted at ``n_samples + 1`` stratified quantiles including
    0 and 1, which land on the start and end of the histogram's support, so
    every bin lies where the histogram is positive. Rays whose weights are
    all zero fall back to uniform bins and are flagged in ``fallback``.
    Tied edges are pushed apart, so bins have positive width whenever the
    support does.
    """
    edges = np.atleast_2d(np.asarray(prop_edges, dtype=np.float64))
    w = np.atleast_2d(np.asarray(prop_weights, dtype=np.float64))
    if edges.shape[:-1] != w.shape[:-1] or edges.shape[-1] != w.shape[-1] + 1:
        raise ValueError(
            f"edges {edges.shape} do not bound weights {w.shape}"
        )
    if np.any(w < 0):
        raise ValueError("histogram weights must be non-negative")
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")

    total = w.sum(axis=-1, keepdims=True)
    fallback = total[:, 0] <= 0
    if np.any(fallback):
        logger.debug(
            "%d rays with empty proposal histograms use uniform bins",
            int(fallback.sum()),
        )
        w = np.where(fallback[:, None], 1.0, w)
        total = w.sum(axis=-1, keepdims=True)

    cdf = np.concatenate(
        [np.zeros((w.shape[0], 1)), np.cumsum(w, axis=-1) / total], axis=-1
    )
    cdf[:, -1] = 1.0

    rows = w.shape[0]
    if jitter:
        if rng is None:
            raise ValueError("jittered sampling requires an rng")
        xi = rng.uniform(size=(rows, n_samples - 1))
    else:
        xi = np.full((rows, n_samples - 1), 0.5)
    interior = (np.arange(1, n_samples)[None, :] - 0.5 + xi) / n_samples
    u = np.concatenate(
        [np.zeros((rows, 1)), interior, np.ones((rows, 1))], axis=-1
    )

    # u > 0 maps into the first bin whose cdf reaches u; u = 0 maps to the
    # start of the first positive bin
    idx = searchsorted_rows(cdf, u, side="left") - 1
    start = searchsorted_rows(cdf, u, side="right") - 1
    idx = np.where(u > 0, idx, start)
    idx = np.clip(idx, 0, w.shape[-1] - 1)

    c0 = np.take_along_axis(cdf, idx, axis=-1)
    c1 = np.take_along_axis(cdf, idx + 1, axis=-1)
    e0 = np.take_along_axis(edges, idx, axis=-1)
    e1 = np.take_along_axis(edges, idx + 1, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(c1 > c0, (u - c0) / (c1 - c0), 0.0)
    t = e0 + np.clip(frac, 0.0, 1.0) * (e1 - e0)
    t = _separate(t, n_samples)

    mids = 0.5 * (t[:, 1:] + t[:, :-1])
    return SampleSet(edges=t, samples=mids, fallback=fallback)
