"""
Spectral applications: pseudo-RGB extraction, sensor response fitting and
simulation, and wavelength-withholding super-resolution reports.
"""

from __future__ import annotations


__all__ = [
    "SpectralResponse",
    "QuadrantMetrics",
    "SuperresReport",
    "DEFAULT_RGB_BANDS",
    "QUADRANTS",
    "pseudo_rgb_fixed",
    "selector_response",
    "fit_linear_map",
    "fit_residual",
    "simulate_sensor",
    "superres_split",
    "superres_report",
    "read_response_csv",
    "write_response_csv",
    "read_rgb",
    "write_rgb",
]

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt
from PIL import Image

from hsnerf.dataio import Dataset, HyperCube
from hsnerf.errors import DataError, UnsupportedWavelengthError
from hsnerf.field import Field
from hsnerf.numbers import Array, as_wavelengths, evenly_spaced
from hsnerf.renderer import SamplerConfig
from hsnerf.trainer import EvalReport, evaluate


logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

DEFAULT_RGB_BANDS = (622.0, 555.0, 503.0)
DEFAULT_RIDGE = 1e-8

QUADRANTS = ("train_set", "unseen_images", "unseen_wavelengths", "both_unseen")


@dataclass(frozen=True)
class SpectralResponse:
    """R, G and B sensitivities per wavelength channel, stored 3 x N."""

    wavelengths: Array
    matrix: Array

    def __post_init__(self) -> None:
        lam = as_wavelengths(self.wavelengths)
        mat = np.asarray(self.matrix, dtype=np.float64)
        if mat.shape != (3, lam.size):
            raise DataError(
                f"a response over {lam.size} wavelengths must be 3 x "
                f"{lam.size}, got {mat.shape}"
            )
        if not np.all(np.isfinite(mat)):
            raise DataError("spectral response must be finite")
        object.__setattr__(self, "wavelengths", lam)
        object.__setattr__(self, "matrix", mat)

    @property
    def n_channels(self) -> int:
        return int(self.wavelengths.size)

    @property
    def r_bar(self) -> Array:
        return self.matrix[0]

    @property
    def g_bar(self) -> Array:
        return self.matrix[1]

    @property
    def b_bar(self) -> Array:
        return self.matrix[2]

    def __add__(self, other: SpectralResponse) -> SpectralResponse:
        if not np.array_equal(self.wavelengths, other.wavelengths):
            raise DataError("responses over different wavelengths")
        return SpectralResponse(self.wavelengths, self.matrix + other.matrix)

    def __mul__(self, factor: float) -> SpectralResponse:
        return SpectralResponse(self.wavelengths, self.matrix * factor)

    __rmul__ = __mul__


def _nearest(cube: HyperCube, band: float) -> int:
    lo, hi = float(cube.wavelengths[0]), float(cube.wavelengths[-1])
    spacing = (hi - lo) / max(cube.n_channels - 1, 1)
    if not lo - spacing <= band <= hi + spacing:
        raise DataError(
            f"band {band} nm lies outside the cube's {lo}-{hi} nm range"
        )
    return cube.nearest_channel(band)


def pseudo_rgb_fixed(
    cube: HyperCube,
    r_nm: float = DEFAULT_RGB_BANDS[0],
    g_nm: float = DEFAULT_RGB_BANDS[1],
    b_nm: float = DEFAULT_RGB_BANDS[2],
) -> Array:
    """H x W x 3 copy of the channels nearest to the three bands."""
    idx = [_nearest(cube, band) for band in (r_nm, g_nm, b_nm)]
    return cube.data[..., idx].astype(np.float64)


def selector_response(
    wavelengths: npt.ArrayLike,
    bands: Sequence[float] = DEFAULT_RGB_BANDS,
) -> SpectralResponse:
    """The response that copies the channels nearest to `bands`."""
    lam = as_wavelengths(wavelengths)
    mat = np.zeros((3, lam.size))
    for row, band in enumerate(bands):
        mat[row, int(np.argmin(np.abs(lam - band)))] = 1.0
    return SpectralResponse(lam, mat)


def _pixels(
    image: Union[HyperCube, npt.ArrayLike], depth: int, what: str
) -> Array:
    data = image.data if isinstance(image, HyperCube) else image
    arr = np.asarray(data, dtype=np.float64)
    if arr.shape[-1] != depth:
        raise DataError(
            f"{what} has {arr.shape[-1]} channels, expected {depth}"
        )
    return arr.reshape(-1, depth)


def fit_linear_map(
    hs_samples: Union[HyperCube, npt.ArrayLike],
    rgb_samples: npt.ArrayLike,
    *,
    ridge: float = DEFAULT_RIDGE,
    mask: Optional[npt.ArrayLike] = None,
    wavelengths: Optional[npt.ArrayLike] = None,
) -> SpectralResponse:
    """Least-squares ``A`` minimizing ``sum ||rgb - A hs||^2``.

    Solves the normal equations ``(X'X + ridge I) A' = X'Y``; the ridge keeps
    rank-deficient designs solvable. Samples are rows (n x N and n x 3) or
    the pixels of an aligned cube / RGB image pair; `mask` selects the pixels
    included in the fit (all by default).
    """
    if isinstance(hs_samples, HyperCube) and wavelengths is None:
        wavelengths = hs_samples.wavelengths
    hs = np.asarray(
        hs_samples.data if isinstance(hs_samples, HyperCube) else hs_samples,
        dtype=np.float64,
    )
    n_channels = hs.shape[-1]
    x = hs.reshape(-1, n_channels)
    y = _pixels(rgb_samples, 3, "rgb image")
    if x.shape[0] != y.shape[0]:
        raise DataError(
            f"{x.shape[0]} spectral samples for {y.shape[0]} rgb samples"
        )
    if mask is not None:
        keep = np.asarray(mask, dtype=bool).reshape(-1)
        if keep.size != x.shape[0]:
            raise DataError(
                f"mask of {keep.size} entries for {x.shape[0]} pixels"
            )
        x, y = x[keep], y[keep]
    if x.shape[0] == 0:
        raise DataError("fitting a response needs at least one sample")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")

    gram = x.T @ x + ridge * np.eye(n_channels)
    a_t = np.linalg.solve(gram, x.T @ y)
    lam = (
        np.arange(n_channels, dtype=np.float64)
        if wavelengths is None
        else wavelengths
    )
    return SpectralResponse(lam, a_t.T)


def simulate_sensor(
    cube: Union[HyperCube, npt.ArrayLike],
    response: SpectralResponse,
    *,
    clamp: bool = True,
) -> Array:
    """Per-pixel ``A hs``, clamped to [0, 1] unless `clamp` is off."""
    data = np.asarray(
        cube.data if isinstance(cube, HyperCube) else cube, dtype=np.float64
    )
    if data.shape[-1] != response.n_channels:
        raise DataError(
            f"cube has {data.shape[-1]} channels, response "
            f"{response.n_channels}"
        )
    if isinstance(cube, HyperCube) and not np.allclose(
        cube.wavelengths, response.wavelengths, atol=1e-3
    ):
        raise DataError("response and cube have different wavelength grids")
    rgb = data @ response.matrix.T
    return np.clip(rgb, 0.0, 1.0) if clamp else rgb


def fit_residual(
    hs_samples: Union[HyperCube, npt.ArrayLike],
    rgb_samples: npt.ArrayLike,
    response: SpectralResponse,
) -> float:
    """Root-mean-square error of the unclamped fit over all samples."""
    data = (
        hs_samples.data if isinstance(hs_samples, HyperCube) else hs_samples
    )
    x = _pixels(data, response.n_channels, "spectral samples")
    y = _pixels(rgb_samples, 3, "rgb image")
    return float(np.sqrt(np.mean((x @ response.matrix.T - y) ** 2)))


def superres_split(
    wavelengths: npt.ArrayLike, keep: int
) -> Tuple[Array, Array]:
    """Evenly spaced training wavelengths ``round(i N / keep)`` and the
    held-out complement."""
    lam = np.asarray(wavelengths, dtype=np.float64).reshape(-1)
    if not 1 <= keep <= lam.size:
        raise ValueError(f"cannot keep {keep} of {lam.size} wavelengths")
    idx = evenly_spaced(lam.size, keep)
    held = np.setdiff1d(np.arange(lam.size), idx)
    return lam[idx], lam[held]


@dataclass(frozen=True)
class QuadrantMetrics:
    psnr: float
    ssim: float

    @classmethod
    def from_report(cls, report: EvalReport) -> QuadrantMetrics:
        return cls(report.mean_psnr, report.mean_ssim)


@dataclass(frozen=True)
class SuperresReport:
    """Mean PSNR and SSIM of the four image x wavelength quadrants; a
    quadrant with nothing held out is ``None``."""

    n_train_wavelengths: int
    quadrants: Dict[str, Optional[QuadrantMetrics]]

    def row(self) -> Dict[str, str]:
        out = {"wavelengths": str(self.n_train_wavelengths)}
        for name in QUADRANTS:
            q = self.quadrants[name]
            out[f"{name}_psnr"] = "N/A" if q is None else f"{q.psnr:.3f}"
            out[f"{name}_ssim"] = "N/A" if q is None else f"{q.ssim:.4f}"
        return out


def superres_report(
    field: Field,
    dataset: Dataset,
    train_images: Sequence[int],
    eval_images: Sequence[int],
    train_wavelengths: npt.ArrayLike,
    held_wavelengths: npt.ArrayLike,
    sampler: Optional[SamplerConfig] = None,
    *,
    progress: bool = False,
) -> SuperresReport:
    """Evaluate seen/unseen images against seen/unseen wavelengths."""
    seen = np.asarray(train_wavelengths, dtype=np.float64).reshape(-1)
    unseen = np.asarray(held_wavelengths, dtype=np.float64).reshape(-1)
    if unseen.size and field.config.is_discrete:
        raise UnsupportedWavelengthError(
            f"{field.config.label} has one output per training channel and "
            "cannot interpolate held-out wavelengths"
        )
    cells: Dict[str, Optional[QuadrantMetrics]] = {}
    for name, images, lam in (
        ("train_set", train_images, seen),
        ("unseen_images", eval_images, seen),
        ("unseen_wavelengths", train_images, unseen),
        ("both_unseen", eval_images, unseen),
    ):
        if not lam.size or not len(images):
            cells[name] = None
            continue
        report = evaluate(
            field, dataset, images, lam, sampler, progress=progress
        )
        cells[name] = QuadrantMetrics.from_report(report)
        logger.info(
            "%s: PSNR %.2f dB, SSIM %.4f",
            name,
            cells[name].psnr,  # type: ignore[union-attr]
            cells[name].ssim,  # type: ignore[union-attr]
        )
    return SuperresReport(int(seen.size), cells)


def write_response_csv(response: SpectralResponse, path: PathLike) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["wavelength_nm", "r", "g", "b"])
        for lam, (r, g, b) in zip(response.wavelengths, response.matrix.T):
            writer.writerow([repr(float(v)) for v in (lam, r, g, b)])


def read_response_csv(path: PathLike) -> SpectralResponse:
    try:
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
    except OSError as e:
        raise DataError(f"cannot read response {path}: {e}") from e
    header = ["wavelength_nm", "r", "g", "b"]
    if not rows or [c.strip() for c in rows[0]] != header:
        raise DataError(f"{path}: expected header wavelength_nm,r,g,b")
    try:
        values = np.array([[float(c) for c in row] for row in rows[1:] if row])
    except ValueError as e:
        raise DataError(f"{path}: {e}") from e
    if values.ndim != 2 or values.shape[1] != 4:
        raise DataError(f"{path}: expected four columns per row")
    return SpectralResponse(values[:, 0], values[:, 1:].T)


def write_rgb(image: npt.ArrayLike, path: PathLike) -> None:
    """Save an H x W x 3 image in [0, 1] as an 8-bit raster."""
    rgb = np.asarray(image, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DataError(f"expected an H x W x 3 image, got {rgb.shape}")
    raster = np.round(np.clip(rgb, 0.0, 1.0) * 255).astype(np.uint8)
    Image.fromarray(raster, mode="RGB").save(path)


def read_rgb(path: PathLike) -> Array:
    try:
        with Image.open(path) as image:
            raster = np.asarray(image.convert("RGB"))
    except OSError as e:
        raise DataError(f"cannot read image {path}: {e}") from e
    return raster.astype(np.float64) / 255.0
