from __future__ import annotations


__all__ = [
    "PSNR_CAP",
    "SpectrumMetrics",
    "psnr",
    "ssim",
    "gaussian_window",
    "spectrum_metrics",
    "write_metrics_csv",
]

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import numpy.typing as npt
from numpy.lib.stride_tricks import sliding_window_view

from hsnerf.dataio import HyperCube
from hsnerf.errors import ShapeError
from hsnerf.numbers import Array


# finite stand-in for the PSNR of identical images
PSNR_CAP = 99.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: npt.ArrayLike, b: npt.ArrayLike, max_value: float = 1.0) -> float:
    """10 log10(max^2 / MSE) in dB, at most `PSNR_CAP`."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError("psnr", x.shape, y.shape)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(10.0 * np.log10(max_value**2 / mse), PSNR_CAP)


def gaussian_window(
    size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA
) -> Array:
    """Normalized 2D Gaussian kernel."""
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(
    a: npt.ArrayLike, b: npt.ArrayLike, max_value: float = 1.0
) -> float:
    """Single-scale SSIM of two planes, averaged over every window position
    that fits entirely inside the image."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2:
        raise ShapeError("ssim", x.shape, y.shape)
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(
            f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, "
            f"got {x.shape[0]}x{x.shape[1]}"
        )
    w = gaussian_window()
    c1 = (SSIM_K1 * max_value) ** 2
    c2 = (SSIM_K2 * max_value) ** 2

    def filt(img: Array) -> Array:
        windows = sliding_window_view(img, w.shape)
        return np.einsum("ijkl,kl->ij", windows, w)

    mu_x, mu_y = filt(x), filt(y)
    var_x = filt(x * x) - mu_x**2
    var_y = filt(y * y) - mu_y**2
    cov = filt(x * y) - mu_x * mu_y
    index = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    )
    return float(index.mean())


@dataclass(frozen=True)
class SpectrumMetrics:
    wavelengths: Array
    psnr: Array
    ssim: Array

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim))


def _planes(cube: Union[HyperCube, npt.ArrayLike]) -> Array:
    if isinstance(cube, HyperCube):
        return cube.data.astype(np.float64)
    return np.asarray(cube, dtype=np.float64)


def spectrum_metrics(
    predicted: Union[HyperCube, npt.ArrayLike],
    target: Union[HyperCube, npt.ArrayLike],
    wavelengths: Optional[npt.ArrayLike] = None,
) -> SpectrumMetrics:
    """PSNR and SSIM of every wavelength plane of two (H, W, L) cubes."""
    if isinstance(predicted, HyperCube) and isinstance(target, HyperCube):
        if not np.array_equal(predicted.wavelengths, target.wavelengths):
            raise ValueError("cubes have different wavelength axes")
    p, t = _planes(predicted), _planes(target)
    if p.shape != t.shape or p.ndim != 3:
        raise ShapeError("spectrum_metrics", p.shape, t.shape)
    if wavelengths is None:
        source = target if isinstance(target, HyperCube) else predicted
        if isinstance(source, HyperCube):
            wavelengths = source.wavelengths
        else:
            wavelengths = np.arange(p.shape[2], dtype=np.float64)
    lam = np.asarray(wavelengths, dtype=np.float64).reshape(-1)
    if lam.size != p.shape[2]:
        raise ShapeError("spectrum_metrics", lam.shape, p.shape)

    return SpectrumMetrics(
        wavelengths=lam,
        psnr=np.array([psnr(p[..., j], t[..., j]) for j in range(lam.size)]),
        ssim=np.array([ssim(p[..., j], t[..., j]) for j in range(lam.size)]),
    )


def write_metrics_csv(path: Union[str, Path], metrics: SpectrumMetrics) -> None:
    """``wavelength_nm,psnr_db,ssim`` rows and a final ``mean`` row."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["wavelength_nm", "psnr_db", "ssim"])
        for lam, p, s in zip(metrics.wavelengths, metrics.psnr, metrics.ssim):
            writer.writerow([f"{lam:.6g}", f"{p:.6f}", f"{s:.6f}"])
        writer.writerow(
            ["mean", f"{metrics.mean_psnr:.6f}", f"{metrics.mean_ssim:.6f}"]
        )
