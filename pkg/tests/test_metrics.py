import csv

import mpmath
import numpy as np
import pytest
from pytest import approx

from hsnerf.dataio import HyperCube
from hsnerf.errors import ShapeError
from hsnerf.metrics import (
    PSNR_CAP,
    gaussian_window,
    psnr,
    spectrum_metrics,
    ssim,
    write_metrics_csv,
)
from hsnerf.reference import psnr_reference, ssim_reference


mpmath.mp.dps = 30


def planes(shape=(16, 20), seed=0):
    rng = np.random.default_rng(seed)
    a = rng.uniform(size=shape)
    b = np.clip(a + rng.normal(0.0, 0.05, size=shape), 0.0, 1.0)
    return a, b


def test_psnr_identical_is_capped():
    a, _ = planes()
    assert psnr(a, a) == PSNR_CAP == 99.0


def test_psnr_known_value():
    a = np.full((4, 4), 0.5)
    assert psnr(a, a + 0.1) == approx(20.0)
    assert psnr(a, a + 0.01) == approx(40.0)


def test_psnr_matches_reference():
    a, b = planes(seed=3)
    assert psnr(a, b) == approx(float(psnr_reference(a, b)), abs=1e-10)


def test_psnr_shape_mismatch():
    with pytest.raises(ShapeError):
        psnr(np.zeros(3), np.zeros(4))


def test_gaussian_window():
    w = gaussian_window()
    assert w.shape == (11, 11)
    assert w.sum() == approx(1.0)
    assert w == approx(w.T)
    assert np.unravel_index(w.argmax(), w.shape) == (5, 5)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_ssim_matches_reference(seed):
    a, b = planes(seed=seed)
    assert ssim(a, b) == approx(ssim_reference(a, b), abs=1e-8)


def test_ssim_properties():
    a, b = planes()
    assert ssim(a, a) == approx(1.0)
    assert ssim(a, b) == approx(ssim(b, a))
    assert ssim(a, b) < 1.0
    assert ssim(a, 1.0 - a) < ssim(a, b)


def test_ssim_needs_full_window():
    with pytest.raises(ValueError, match="11x11"):
        ssim(np.zeros((10, 40)), np.zeros((10, 40)))
    with pytest.raises(ShapeError):
        ssim(np.zeros((12, 12)), np.zeros((12, 13)))


def test_spectrum_metrics_per_plane():
    a, b = planes((12, 12))
    target = np.stack([a, a, a], axis=-1)
    predicted = np.stack([a, b, a + 0.0], axis=-1)
    m = spectrum_metrics(predicted, target, [500.0, 600.0, 700.0])
    assert m.psnr.tolist() == [99.0, approx(psnr(b, a)), 99.0]
    assert m.ssim[0] == approx(1.0)
    assert m.mean_psnr == approx(np.mean(m.psnr))


def test_spectrum_metrics_takes_cube_wavelengths():
    a, _ = planes((12, 12))
    cube = HyperCube([450.0, 550.0], np.stack([a, a], axis=-1))
    m = spectrum_metrics(cube, cube)
    assert m.wavelengths.tolist() == [450.0, 550.0]
    other = HyperCube([450.0, 560.0], cube.data)
    with pytest.raises(ValueError):
        spectrum_metrics(cube, other)
    with pytest.raises(ShapeError):
        spectrum_metrics(cube.data, cube.data, [1.0, 2.0, 3.0])


def test_metrics_csv(tmp_path):
    a, b = planes((12, 12))
    m = spectrum_metrics(np.stack([a, b], -1), np.stack([a, a], -1))
    write_metrics_csv(tmp_path / "m.csv", m)
    with open(tmp_path / "m.csv", newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["wavelength_nm", "psnr_db", "ssim"]
    assert rows[1][:2] == ["0", "99.000000"]
    assert rows[-1][0] == "mean"
    assert float(rows[-1][1]) == approx(m.mean_psnr, abs=1e-6)
    assert len(rows) == 4
