import csv

import numpy as np
import pytest
from pytest import approx

from hsnerf.dataio import HyperCube
from hsnerf.errors import DataError
from hsnerf.spectools import (
    QUADRANTS,
    QuadrantMetrics,
    SpectralResponse,
    SuperresReport,
    fit_linear_map,
    fit_residual,
    pseudo_rgb_fixed,
    read_response_csv,
    read_rgb,
    selector_response,
    simulate_sensor,
    superres_split,
    write_response_csv,
    write_rgb,
)


LAMBDAS = np.linspace(400.0, 700.0, 7)


def random_cube(h=6, w=5, seed=0):
    data = np.random.default_rng(seed).uniform(size=(h, w, LAMBDAS.size))
    return HyperCube(LAMBDAS, data)


def test_fit_recovers_true_response():
    rng = np.random.default_rng(1)
    a_true = rng.uniform(0.0, 0.3, size=(3, 10))
    x = rng.uniform(size=(500, 10))
    fit = fit_linear_map(x, x @ a_true.T)
    assert np.max(np.abs(fit.matrix - a_true)) < 1e-6
    assert fit.wavelengths.tolist() == list(range(10))
    assert fit_residual(x, x @ a_true.T, fit) < 1e-6


def test_fit_one_hot_response():
    cube = random_cube()
    rgb = cube.data[..., [5, 3, 1]]
    fit = fit_linear_map(cube, rgb)
    expected = np.zeros((3, LAMBDAS.size))
    expected[[0, 1, 2], [5, 3, 1]] = 1.0
    assert fit.matrix == approx(expected, abs=1e-6)
    assert fit.wavelengths == approx(LAMBDAS)


def test_fit_duplicated_channel_stays_finite():
    rng = np.random.default_rng(2)
    x = rng.uniform(size=(50, 4))
    x[:, 3] = x[:, 2]
    y = np.stack([x[:, 2], x[:, 0], x[:, 1]], axis=-1)
    fit = fit_linear_map(x, y)
    assert np.all(np.isfinite(fit.matrix))
    # the weight splits between the two identical columns
    assert fit.matrix[0, 2] + fit.matrix[0, 3] == approx(1.0, abs=1e-6)
    assert fit_residual(x, y, fit) < 1e-6


def test_fit_mask_selects_pixels():
    cube = random_cube()
    rgb = cube.data[..., [0, 1, 2]].copy()
    mask = np.ones((6, 5), bool)
    mask[0, 0] = False
    rgb[0, 0] = [1.0, 1.0, 1.0]
    fit = fit_linear_map(cube, rgb, mask=mask)
    assert fit.matrix[:, :3] == approx(np.eye(3), abs=1e-6)


def test_fit_rejects():
    with pytest.raises(DataError):
        fit_linear_map(np.ones((4, 3)), np.ones((5, 3)))
    with pytest.raises(DataError):
        fit_linear_map(np.ones((4, 3)), np.ones((4, 2)))
    with pytest.raises(DataError):
        fit_linear_map(np.ones((4, 3)), np.ones((4, 3)), mask=[False] * 4)
    with pytest.raises(ValueError):
        fit_linear_map(np.ones((4, 3)), np.ones((4, 3)), ridge=-1.0)


def test_selector_matches_pseudo_rgb():
    cube = random_cube()
    bands = (640.0, 555.0, 480.0)
    rgb = simulate_sensor(cube, selector_response(LAMBDAS, bands))
    assert rgb == approx(pseudo_rgb_fixed(cube, *bands))


def test_pseudo_rgb_default_bands():
    cube = random_cube()
    rgb = pseudo_rgb_fixed(cube)
    assert rgb.shape == (6, 5, 3)
    # 622 -> 600 nm, 555 -> 550 nm, 503 -> 500 nm
    assert rgb[..., 0] == approx(cube.data[..., 4])
    assert rgb[..., 1] == approx(cube.data[..., 3])
    assert rgb[..., 2] == approx(cube.data[..., 2])


def test_pseudo_rgb_band_out_of_range():
    with pytest.raises(DataError, match="900"):
        pseudo_rgb_fixed(random_cube(), 900.0)


def test_simulate_zero_and_linear():
    cube = random_cube()
    zero = SpectralResponse(LAMBDAS, np.zeros((3, LAMBDAS.size)))
    assert np.array_equal(simulate_sensor(cube, zero), np.zeros((6, 5, 3)))

    rng = np.random.default_rng(3)
    a = SpectralResponse(LAMBDAS, rng.uniform(0, 0.1, (3, LAMBDAS.size)))
    b = SpectralResponse(LAMBDAS, rng.uniform(0, 0.1, (3, LAMBDAS.size)))
    combined = simulate_sensor(cube, 2.0 * a + b, clamp=False)
    separate = 2.0 * simulate_sensor(cube, a, clamp=False)
    separate += simulate_sensor(cube, b, clamp=False)
    assert combined == approx(separate)


def test_simulate_clamps():
    cube = random_cube()
    bright = SpectralResponse(LAMBDAS, np.full((3, LAMBDAS.size), 10.0))
    assert simulate_sensor(cube, bright).max() == 1.0
    assert simulate_sensor(cube, bright, clamp=False).max() > 1.0


def test_simulate_rejects_other_grid():
    other = SpectralResponse(LAMBDAS + 5.0, np.zeros((3, LAMBDAS.size)))
    with pytest.raises(DataError, match="grid"):
        simulate_sensor(random_cube(), other)
    short = SpectralResponse(LAMBDAS[:3], np.zeros((3, 3)))
    with pytest.raises(DataError, match="channels"):
        simulate_sensor(random_cube(), short)


def test_response_validation():
    with pytest.raises(DataError):
        SpectralResponse(LAMBDAS, np.zeros((2, LAMBDAS.size)))
    with pytest.raises(DataError):
        SpectralResponse(LAMBDAS, np.full((3, LAMBDAS.size), np.inf))
    r = selector_response(LAMBDAS)
    assert r.r_bar.sum() == r.g_bar.sum() == r.b_bar.sum() == 1.0
    assert r.n_channels == 7


def test_response_csv(tmp_path):
    rng = np.random.default_rng(4)
    response = SpectralResponse(LAMBDAS, rng.normal(size=(3, LAMBDAS.size)))
    write_response_csv(response, tmp_path / "r.csv")
    with open(tmp_path / "r.csv", newline="") as f:
        assert next(csv.reader(f)) == ["wavelength_nm", "r", "g", "b"]
    back = read_response_csv(tmp_path / "r.csv")
    assert np.array_equal(back.matrix, response.matrix)
    assert np.array_equal(back.wavelengths, response.wavelengths)


def test_response_csv_errors(tmp_path):
    (tmp_path / "a.csv").write_text("lambda,r,g,b\n500,1,0,0\n")
    (tmp_path / "b.csv").write_text("wavelength_nm,r,g,b\n500,1,x,0\n")
    (tmp_path / "c.csv").write_text("wavelength_nm,r,g,b\n500,1,0\n")
    for name in ("a.csv", "b.csv", "c.csv", "missing.csv"):
        with pytest.raises(DataError):
            read_response_csv(tmp_path / name)


def test_rgb_png(tmp_path):
    image = np.random.default_rng(5).uniform(size=(4, 3, 3))
    write_rgb(image, tmp_path / "x.png")
    assert read_rgb(tmp_path / "x.png") == approx(image, abs=0.5 / 255 + 1e-9)
    with pytest.raises(DataError):
        write_rgb(np.zeros((4, 3)), tmp_path / "y.png")


def test_superres_split():
    lam = np.linspace(400.0, 1000.0, 128)
    train, held = superres_split(lam, 64)
    assert train.size == 64 and held.size == 64
    assert np.array_equal(train, lam[::2])
    assert np.array_equal(held, lam[1::2])
    train, held = superres_split(lam, 128)
    assert held.size == 0
    assert superres_split(lam, 8)[0][0] == 400.0
    with pytest.raises(ValueError):
        superres_split(lam, 0)


def test_superres_report_row():
    report = SuperresReport(
        8,
        {
            "train_set": QuadrantMetrics(30.1234, 0.91234),
            "unseen_images": QuadrantMetrics(25.0, 0.8),
            "unseen_wavelengths": None,
            "both_unseen": None,
        },
    )
    row = report.row()
    assert row["wavelengths"] == "8"
    assert row["train_set_psnr"] == "30.123"
    assert row["train_set_ssim"] == "0.9123"
    assert row["both_unseen_psnr"] == "N/A"
    assert len(row) == 1 + 2 * len(QUADRANTS)
