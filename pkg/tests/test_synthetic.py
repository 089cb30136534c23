import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from pytest import approx

from hsnerf.backend import set_dtype
from hsnerf.dataio import load_dataset
from hsnerf.errors import ConfigError
from hsnerf.synthetic import (
    GaussianSpectrum,
    RingSpec,
    Sphere,
    SyntheticScene,
    look_at,
    random_scene,
    render_synthetic_view,
    three_sphere_scene,
    wavelength_grid,
    write_synthetic_dataset,
)


set_dtype("float64")


@given(st.floats(300, 1100))
def test_spectrum_range(lam):
    spectrum = GaussianSpectrum((0.8, 0.7), (500.0, 520.0), (40.0, 30.0))
    assert 0 <= spectrum(lam) <= 1


def test_spectrum_peak():
    spectrum = GaussianSpectrum((0.6,), (550.0,), (25.0,))
    assert spectrum(550.0) == approx(0.6)
    assert spectrum(575.0) == approx(0.6 * np.exp(-0.5))
    assert spectrum([550.0, 575.0]).shape == (2,)


def test_spectrum_flat():
    flat = GaussianSpectrum.flat(0.4)
    assert flat(np.linspace(400, 1000, 7)) == approx(0.4)


@pytest.mark.parametrize(
    "args",
    [
        ((1.0,), (500.0, 600.0), (10.0,)),
        ((1.0,), (500.0,), (0.0,)),
        ((1.0,), (500.0,), (-5.0,)),
    ],
)
def test_spectrum_rejects(args):
    with pytest.raises(ConfigError):
        GaussianSpectrum(*args)


def test_sphere_occupancy():
    sphere = Sphere((0.0, 0.0, 0.0), 0.5, GaussianSpectrum.flat(0.5))
    points = np.array([[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [1.0, 0.0, 0.0]])
    occ = sphere.occupancy(points)
    assert occ[0] == approx(1.0)
    assert occ[1] == approx(0.5)
    assert occ[2] == approx(0.0, abs=1e-12)


@pytest.mark.parametrize(
    "kwargs",
    [{"radius": 0.0}, {"peak_density": -1.0}, {"softness": 0.0}],
)
def test_sphere_rejects(kwargs):
    with pytest.raises(ConfigError):
        Sphere(
            **{
                "center": (0.0, 0.0, 0.0),
                "radius": 0.5,
                "radiance": GaussianSpectrum.flat(0.5),
                **kwargs,
            }
        )


def test_scene_density_and_radiance():
    scene = three_sphere_scene()
    lam = np.array([450.0, 900.0])
    inside = np.array([[0.0, 0.0, 0.0]])
    outside = np.array([[5.0, 5.0, 5.0]])

    assert scene.density(inside, lam).shape == (1, 2)
    assert np.all(scene.density(inside, lam) > 100)
    assert scene.density(outside, lam) == approx(0.0, abs=1e-12)
    # radiance is the occupant's own spectrum at a sphere center
    center = scene.spheres[0]
    assert scene.radiance(inside, lam)[0] == approx(center.radiance(lam))
    assert scene.radiance(outside, lam)[0] == approx(0.0, abs=1e-12)


def test_scene_dict_round_trip():
    scene = random_scene(np.random.default_rng(5), n_spheres=4, background=0.2)
    data = json.loads(json.dumps(scene.to_dict()))
    assert SyntheticScene.from_dict(data) == scene


def test_scene_bounds():
    assert SyntheticScene().bounds() is None
    box = three_sphere_scene().bounds(margin=0.0)
    assert box.min[0] < -0.4 - 0.3
    assert box.max[0] > 0.55 + 0.25


def test_look_at():
    pose = look_at((3.0, 1.0, 0.5))
    rot = pose[:3, :3]
    assert rot.T @ rot == approx(np.eye(3))
    assert np.linalg.det(rot) == approx(1.0)
    forward = -pose[:3, 2]
    expected = -np.array([3.0, 1.0, 0.5])
    assert forward == approx(expected / np.linalg.norm(expected))
    assert pose[:3, 3] == approx([3.0, 1.0, 0.5])
    assert pose[3] == approx([0, 0, 0, 1])


def test_look_at_parallel_up():
    with pytest.raises(ConfigError):
        look_at((0.0, 0.0, 2.0))


def test_ring_cameras():
    ring = RingSpec(n_cameras=8, radius=2.0, elevation=0.0, fov_degrees=90.0)
    cameras = ring.cameras()
    assert len(cameras) == 8
    origins = np.array([c.camera_to_world[:3, 3] for c in cameras])
    assert np.linalg.norm(origins, axis=1) == approx(2.0)
    # 90 degrees of view across 48 pixels
    assert cameras[0].fx == approx(24.0)
    assert cameras[0].cx == approx(24.0)
    assert ring.depth_range == approx((1.0, 3.0))


def test_ring_height_jitter():
    ring = RingSpec(n_cameras=5, height_jitter=0.1)
    with pytest.raises(ConfigError):
        ring.cameras()
    a = ring.cameras(np.random.default_rng(1))
    b = ring.cameras(np.random.default_rng(1))
    for ca, cb in zip(a, b):
        assert np.array_equal(ca.camera_to_world, cb.camera_to_world)
    heights = [c.camera_to_world[2, 3] for c in a]
    assert len(set(heights)) == 5


@pytest.mark.parametrize(
    "kwargs", [{"n_cameras": 0}, {"image_width": 0}, {"fov_degrees": 180.0}]
)
def test_ring_rejects(kwargs):
    with pytest.raises(ConfigError):
        RingSpec(**kwargs)


def test_render_empty_scene():
    camera = RingSpec(n_cameras=1, image_width=6, image_height=4).cameras()[0]
    image = render_synthetic_view(SyntheticScene(background=0.3), camera, [500])
    assert image.shape == (4, 6, 1)
    assert image == approx(0.3)


def test_render_scene():
    ring = RingSpec(n_cameras=2, image_width=10, image_height=10)
    camera = ring.cameras()[0]
    lam = wavelength_grid(3)
    spectrum = GaussianSpectrum((0.7,), (600.0,), (150.0,))
    ball = Sphere((0.0, 0.0, 0.0), 0.5, spectrum)
    scene = SyntheticScene((ball,), background=0.1)
    a = render_synthetic_view(scene, camera, lam, n_steps=64, chunk_rays=7)
    b = render_synthetic_view(scene, camera, lam, n_steps=64)
    assert a == approx(b, abs=1e-12)
    assert a.shape == (10, 10, 3)
    assert np.all((a >= 0) & (a <= 1))
    # the center pixel looks at an opaque sphere, a corner at the background
    assert a[5, 5] == approx(ball.radiance(lam), abs=1e-6)
    assert a[0, 0] == approx(0.1)


def test_wavelength_grid():
    assert wavelength_grid(4) == approx([400, 600, 800, 1000])
    assert wavelength_grid(1, (500.0, 700.0)) == approx([600.0])
    with pytest.raises(ConfigError):
        wavelength_grid(0)
    with pytest.raises(ConfigError):
        wavelength_grid(3, (700.0, 500.0))


def test_write_synthetic_dataset(tmp_path):
    ring = RingSpec(n_cameras=3, image_width=5, image_height=5)
    scene = three_sphere_scene(background=0.05)
    root = write_synthetic_dataset(
        tmp_path / "synth",
        scene,
        ring,
        wavelength_grid(2),
        n_steps=16,
        extra={"note": "tiny"},
    )
    dataset = load_dataset(root)
    assert len(dataset) == 3
    assert dataset.wavelengths == approx([400, 1000])
    assert dataset.background == approx(0.05)
    assert dataset.meta["note"] == "tiny"
    assert dataset.meta["depth_range"] == approx(list(ring.depth_range))
    assert "scene_box" in dataset.meta
    assert SyntheticScene.from_dict(dataset.meta["scene"]) == scene
