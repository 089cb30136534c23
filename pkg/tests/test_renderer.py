import numpy as np
import pytest
from pytest import approx

from hsnerf import autodiff as ad
from hsnerf.backend import get_threads, set_dtype, set_threads
from hsnerf.errors import ConfigError
from hsnerf.field import build_field
from hsnerf.renderer import SamplerConfig, render_image, render_rays
from hsnerf.sampling import CameraFrame, RayBatch, SceneBox
from hsnerf.synthetic import look_at

from .tiny import TINY_SAMPLER, tiny_field_config


set_dtype("float64")

BOX = SceneBox(np.full(3, -1.0), np.full(3, 1.0))
LAMBDAS = [450.0, 600.0, 750.0]


def field(proposal="P0", density="sigma0", seed=0):
    config = tiny_field_config(
        density_variant=density, proposal_variant=proposal
    ).with_channels(LAMBDAS, (400.0, 1000.0))
    return build_field(config, seed, BOX)


def rays(n=6):
    origins = np.tile([0.0, 0.0, 4.0], (n, 1))
    origins[:, 0] = np.linspace(-0.5, 0.5, n)
    # the last ray misses the box
    origins[-1] = [5.0, 5.0, 4.0]
    directions = np.tile([0.0, 0.0, -1.0], (n, 1))
    return RayBatch(origins, directions, np.zeros((n, 2), np.intp))


def camera(size=10):
    return CameraFrame(
        fx=12.0,
        fy=12.0,
        cx=size / 2,
        cy=size / 2,
        width=size,
        height=size,
        camera_to_world=look_at((0.0, -3.0, 1.0)),
    )


def test_shared_proposal_render():
    with ad.no_grad():
        out = render_rays(field(), rays(), LAMBDAS, TINY_SAMPLER, 0.3)
    assert out.pixels.shape == (6, 3)
    assert out.depth.shape == out.accumulation.shape == (6, 3)
    assert out.interlevel.shape == ()
    assert out.interlevel.item() >= 0
    assert out.interlevel_per_lambda.shape == (3,)
    assert np.all(out.accumulation <= 1.0 + 1e-12)


def test_missed_rays_see_background():
    with ad.no_grad():
        out = render_rays(field(), rays(), LAMBDAS, TINY_SAMPLER, 0.3)
    assert out.pixels.data[-1] == approx([0.3, 0.3, 0.3])
    assert out.accumulation[-1] == approx([0.0, 0.0, 0.0])
    assert out.fallback_rays >= 1


def test_per_wavelength_proposal_render():
    f = field("Plambda", "sigma")
    with ad.no_grad():
        out = render_rays(f, rays(), LAMBDAS, TINY_SAMPLER, [0.1, 0.2, 0.3])
    assert out.pixels.shape == (6, 3)
    assert out.interlevel_per_lambda is None
    assert out.pixels.data[-1] == approx([0.1, 0.2, 0.3])


def test_wavelength_order_does_not_matter_for_shared_density():
    f = field()
    with ad.no_grad():
        a = render_rays(f, rays(), LAMBDAS, TINY_SAMPLER).pixels.data
        b = render_rays(f, rays(), LAMBDAS[::-1], TINY_SAMPLER).pixels.data
    assert a == approx(b[:, ::-1])


def test_training_render_needs_rng():
    with pytest.raises(ValueError, match="rng"):
        render_rays(field(), rays(), LAMBDAS, TINY_SAMPLER, training=True)


def test_jittered_render_is_seeded():
    f = field()
    outs = [
        render_rays(
            f,
            rays(),
            LAMBDAS,
            TINY_SAMPLER,
            rng=np.random.default_rng(4),
            training=True,
        ).pixels.data
        for _ in range(2)
    ]
    assert np.array_equal(outs[0], outs[1])


def test_sampler_must_match_proposals():
    sampler = SamplerConfig(proposal_samples=(8,), fine_samples=8)
    with pytest.raises(ConfigError, match="proposal"):
        render_rays(field(), rays(), LAMBDAS, sampler)


def test_sampler_validation():
    with pytest.raises(ConfigError):
        SamplerConfig(proposal_samples=()).validate()
    with pytest.raises(ConfigError):
        SamplerConfig(fine_samples=0).validate()
    with pytest.raises(ConfigError, match="unknown"):
        SamplerConfig.from_dict({"samples": 3})
    config = SamplerConfig(proposal_samples=(16, 8), fine_samples=4)
    assert SamplerConfig.from_dict(config.to_dict()) == config


def test_render_image_matches_threads():
    f = field()
    serial = render_image(f, camera(), LAMBDAS, TINY_SAMPLER, workers=1)
    threaded = render_image(f, camera(), LAMBDAS, TINY_SAMPLER, workers=3)
    assert serial.cube.shape == (10, 10, 3)
    assert np.array_equal(serial.cube, threaded.cube)
    assert serial.wavelengths.tolist() == LAMBDAS


def test_thread_setting():
    previous = get_threads()
    set_threads(2)
    assert get_threads() == 2
    set_threads(previous)
    with pytest.raises(ValueError):
        set_threads(0)
