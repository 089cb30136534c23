import struct

import numpy as np
import pytest

from hsnerf import autodiff as ad
from hsnerf.backend import set_dtype
from hsnerf.checkpoint import (
    HFCK_MAGIC,
    HFCK_VERSION,
    load_checkpoint,
    save_checkpoint,
)
from hsnerf.errors import DataError
from hsnerf.field import build_field
from hsnerf.optim import AdamState, adam_step
from hsnerf.sampling import SceneBox

from .tiny import tiny_field_config


set_dtype("float64")

BOX = SceneBox(np.array([-1.0, -1.0, -0.5]), np.array([1.0, 1.0, 0.5]))


def trained_field(variant="C", density="sigma"):
    config = tiny_field_config(
        radiance_variant=variant, density_variant=density
    ).with_channels([500.0, 600.0, 700.0])
    field = build_field(config, 3, BOX)
    adam = AdamState(learning_rate=5e-3)
    rng = np.random.default_rng(0)
    params = field.parameters()
    for _ in range(2):
        grads = {n: rng.normal(size=p.shape) for n, p in params.items()}
        adam_step(params, grads, adam)
    return field, adam


@pytest.mark.parametrize("variant", [("C", "sigma"), ("C1", "sigma1")])
def test_round_trip_is_exact(tmp_path, variant):
    field, adam = trained_field(*variant)
    meta = {"train_images": [0, 2], "note": "x"}
    path = save_checkpoint(tmp_path / "a.hfck", field, adam, 17, meta)
    ckpt = load_checkpoint(path)

    assert ckpt.step == 17
    assert ckpt.meta == meta
    assert ckpt.field.config == field.config
    assert np.array_equal(ckpt.field.box.min, BOX.min)
    assert ckpt.adam.step_count == 2
    assert ckpt.adam.learning_rate == 5e-3
    for name, p in field.parameters().items():
        assert np.array_equal(ckpt.field.parameters()[name].data, p.data)
        assert np.array_equal(
            ckpt.adam.first_moment[name], adam.first_moment[name]
        )
        assert np.array_equal(
            ckpt.adam.second_moment[name], adam.second_moment[name]
        )


def test_loaded_field_renders_identically(tmp_path):
    field, adam = trained_field()
    save_checkpoint(tmp_path / "a.hfck", field, adam, 0)
    loaded = load_checkpoint(tmp_path / "a.hfck").field
    x = np.random.default_rng(1).uniform(-0.5, 0.5, size=(4, 3))
    d = np.tile([0.0, 0.0, -1.0], (4, 1))
    with ad.no_grad():
        a = field.query(x, d, [550.0])
        b = loaded.query(x, d, [550.0])
    assert np.array_equal(a.radiance.data, b.radiance.data)
    assert np.array_equal(a.density.data, b.density.data)


def test_preamble(tmp_path):
    field, adam = trained_field()
    save_checkpoint(tmp_path / "a.hfck", field, adam, 0)
    raw = (tmp_path / "a.hfck").read_bytes()
    magic, version, _ = struct.unpack_from("<4sII", raw)
    assert (magic, version) == (HFCK_MAGIC, HFCK_VERSION)
    assert not (tmp_path / "a.hfck.tmp").exists()


def test_fresh_optimizer_has_no_moments(tmp_path):
    field, _ = trained_field()
    save_checkpoint(tmp_path / "a.hfck", field, AdamState(), 0)
    ckpt = load_checkpoint(tmp_path / "a.hfck")
    assert ckpt.adam.first_moment == {}


def test_corrupt_checkpoints(tmp_path):
    field, adam = trained_field()
    save_checkpoint(tmp_path / "a.hfck", field, adam, 0)
    raw = (tmp_path / "a.hfck").read_bytes()
    cases = {
        "short": raw[:8],
        "magic": b"XXXX" + raw[4:],
        "version": raw[:4] + struct.pack("<I", 99) + raw[8:],
        "header": raw[:40],
        "data": raw[:-8],
    }
    for name, content in cases.items():
        (tmp_path / f"{name}.hfck").write_bytes(content)
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / f"{name}.hfck")
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "missing.hfck")
