import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hsnerf.backend import get_dtype, set_dtype
from hsnerf.numbers import (
    as_array,
    as_wavelengths,
    evenly_spaced,
    is_finite_array,
    is_real,
    is_unit_rows,
    searchsorted_rows,
)


set_dtype("float64")


def test_is_real():
    assert is_real(1)
    assert is_real(2.5)
    assert is_real(np.float32(1.0))
    assert is_real(np.int64(3))
    assert not is_real(True)
    assert not is_real("1")
    assert not is_real(1j)


def test_is_finite_array():
    assert is_finite_array(np.zeros(3))
    assert not is_finite_array(np.array([0.0, np.nan]))
    assert not is_finite_array([0.0, 1.0])


def test_is_unit_rows():
    assert is_unit_rows(np.array([[1.0, 0.0, 0.0], [0.6, 0.8, 0.0]]))
    assert not is_unit_rows(np.array([[1.0, 1.0, 0.0]]))


def test_as_array_follows_dtype():
    assert as_array([1, 2]).dtype == get_dtype()
    set_dtype("float32")
    try:
        assert as_array([1, 2]).dtype == np.float32
        assert as_array([1, 2], np.float64).dtype == np.float64
    finally:
        set_dtype("float64")


def test_as_wavelengths():
    assert as_wavelengths(500).shape == (1,)
    assert as_wavelengths([[400, 500], [600, 700]]).shape == (4,)
    with pytest.raises(ValueError):
        as_wavelengths([])
    with pytest.raises(ValueError):
        as_wavelengths([400.0, np.inf])


@given(st.integers(1, 200), st.data())
def test_evenly_spaced_distinct(n, data):
    keep = data.draw(st.integers(1, n))
    phase = data.draw(st.sampled_from([0.0, 0.25, 0.5, 0.99]))
    idx = evenly_spaced(n, keep, phase)
    assert idx.size == keep
    assert np.all(np.diff(idx) > 0)
    assert 0 <= idx[0] and idx[-1] < n


def test_evenly_spaced_values():
    assert evenly_spaced(16, 8).tolist() == [0, 2, 4, 6, 8, 10, 12, 14]
    assert evenly_spaced(10, 2, 0.5).tolist() == [2, 7]
    with pytest.raises(ValueError):
        evenly_spaced(3, 4)


@given(st.integers(0, 2**31 - 1), st.sampled_from(["left", "right"]))
def test_searchsorted_rows_matches_numpy(seed, side):
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.integers(0, 6, size=(4, 7)).astype(float), axis=-1)
    values = rng.integers(-1, 7, size=(4, 5)).astype(float)
    idx = searchsorted_rows(rows, values, side)
    for r in range(4):
        expected = np.searchsorted(rows[r], values[r], side=side)
        assert idx[r].tolist() == expected.tolist()


def test_searchsorted_rows_resolves_close_values():
    # many rows and far-apart magnitudes must not blur neighbouring values
    rows = np.tile([0.0, 0.5, 1.0], (100_000, 1))
    rows[-1] = [1e9, 1e9 + 0.5, 1e9 + 1.0]
    values = np.full((100_000, 1), 0.5 - 1e-12)
    values[-1] = 1e9 + 0.5
    assert np.all(searchsorted_rows(rows, values, "left")[:-1] == 1)
    assert np.all(searchsorted_rows(rows, values, "right")[:-1] == 1)
    assert searchsorted_rows(rows, values, "right")[-1, 0] == 2


def test_searchsorted_rows_rejects():
    with pytest.raises(ValueError):
        searchsorted_rows(np.zeros((2, 3)), np.zeros((3, 1)))
    with pytest.raises(ValueError):
        searchsorted_rows(np.zeros((2, 3)), np.zeros((2, 1)), "middle")
