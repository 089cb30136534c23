from __future__ import annotations


__all__ = [
    "Array",
    "IntArray",
    "BoolArray",
    "AnyReal",
    "Wavelengths",
    "is_real",
    "is_finite_array",
    "is_unit_rows",
    "as_array",
    "as_wavelengths",
    "evenly_spaced",
    "searchsorted_rows",
]

from typing import Any, Sequence, Union

import numpy as np
import numpy.typing as npt
from typing_extensions import TypeGuard

from hsnerf.backend import get_dtype


# dense float array of the configured dtype
Array = npt.NDArray[np.floating]
IntArray = npt.NDArray[np.integer]
BoolArray = npt.NDArray[np.bool_]

AnyReal = Union[int, float, np.floating, np.integer]

# strictly increasing wavelengths in nanometers
Wavelengths = Array


def is_real(x: object) -> TypeGuard[AnyReal]:
    if isinstance(x, bool):
        return False
    return isinstance(x, (int, float, np.floating, np.integer))


def is_finite_array(x: object) -> TypeGuard[Array]:
    return isinstance(x, np.ndarray) and bool(np.all(np.isfinite(x)))


def is_unit_rows(x: Array, *, tol: float = 1e-6) -> bool:
    """True iff every row along the last axis has unit euclidean norm."""
    norms = np.linalg.norm(x, axis=-1)
    return bool(np.all(np.abs(norms - 1.0) <= tol))


def as_array(x: Union[npt.ArrayLike, Any], dtype: Any = None) -> Array:
    """Convert to a float array of the configured (or given) dtype."""
    return np.asarray(x, dtype=get_dtype() if dtype is None else dtype)


def as_wavelengths(values: Union[Sequence[AnyReal], Array]) -> Wavelengths:
    lambdas = np.asarray(values, dtype=np.float64).reshape(-1)
    if lambdas.size == 0:
        raise ValueError("at least one wavelength is required")
    if not np.all(np.isfinite(lambdas)):
        raise ValueError("wavelengths must be finite")
    return lambdas


def evenly_spaced(
    n: int, keep: int, phase: float = 0.0
) -> npt.NDArray[np.intp]:
    """Indices ``floor((i + phase) * n / keep)`` for ``i < keep``, or
    ``round(i * n / keep)`` when `phase` is 0; distinct for keep <= n."""
    if not 1 <= keep <= n:
        raise ValueError(f"cannot keep {keep} of {n} items")
    i = np.arange(keep)
    if phase:
        idx = np.floor((i + phase) * n / keep)
    else:
        idx = np.round(i * n / keep)
    return np.minimum(idx.astype(np.intp), n - 1)


def searchsorted_rows(
    sorted_rows: npt.ArrayLike, values: npt.ArrayLike, side: str = "left"
) -> npt.NDArray[np.intp]:
    """Row-wise `np.searchsorted` of (R, K) values into (R, M) sorted rows."""
    rows = np.asarray(sorted_rows)
    v = np.asarray(values)
    if rows.ndim != 2 or v.ndim != 2 or rows.shape[0] != v.shape[0]:
        raise ValueError(
            f"cannot search {v.shape} values in {rows.shape} rows"
        )
    if side == "left":
        below = rows[:, None, :] < v[:, :, None]
    elif side == "right":
        below = rows[:, None, :] <= v[:, :, None]
    else:
        raise ValueError(f"side must be 'left' or 'right', not {side!r}")
    return below.sum(axis=-1).astype(np.intp)
