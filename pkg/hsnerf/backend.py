__all__ = [
    "FloatDType",
    "MPBackend",
    "get_backend",
    "get_dtype",
    "set_dtype",
    "get_threads",
    "set_threads",
    "mp_configure",
]

from typing import Final, Tuple

import mpmath
import numpy as np
from mpmath import libmp
from typing_extensions import Literal


MPBackend = Literal["python", "gmpy", "sage"]
FloatDType = Literal["float64", "float32"]

MP_CONTEXTS: Final[Tuple[mpmath.ctx_base.StandardBaseContext, ...]] = (
    mpmath.mp,
    mpmath.iv,
)

_dtype: np.dtype = np.dtype(np.float64)
_threads: int = 1


def get_backend() -> MPBackend:
    """The mpmath backend used by the reference oracles."""
    backend: MPBackend = libmp.BACKEND
    return backend


def get_dtype() -> np.dtype:
    """The numpy dtype of parameters and intermediate arrays."""
    return _dtype


def set_dtype(dtype: FloatDType) -> None:
    """Select double (correctness checks) or single (training) precision.

    Only affects arrays created afterwards; existing parameters keep theirs.
    """
    global _dtype
    if dtype not in ("float64", "float32"):
        raise ValueError(f"unsupported dtype {dtype!r}")
    _dtype = np.dtype(dtype)


def get_threads() -> int:
    """Worker threads used for chunked rendering."""
    return _threads


def set_threads(n: int) -> None:
    global _threads
    if n < 1:
        raise ValueError("at least one thread is required")
    _threads = int(n)


def mp_configure(
    *,
    prec: int = 113,
    dps: int = 33,
    pretty: bool = True,
) -> None:

    """Configure all mpmath contexts used by `hsnerf.reference`.

    :param prec: binary precision in bits
    :param dps: decimal precision
    :param pretty: pretty formatting for `repr()`
    """
    for context in MP_CONTEXTS:
        context.prec = prec
        context.dps = dps
        context.pretty = pretty
