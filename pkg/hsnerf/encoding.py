from __future__ import annotations


__all__ = ["SinusoidalEncoding", "GridEncoding", "sin_encode", "grid_encode"]

import itertools
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import numpy.typing as npt

from hsnerf import autodiff as ad
from hsnerf.autodiff import Tensor
from hsnerf.backend import get_dtype
from hsnerf.errors import ShapeError
from hsnerf.numbers import Array, IntArray


@dataclass(frozen=True)
class SinusoidalEncoding:
    """[sin(2^k pi t), cos(2^k pi t)] for k < n_terms, t = (x - lo) / (hi - lo).

    Inputs outside [lo, hi] are clamped; wavelength queries interpolate,
    they never extrapolate.
    """

    n_terms: int
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self) -> None:
        if self.n_terms < 1:
            raise ValueError("n_terms must be at least 1")
        if self.hi == self.lo:
            raise ValueError(
                f"degenerate encoding domain [{self.lo}, {self.hi}]"
            )

    @property
    def dim(self) -> int:
        return 2 * self.n_terms

    def normalize(self, x: npt.ArrayLike) -> Array:
        x = np.asarray(x, dtype=np.float64)
        lo, hi = sorted((self.lo, self.hi))
        return (np.clip(x, lo, hi) - self.lo) / (self.hi - self.lo)

    def __call__(self, x: npt.ArrayLike) -> Array:
        """(...,) -> (..., 2 * n_terms)."""
        t = self.normalize(x)
        freqs = np.pi * 2.0 ** np.arange(self.n_terms)
        phase = t[..., None] * freqs
        out = np.empty(t.shape + (self.dim,), dtype=np.float64)
        out[..., 0::2] = np.sin(phase)
        out[..., 1::2] = np.cos(phase)
        return out.astype(get_dtype())

    def encode_vectors(self, x: npt.ArrayLike) -> Array:
        """(..., D) -> (..., D * 2 * n_terms), each component encoded."""
        x = np.asarray(x)
        enc = self(x)
        return enc.reshape(x.shape[:-1] + (x.shape[-1] * self.dim,))


def sin_encode(x: npt.ArrayLike, enc: SinusoidalEncoding) -> Array:
    return enc(x)


class GridEncoding:
    """Dense multiresolution feature grids over the unit (hyper)cube.

    Level ``l`` has ``round(base * growth**l)`` cells per axis, capped so a
    level never stores more than `max_entries` vertices. Features are
    multilinearly interpolated and concatenated across levels.
    """

    __slots__ = (
        "input_dim",
        "levels",
        "base_resolution",
        "growth_factor",
        "features_per_level",
        "max_entries",
        "resolutions",
        "tables",
        "_corners",
    )

    input_dim: int
    levels: int
    base_resolution: int
    growth_factor: float
    features_per_level: int
    max_entries: int
    resolutions: List[int]
    tables: List[Tensor]

    def __init__(
        self,
        input_dim: int = 3,
        levels: int = 8,
        base_resolution: int = 16,
        growth_factor: float = 1.5,
        features_per_level: int = 2,
        max_entries: int = 2**18,
        *,
        rng: Optional[np.random.Generator] = None,
        init_scale: float = 1e-4,
        name: str = "grid",
    ):
        if input_dim not in (3, 4):
            raise ValueError("grid encodings take 3D or 4D inputs")
        if levels < 1 or base_resolution < 1 or features_per_level < 1:
            raise ValueError("levels, resolution and features must be >= 1")
        if growth_factor < 1:
            raise ValueError("growth_factor must be at least 1")

        self.input_dim = input_dim
        self.levels = levels
        self.base_resolution = base_resolution
        self.growth_factor = growth_factor
        self.features_per_level = features_per_level
        self.max_entries = max_entries

        side = int(round(max_entries ** (1.0 / input_dim)))
        while side**input_dim > max_entries:
            side -= 1
        cap = max(side - 1, 1)
        self.resolutions = [
            min(int(round(base_resolution * growth_factor**level)), cap)
            for level in range(levels)
        ]

        rng = rng if rng is not None else np.random.default_rng(0)
        self.tables = []
        for level, res in enumerate(self.resolutions):
            n = (res + 1) ** input_dim
            init = rng.uniform(-init_scale, init_scale, (n, features_per_level))
            self.tables.append(ad.parameter(init, name=f"{name}.level{level}"))

        self._corners = np.array(
            list(itertools.product((0, 1), repeat=input_dim)), dtype=np.intp
        )[:, ::-1]

    @property
    def output_dim(self) -> int:
        return self.levels * self.features_per_level

    def parameters(self) -> Dict[str, Tensor]:
        return {t.name or f"level{i}": t for i, t in enumerate(self.tables)}

    def corners(self, p: Array, level: int) -> Tuple[IntArray, Array]:
        """Vertex indices and multilinear weights, both (n, 2**input_dim)."""
        res = self.resolutions[level]
        x = np.clip(p, 0.0, 1.0) * res
        base = np.clip(np.floor(x), 0, res - 1).astype(np.intp)
        frac = x - base

        vertex = base[:, None, :] + self._corners[None, :, :]
        strides = (res + 1) ** np.arange(self.input_dim)
        index = vertex @ strides
        weight = np.prod(
            np.where(self._corners[None], frac[:, None], 1.0 - frac[:, None]),
            axis=-1,
        )
        return index, weight

    def __call__(self, p: npt.ArrayLike) -> Tensor:
        points = np.asarray(p, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != self.input_dim:
            raise ShapeError(
                "grid_encode", points.shape, (-1, self.input_dim)
            )
        feats = []
        for level, table in enumerate(self.tables):
            index, weight = self.corners(points, level)
            feats.append(ad.weighted_gather(table, index, weight))
        return ad.concat(feats, axis=-1)


def grid_encode(p: npt.ArrayLike, enc: GridEncoding) -> Tensor:
    return enc(p)
