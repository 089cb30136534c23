"""
Slow scalar reference implementations in mpmath arithmetic.

Each function mirrors one vectorized numpy kernel with a plain loop so the
kernels can be checked against an independent, higher-precision result.
Precision follows the mpmath contexts configured by `mp_configure`.
"""

from __future__ import annotations


__all__ = [
    "composite_reference",
    "adam_reference",
    "sin_encode_reference",
    "psnr_reference",
    "ssim_reference",
    "multilinear_reference",
    "interlevel_reference",
]

import itertools
from typing import List, Sequence, Tuple

import mpmath
import numpy as np
import numpy.typing as npt

from hsnerf.numbers import Array


def _mpf(x: float) -> mpmath.mpf:
    return mpmath.mpf(float(x))


def composite_reference(
    densities: Sequence[float],
    radiances: Sequence[float],
    deltas: Sequence[float],
    background: float = 0.0,
) -> Tuple[mpmath.mpf, List[mpmath.mpf]]:
    """Pixel value and weights of one ray at one wavelength, with the
    transmittance as a running product of per-sample survival terms."""
    pixel = mpmath.mpf(0)
    survival = mpmath.mpf(1)
    weights = []
    for sigma, c, delta in zip(densities, radiances, deltas):
        keep = mpmath.exp(-_mpf(sigma) * _mpf(delta))
        w = survival * (1 - keep)
        weights.append(w)
        pixel += w * _mpf(c)
        survival *= keep
    pixel += (1 - mpmath.fsum(weights)) * _mpf(background)
    return pixel, weights


def adam_reference(
    start: float,
    grads: Sequence[float],
    lrs: Sequence[float],
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-15,
) -> mpmath.mpf:
    """A scalar parameter after one bias-corrected Adam update per gradient."""
    p = _mpf(start)
    m = v = mpmath.mpf(0)
    b1, b2 = _mpf(beta1), _mpf(beta2)
    for t, (g, lr) in enumerate(zip(grads, lrs), 1):
        g = _mpf(g)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p -= _mpf(lr) * m_hat / (mpmath.sqrt(v_hat) + _mpf(epsilon))
    return p


def sin_encode_reference(
    x: float, n_terms: int, lo: float = 0.0, hi: float = 1.0
) -> List[mpmath.mpf]:
    t = (min(max(_mpf(x), _mpf(min(lo, hi))), _mpf(max(lo, hi))) - lo) / (
        _mpf(hi) - _mpf(lo)
    )
    out = []
    for k in range(n_terms):
        phase = mpmath.pi * 2**k * t
        out += [mpmath.sin(phase), mpmath.cos(phase)]
    return out


def psnr_reference(
    a: npt.ArrayLike, b: npt.ArrayLike, max_value: float = 1.0
) -> mpmath.mpf:
    x = np.asarray(a, dtype=np.float64).ravel()
    y = np.asarray(b, dtype=np.float64).ravel()
    mse = mpmath.fsum((_mpf(p) - _mpf(q)) ** 2 for p, q in zip(x, y)) / x.size
    return 10 * mpmath.log10(_mpf(max_value) ** 2 / mse)


def ssim_reference(
    a: npt.ArrayLike,
    b: npt.ArrayLike,
    max_value: float = 1.0,
    size: int = 11,
    sigma: float = 1.5,
) -> float:
    """SSIM with the statistics of each window position computed directly."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    w = np.outer(g, g) / g.sum() ** 2
    c1 = (0.01 * max_value) ** 2
    c2 = (0.03 * max_value) ** 2

    values = []
    for i in range(x.shape[0] - size + 1):
        for j in range(x.shape[1] - size + 1):
            px = x[i : i + size, j : j + size]
            py = y[i : i + size, j : j + size]
            mx, my = np.sum(w * px), np.sum(w * py)
            vx = np.sum(w * (px - mx) ** 2)
            vy = np.sum(w * (py - my) ** 2)
            cov = np.sum(w * (px - mx) * (py - my))
            values.append(
                ((2 * mx * my + c1) * (2 * cov + c2))
                / ((mx**2 + my**2 + c1) * (vx + vy + c2))
            )
    return float(np.mean(values))


def multilinear_reference(
    table: npt.ArrayLike, resolution: int, point: Sequence[float]
) -> List[mpmath.mpf]:
    """Interpolated features of `point` in the unit cube, from a vertex table
    laid out with the first axis varying fastest."""
    feats: Array = np.asarray(table, dtype=np.float64)
    dim = len(point)
    x = [min(max(_mpf(c), 0), 1) * resolution for c in point]
    base = [min(int(mpmath.floor(c)), resolution - 1) for c in x]
    frac = [c - b for c, b in zip(x, base)]

    out = [mpmath.mpf(0)] * feats.shape[1]
    for offset in itertools.product((0, 1), repeat=dim):
        weight = mpmath.mpf(1)
        index = 0
        for axis in range(dim):
            weight *= frac[axis] if offset[axis] else 1 - frac[axis]
            index += (base[axis] + offset[axis]) * (resolution + 1) ** axis
        out = [o + weight * _mpf(f) for o, f in zip(out, feats[index])]
    return out


def interlevel_reference(
    fine_edges: Sequence[float],
    fine_weights: Sequence[float],
    prop_edges: Sequence[float],
    prop_weights: Sequence[float],
    eps: float = 1e-7,
) -> mpmath.mpf:
    """Upper-bound penalty of one ray, overlaps found by brute force."""
    total = mpmath.mpf(0)
    for i, w in enumerate(fine_weights):
        lo, hi = fine_edges[i], fine_edges[i + 1]
        bound = mpmath.fsum(
            _mpf(q)
            for j, q in enumerate(prop_weights)
            if min(hi, prop_edges[j + 1]) > max(lo, prop_edges[j])
        )
        excess = max(_mpf(w) - bound, 0)
        total += excess**2 / (bound + _mpf(eps))
    return total
