"""
Per-wavelength classical volume rendering and the sampling losses.

Arrays are laid out (..., K samples, L wavelengths); deltas are (..., K).
"""

from __future__ import annotations


__all__ = [
    "RenderOutput",
    "composite",
    "composite_weights",
    "recon_loss",
    "interlevel_loss",
    "wavelength_penalty_check",
]

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import numpy.typing as npt

from hsnerf import autodiff as ad
from hsnerf.autodiff import Operand, Tensor
from hsnerf.errors import ShapeError
from hsnerf.numbers import Array, searchsorted_rows


INTERLEVEL_EPS = 1e-7


@dataclass(frozen=True)
class RenderOutput:
    pixel_spectrum: Tensor  # (..., L)
    weights: Tensor  # (..., K, L)
    accumulation: Tensor  # (..., L)
    depth: Optional[Tensor] = None  # (..., L)


def _as_tensor(x: Operand) -> Tensor:
    return x if isinstance(x, Tensor) else ad.constant(x)


def composite_weights(densities: Operand, deltas: npt.ArrayLike) -> Tensor:
    """w_i = T_i * alpha_i for densities (..., K[, L]) and deltas (..., K)."""
    sigma = _as_tensor(densities)
    delta = np.asarray(deltas, dtype=sigma.dtype)
    if np.any(delta < 0):
        raise ValueError("sample deltas must be non-negative")
    if np.any(sigma.data < 0):
        raise ValueError("densities must be non-negative")
    if sigma.shape[: delta.ndim] != delta.shape:
        raise ShapeError("composite", sigma.shape, delta.shape)
    axis = delta.ndim - 1
    if sigma.ndim > delta.ndim:
        delta = delta.reshape(delta.shape + (1,) * (sigma.ndim - delta.ndim))

    tau = sigma * delta
    alpha = 1.0 - ad.exp(-tau)
    transmittance = ad.exp(-ad.cumsum(tau, axis=axis, exclusive=True))
    return transmittance * alpha


def composite(
    densities: Operand,
    radiances: Operand,
    deltas: npt.ArrayLike,
    background: npt.ArrayLike,
    *,
    distances: Optional[npt.ArrayLike] = None,
) -> RenderOutput:
    """Composite (..., K, L) samples into (..., L) spectra over `background`.

    pixel = sum_i w_i c_i + (1 - sum_i w_i) * background, per wavelength.
    `distances` (..., K), when given, yields the expected termination depth.
    """
    sigma = _as_tensor(densities)
    color = _as_tensor(radiances)
    if sigma.shape != color.shape:
        raise ShapeError("composite", sigma.shape, color.shape)
    delta = np.asarray(deltas)
    if sigma.ndim != delta.ndim + 1:
        raise ShapeError("composite", sigma.shape, delta.shape)

    weights = composite_weights(sigma, delta)
    axis = delta.ndim - 1
    accumulation = ad.sum(weights, axis=axis)
    bg = np.asarray(background, dtype=sigma.dtype)
    pixel = ad.sum(weights * color, axis=axis) + (1.0 - accumulation) * bg

    depth = None
    if distances is not None:
        t = np.asarray(distances, dtype=sigma.dtype)[..., None]
        depth = ad.sum(weights * t, axis=axis)
    return RenderOutput(pixel, weights, accumulation, depth)


def recon_loss(predicted: Operand, target: Operand) -> Tensor:
    """Mean squared error over rays x sampled wavelengths."""
    return ad.mse(predicted, target)


def _overlap_bounds(
    fine_edges: Array, prop_edges: Array
) -> Tuple[Array, Array]:
    """Indices into the proposal's cumulative weights bracketing each fine
    bin: proposal bin j overlaps fine bin i iff it has positive-length
    intersection with it."""
    first = searchsorted_rows(prop_edges, fine_edges[:, :-1], "right") - 1
    last = searchsorted_rows(prop_edges, fine_edges[:, 1:], "left") - 1
    n_bins = prop_edges.shape[1] - 1
    first = np.clip(first, 0, n_bins)
    last = np.clip(last, -1, n_bins - 1)
    return first, last + 1


def interlevel_loss(
    fine_edges: npt.ArrayLike,
    fine_weights: Operand,
    prop_edges: npt.ArrayLike,
    prop_weights: Operand,
    *,
    tol: float = 1e-6,
) -> Tensor:
    """Upper-bound penalty of a proposal histogram against fine weights.

    For every fine bin, the bound is the summed proposal weight of the
    proposal bins overlapping it; the loss per ray is
    sum_i max(0, w_i - bound_i)^2 / (bound_i + eps), averaged over rays.
    Fine weights are detached: only the proposal receives gradients.
    """
    f_edges = np.atleast_2d(np.asarray(fine_edges, dtype=np.float64))
    p_edges = np.atleast_2d(np.asarray(prop_edges, dtype=np.float64))
    w_fine = ad.detach(_as_tensor(fine_weights)).data
    w_prop = _as_tensor(prop_weights)
    if w_prop.ndim == 1:
        w_prop = ad.reshape(w_prop, (1, -1))
    w_fine = np.atleast_2d(w_fine)

    if f_edges.shape[-1] != w_fine.shape[-1] + 1:
        raise ShapeError("interlevel_loss", f_edges.shape, w_fine.shape)
    if p_edges.shape[-1] != w_prop.shape[-1] + 1:
        raise ShapeError("interlevel_loss", p_edges.shape, w_prop.shape)
    if f_edges.shape[0] != p_edges.shape[0]:
        raise ShapeError("interlevel_loss", f_edges.shape, p_edges.shape)
    if np.any(f_edges[:, 0] < p_edges[:, 0] - tol) or np.any(
        f_edges[:, -1] > p_edges[:, -1] + tol
    ):
        raise ValueError(
            "fine and proposal histograms cover different ray intervals"
        )

    first, stop = _overlap_bounds(f_edges, p_edges)
    zeros = ad.constant(np.zeros((w_prop.shape[0], 1), dtype=w_prop.dtype))
    cum = ad.concat([zeros, ad.cumsum(w_prop, axis=-1)], axis=-1)
    bound = ad.take_along(cum, np.maximum(stop, first)) - ad.take_along(
        cum, first
    )

    excess = ad.relu(ad.constant(w_fine.astype(w_prop.dtype)) - bound)
    per_ray = ad.sum(excess * excess / (bound + INTERLEVEL_EPS), axis=-1)
    return ad.mean(per_ray)


def wavelength_penalty_check(
    fine_edges: npt.ArrayLike,
    fine_weights: Operand,
    prop_edges: npt.ArrayLike,
    prop_weights: Operand,
) -> Tuple[Array, Tensor]:
    """Interlevel loss of one shared proposal against every wavelength.

    `fine_weights` is (R, K, L). Returns the per-wavelength losses and their
    mean, the term that trains a wavelength-agnostic proposal.
    """
    w_fine = ad.detach(_as_tensor(fine_weights)).data
    if w_fine.ndim == 2:
        w_fine = w_fine[None]
    losses = [
        interlevel_loss(fine_edges, w_fine[..., j], prop_edges, prop_weights)
        for j in range(w_fine.shape[-1])
    ]
    values = np.array([loss.item() for loss in losses])
    total = losses[0]
    for loss in losses[1:]:
        total = total + loss
    return values, total / float(len(losses))
