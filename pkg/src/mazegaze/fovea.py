"""Differentiable foveal input: exponential acuity mask plus pixel noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore
from .diffcore import ContractError, DValue

DEFAULT_TAU = 5.0
DEFAULT_NOISE_SIGMA = float(np.sqrt(0.05))
TAU_SWEEP = (8.0, 5.0, 3.33)


@dataclass(frozen=True)
class FoveaParams:
    tau: float = DEFAULT_TAU
    noise_sigma: float = DEFAULT_NOISE_SIGMA
    image_side: int = 39

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.noise_sigma >= 0:
            raise ValueError(f"noise_sigma must be non-negative, got {self.noise_sigma}")


def _masked(image: DValue, eye_pos: DValue, tau: float) -> DValue:
    img = image.data
    eye = eye_pos.data
    if not np.all(np.isfinite(eye)):
        raise ContractError(f"eye position must be finite, got {eye}")
    batched = img.ndim == 3
    if eye.shape != ((img.shape[0], 2) if batched else (2,)):
        raise diffcore.DimensionError(f"fovea: eye_pos {eye.shape} does not match image {img.shape}")
    h, w = img.shape[-2:]
    rows = np.arange(h, dtype=float)[:, None]
    cols = np.arange(w, dtype=float)[None, :]
    ex = eye[..., 0][..., None, None]
    ey = eye[..., 1][..., None, None]
    dx = cols - ex
    dy = rows - ey
    dist = np.sqrt(dx * dx + dy * dy)
    mask = np.exp(-dist / tau)
    out = img * mask

    def back(g):
        gm = g * out / tau
        safe = np.where(dist > 0, dist, 1.0)
        # d(mask)/d(eye) = mask / tau * (p - eye) / dist, zero at the cone tip
        ux = np.where(dist > 0, dx / safe, 0.0)
        uy = np.where(dist > 0, dy / safe, 0.0)
        geye = np.stack([(gm * ux).sum(axis=(-2, -1)), (gm * uy).sum(axis=(-2, -1))], axis=-1)
        return g * mask, geye

    return diffcore.record(out, (image, eye_pos), back, "fovea")


def mask_only(image: DValue, eye_pos: DValue, tau: float = DEFAULT_TAU) -> DValue:
    """``image * exp(-d / tau)`` with d the distance from each pixel center to the eye.

    Pixel centers sit at integer coordinates; ``eye_pos`` is ``(x, y)`` with x
    the column.  Accepts [H, W] with [2] or [B, H, W] with [B, 2].
    """
    return _masked(image, eye_pos, tau)


def apply_fovea(image: DValue, eye_pos: DValue, params: FoveaParams, rng: np.random.Generator) -> DValue:
    """Masked image plus fresh N(0, sigma^2) noise per pixel.

    The noise is a constant as far as gradients are concerned.
    """
    out = _masked(image, eye_pos, params.tau)
    if params.noise_sigma == 0:
        return out
    noise = DValue(rng.standard_normal(out.shape) * params.noise_sigma)
    return diffcore.add(out, noise)
