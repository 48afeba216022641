"""Closed-form least-squares gradient (LSG) disparity estimator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import DisparityMap, LightField, gradients, parallel_map


@dataclass(frozen=True)
class LsgParams:
    """``denominator`` is ``"spatial"`` (sum of Lx^2 + Ly^2) or ``"angular"``
    (sum of Lu^2 + Lv^2, the variant printed in the pseudo-code listing, which
    returns 1/d on a pure ramp and exists only for comparison)."""

    window_radius: int = 1
    denom_epsilon: float = 1e-8
    denominator: str = "spatial"

    def __post_init__(self):
        if self.window_radius < 0:
            raise ValueError("window_radius must be >= 0")
        if not self.denom_epsilon > 0:
            raise ValueError("denom_epsilon must be > 0")
        if self.denominator not in ("spatial", "angular"):
            raise ValueError(f"unknown denominator {self.denominator!r}")


def _window_sum(img: np.ndarray, radius: int) -> np.ndarray:
    if radius == 0:
        return img
    size = 2 * radius + 1
    return ndimage.uniform_filter(img, size=size, mode="nearest") * (size * size)


def estimate_lsg(lf: LightField, params: LsgParams | None = None, threads: int = 1) -> DisparityMap:
    """Per-pixel ``d = sum(Lx Lu + Ly Lv) / sum(Lx^2 + Ly^2)``.

    Sums run over every view and over the ``(2r+1)^2`` spatial window.  Results
    are clamped to the scene's disparity range; pixels whose denominator falls
    below ``denom_epsilon`` are invalid.
    """
    params = params or LsgParams()
    g = gradients(lf)
    n_v, n_u = lf.n_v, lf.n_u

    def per_view(idx: int) -> tuple[np.ndarray, np.ndarray]:
        v, u = divmod(idx, n_u)
        lx, ly = g.lx[:, :, v, u], g.ly[:, :, v, u]
        lu, lv = g.lu[:, :, v, u], g.lv[:, :, v, u]
        num = lx * lu + ly * lv
        if params.denominator == "spatial":
            den = lx * lx + ly * ly
        else:
            den = lu * lu + lv * lv
        return num, den

    parts = parallel_map(per_view, range(n_v * n_u), threads)
    num = np.zeros((lf.height, lf.width))
    den = np.zeros((lf.height, lf.width))
    for n, d in parts:
        num += n
        den += d
    num = _window_sum(num, params.window_radius)
    den = _window_sum(den, params.window_radius)

    eps = params.denom_epsilon
    valid = den >= eps
    d = num / (den + eps)
    d = np.clip(d, lf.meta.disparity_min, lf.meta.disparity_max)
    return DisparityMap(np.where(valid, d, np.nan), valid)
