"""Plane sweeping: shear, variance cost volume, box aggregation, winner-take-all."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import CostVolume, DisparityMap, LightField, SceneMeta, parallel_map, sample_disparities, sample_shifted


@dataclass(frozen=True)
class SweepParams:
    n_disparities: int = 11
    disparity_min: float = -2.0
    disparity_max: float = 2.0
    box_radius: int = 1
    # exclude samples that fell outside the view instead of clamping them
    strict: bool = False

    def __post_init__(self):
        if self.n_disparities < 2:
            raise ValueError("n_disparities must be >= 2")
        if self.box_radius < 0:
            raise ValueError("box_radius must be >= 0")
        if not self.disparity_min < self.disparity_max:
            raise ValueError("disparity_min must be < disparity_max")

    @classmethod
    def for_scene(cls, meta: SceneMeta, n_disparities: int = 11, **kw) -> "SweepParams":
        return cls(n_disparities, meta.disparity_min, meta.disparity_max, **kw)

    @property
    def disparities(self) -> np.ndarray:
        return sample_disparities(self.disparity_min, self.disparity_max, self.n_disparities)


def _in_range(n: int, shift: float) -> np.ndarray:
    pos = np.arange(n) + shift
    return (pos >= 0) & (pos <= n - 1)


def variance_cost(stack: np.ndarray, d: float, strict: bool = False) -> np.ndarray:
    """Population variance across views after shearing by ``d``.

    ``stack`` is ``(n_v, n_u, H, W)``.  Views are visited u-major (outer loop
    over u, inner over v) in both the mean and the variance sums, which fixes
    the floating-point summation order.  Samples are taken relative to the
    centre view, which leaves the variance unchanged but makes it exactly zero
    whenever all samples agree.
    """
    n_v, n_u, h, w = stack.shape
    cu, cv = n_u // 2, n_v // 2
    ref = stack[cv, cu]
    samples = []
    masks = []
    total = np.zeros((h, w))
    count = np.zeros((h, w)) if strict else None
    for u in range(n_u):
        for v in range(n_v):
            sx = -(u - cu) * d
            sy = -(v - cv) * d
            s = sample_shifted(stack[v, u], sx, sy) - ref
            if strict:
                m = _in_range(h, sy)[:, None] & _in_range(w, sx)[None, :]
                s = np.where(m, s, 0.0)
                count += m
                masks.append(m)
            samples.append(s)
            total += s
    n = count if strict else float(n_u * n_v)
    mean = total / n
    acc = np.zeros((h, w))
    for i, s in enumerate(samples):
        diff = s - mean
        if strict:
            diff = np.where(masks[i], diff, 0.0)
        acc += diff * diff
    return acc / n


def build_cost_volume(lf: LightField, params: SweepParams | None = None, threads: int = 1) -> CostVolume:
    """Variance-across-views cost for each uniformly sampled disparity (luma)."""
    params = params or SweepParams.for_scene(lf.meta)
    stack = lf.gray().views_stack()
    disparities = params.disparities
    slices = parallel_map(lambda d: variance_cost(stack, float(d), params.strict), disparities, threads)
    return CostVolume(np.stack(slices, axis=2), disparities)


def box_filter_cost(cv: CostVolume, radius: int) -> CostVolume:
    """Mean over a ``(2r+1)^2`` window per slice with replicated borders."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return cv
    size = 2 * radius + 1
    out = ndimage.uniform_filter(cv.costs, size=(size, size, 1), mode="nearest")
    return CostVolume(np.maximum(out, 0.0), cv.disparities)


def select_disparity(cv: CostVolume) -> DisparityMap:
    """Per-pixel argmin; ties resolve to the smallest disparity index."""
    idx = np.argmin(cv.costs, axis=2)
    values = cv.disparities[idx]
    return DisparityMap(values, np.ones(values.shape, bool))


def estimate_sweep(lf: LightField, params: SweepParams | None = None, threads: int = 1) -> DisparityMap:
    params = params or SweepParams.for_scene(lf.meta)
    cv = build_cost_volume(lf, params, threads)
    return select_disparity(box_filter_cost(cv, params.box_radius))
