"""Independent scalar reference implementations used as test oracles."""

from __future__ import annotations

import math

import numpy as np


def bilinear_clamped(img: np.ndarray, x: float, y: float) -> float:
    """Scalar bilinear lookup with clamp-to-edge, x interpolated first."""
    h, w = img.shape
    px = min(max(x, 0.0), w - 1.0)
    py = min(max(y, 0.0), h - 1.0)
    x0, y0 = math.floor(px), math.floor(py)
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = px - x0, py - y0
    a, b = float(img[y0, x0]), float(img[y0, x1])
    c, d = float(img[y1, x0]), float(img[y1, x1])
    top = a + fx * (b - a)
    bottom = c + fx * (d - c)
    return top + fy * (bottom - top)


def naive_cost_volume(data: np.ndarray, disparities) -> np.ndarray:
    """Quadruple loop (pixel, disparity, u, v) population-variance cost.

    ``data`` is a grey ``(H, W, n_v, n_u)`` array.  Views are summed u-major,
    exactly as the fixed summation order prescribes, and taken relative to
    the centre view sample.
    """
    h, w, n_v, n_u = data.shape
    cu, cv = n_u // 2, n_v // 2
    n = n_u * n_v
    out = np.zeros((h, w, len(disparities)))
    for y in range(h):
        for x in range(w):
            for k, d in enumerate(disparities):
                ref = float(data[y, x, cv, cu])
                samples = []
                for u in range(n_u):
                    for v in range(n_v):
                        sx = -(u - cu) * d
                        sy = -(v - cv) * d
                        samples.append(bilinear_clamped(data[:, :, v, u], x + sx, y + sy) - ref)
                total = 0.0
                for s in samples:
                    total += s
                mean = total / n
                acc = 0.0
                for s in samples:
                    acc += (s - mean) * (s - mean)
                out[y, x, k] = acc / n
    return out


def triangular(x: float, h: float) -> float:
    return max(0.0, 1.0 - abs(x) / h)


def mean_shift_1d(samples, start: float, h: float, max_iters: int, tol: float) -> tuple[float, float]:
    """Scalar mean shift with the triangular kernel; returns (score, mode)."""
    m = start
    for _ in range(max_iters):
        w = [triangular(r - m, h) for r in samples]
        sw = sum(w)
        if sw <= 0:
            break
        shift = sum(wi * (r - m) for wi, r in zip(w, samples)) / sw
        m += shift
        step = abs(shift)
        if step < tol:
            break
    return sum(triangular(r - m, h) for r in samples) / len(samples), m
