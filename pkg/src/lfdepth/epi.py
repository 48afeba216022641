"""Epipolar-plane estimator: edge gating, kernel density scoring, fine-to-coarse fill."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .core import (
    ConfidenceMap,
    DisparityMap,
    LightField,
    clamp_window,
    parallel_map,
    pyramid_down_lightfield,
    sample_disparities,
    sample_shifted,
    upsample_disparity,
)
from .refine import fill_nearest, median_filter_3x3

KERNELS = ("triangular", "paper-literal")


@dataclass(frozen=True)
class EpiParams:
    """Parameters of the EPI estimator.

    ``kernel="paper-literal"`` uses ``K(x) = 1 - h/|x|`` for ``|x| >= h``
    (zero otherwise), which rewards samples far from the mode; it exists for
    comparison only.  ``init`` picks the mean-shift starting point: the
    reference-view radiance or the mean of the samples.
    """

    edge_rows: int = 3
    edge_cols: int = 7
    edge_threshold_level0: float = 0.05
    edge_threshold_coarse: float = 0.1
    bandwidth: float = 0.1
    depth_conf_epsilon: float = 0.03
    n_disparities: int = 11
    meanshift_max_iters: int = 20
    meanshift_tol: float = 1e-3
    min_pyramid_extent: int = 10
    kernel: str = "triangular"
    init: str = "center"

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be > 0")
        if not self.depth_conf_epsilon > 0:
            raise ValueError("depth_conf_epsilon must be > 0")
        if not (self.edge_threshold_level0 > 0 and self.edge_threshold_coarse > 0):
            raise ValueError("edge thresholds must be > 0")
        if self.min_pyramid_extent < 2:
            raise ValueError("min_pyramid_extent must be >= 2")
        if self.edge_rows < 1 or self.edge_cols < 1 or self.edge_rows % 2 == 0 or self.edge_cols % 2 == 0:
            raise ValueError("edge window sides must be odd and positive")
        if self.n_disparities < 2:
            raise ValueError("n_disparities must be >= 2")
        if self.kernel not in KERNELS:
            raise ValueError(f"kernel must be one of {KERNELS}")
        if self.init not in ("center", "mean"):
            raise ValueError("init must be 'center' or 'mean'")

    def edge_threshold(self, level: int) -> float:
        return self.edge_threshold_level0 if level == 0 else self.edge_threshold_coarse


def kernel(x: np.ndarray, h: float, variant: str = "triangular") -> np.ndarray:
    """Kernel over norms ``x >= 0``; the default is ``max(0, 1 - x/h)``."""
    x = np.asarray(x, dtype=np.float64)
    if variant == "triangular":
        return np.maximum(0.0, 1.0 - x / h)
    with np.errstate(divide="ignore"):
        ratio = np.where(x > 0, h / np.where(x > 0, x, 1.0), np.inf)
    return np.where(ratio <= 1.0, 1.0 - ratio, 0.0)


def edge_confidence(img: np.ndarray, params: EpiParams | None = None) -> ConfidenceMap:
    """Sum of ``|I(p) - I(q)|`` over a clamped rows x cols window around ``p``.

    Colour images use the Euclidean norm of the RGB difference.
    """
    params = params or EpiParams()
    img = np.asarray(img, dtype=np.float64)
    total = np.zeros(img.shape[:2])
    for _, _, shifted in clamp_window(img, params.edge_rows // 2, params.edge_cols // 2):
        diff = img - shifted
        if diff.ndim == 3:
            total += np.sqrt(np.sum(diff * diff, axis=2))
        else:
            total += np.abs(diff)
    return ConfidenceMap(total)


def _sample_point(img: np.ndarray, x: int, y: int, sx: float, sy: float) -> np.ndarray:
    """``core.sample_shifted(img, sx, sy)[y, x]`` with identical arithmetic."""
    h, w = img.shape[:2]
    px = min(max(x + sx, 0.0), w - 1.0)
    py = min(max(y + sy, 0.0), h - 1.0)
    x0, y0 = math.floor(px), math.floor(py)
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = px - x0, py - y0
    top = img[y0, x0] + fx * (img[y0, x1] - img[y0, x0])
    bottom = img[y1, x0] + fx * (img[y1, x1] - img[y1, x0])
    return top + fy * (bottom - top)


def sample_radiances(lf: LightField, x: int, y: int, d: float) -> np.ndarray:
    """Radiances along the EPI line of slope ``d`` through pixel ``(x, y)``.

    One sample per view, row-major over ``(v, u)``, taken at
    ``(x + (cu - u) d, y + (cv - v) d)`` with bilinear clamp.  Shape is
    ``(n_views,)`` for grey fields and ``(n_views, 3)`` for colour.
    """
    if not np.isfinite(d):
        raise ValueError("disparity must be finite")
    out = []
    for v in range(lf.n_v):
        for u in range(lf.n_u):
            img = lf.data[:, :, v, u]
            out.append(_sample_point(img, x, y, (lf.center_u - u) * d, (lf.center_v - v) * d))
    return np.array(out)


def _norm(diff: np.ndarray) -> np.ndarray:
    if diff.shape[-1] == 1:
        return np.abs(diff[..., 0])
    return np.sqrt(np.sum(diff * diff, axis=-1))


def mean_shift_scores(
    samples: np.ndarray,
    init: np.ndarray,
    h: float,
    max_iters: int = 20,
    tol: float = 1e-3,
    variant: str = "triangular",
) -> tuple[np.ndarray, np.ndarray]:
    """Batched mean shift in numpy.  ``samples`` is ``(N, P, C)``, ``init`` is ``(P, C)``.

    Returns ``(S, mode)`` with ``S`` of shape ``(P,)``.  A pixel stops updating
    once its step is below ``tol``, so its result never depends on the rest of
    the batch.  If every kernel weight is zero the mode is left unchanged.
    This is the reference for the compiled per-pixel loop used by the
    estimator.
    """
    mode = np.array(init, dtype=np.float64)
    active = np.arange(mode.shape[0])
    for _ in range(max_iters):
        if active.size == 0:
            break
        r = samples[:, active]
        w = kernel(_norm(r - mode[active]), h, variant)
        sw = w.sum(axis=0)
        # shift form: an exact fixed point when all samples equal the mode
        shift = np.einsum("np,npc->pc", w, r - mode[active]) / np.where(sw > 0, sw, 1.0)[:, None]
        new = np.where((sw > 0)[:, None], mode[active] + shift, mode[active])
        step = _norm(new - mode[active])
        mode[active] = new
        active = active[step >= tol]
    score = kernel(_norm(samples - mode), h, variant).mean(axis=0)
    return score, mode


@numba.njit(cache=True, inline="always")
def _kernel_scalar(x, h, literal):
    if not literal:
        return max(0.0, 1.0 - x / h)
    if x <= 0.0 or h / x > 1.0:
        return 0.0
    return 1.0 - h / x


@numba.njit(cache=True, inline="always")
def _dist(samples, p, n, mode):
    c = samples.shape[2]
    if c == 1:
        return abs(samples[p, n, 0] - mode[0])
    acc = 0.0
    for k in range(c):
        t = samples[p, n, k] - mode[k]
        acc += t * t
    return math.sqrt(acc)


@numba.njit(cache=True, nogil=True)
def _mean_shift_compiled(samples, init, h, max_iters, tol, literal):
    """Per-pixel loop over pixel-major samples ``(P, N, C)``."""
    n_p, n_s, c = samples.shape
    scores = np.empty(n_p)
    modes = init.copy()
    new = np.empty(c)
    for p in range(n_p):
        mode = modes[p]
        for _ in range(max_iters):
            sw = 0.0
            for k in range(c):
                new[k] = 0.0
            for n in range(n_s):
                w = _kernel_scalar(_dist(samples, p, n, mode), h, literal)
                sw += w
                for k in range(c):
                    new[k] += w * (samples[p, n, k] - mode[k])
            if sw <= 0.0:
                break
            step = 0.0
            for k in range(c):
                t = new[k] / sw
                step += t * t
                mode[k] += t
            if math.sqrt(step) < tol:
                break
        acc = 0.0
        for n in range(n_s):
            acc += _kernel_scalar(_dist(samples, p, n, mode), h, literal)
        scores[p] = acc / n_s
    return scores, modes


@numba.njit(cache=True, nogil=True)
def _epi_scores_gray(stack, gate, d, h, max_iters, tol, literal, init_center):
    """Fused sampling + mean shift for grey fields, one disparity hypothesis.

    ``stack`` is ``(n_v, n_u, H, W)`` and ``gate`` an ``(H, W)`` mask; scores
    outside the gate are zero.  Samples use the same clamp and interpolation
    arithmetic as ``core.sample_shifted``.  Each image row is sampled densely
    for every view (contiguous loads), then mean shift runs at its gated
    pixels.
    """
    n_v, n_u, hgt, wid = stack.shape
    cu, cv = n_u // 2, n_v // 2
    n_s = n_v * n_u
    buf = np.empty((n_s, wid))
    scores = np.zeros((hgt, wid))
    inv_h = 1.0 / h
    # column taps per view; the shift is constant within a view
    cx0 = np.empty((n_u, wid), np.int64)
    cx1 = np.empty((n_u, wid), np.int64)
    cfx = np.empty((n_u, wid))
    for u in range(n_u):
        sx = (cu - u) * d
        for x in range(wid):
            px = min(max(x + sx, 0.0), wid - 1.0)
            x0 = int(math.floor(px))
            cx0[u, x] = x0
            cx1[u, x] = min(x0 + 1, wid - 1)
            cfx[u, x] = px - x0
    for y in range(hgt):
        active = False
        for x in range(wid):
            if gate[y, x]:
                active = True
                break
        if not active:
            continue
        k = 0
        for v in range(n_v):
            py = min(max(y + (cv - v) * d, 0.0), hgt - 1.0)
            y0 = int(math.floor(py))
            y1 = min(y0 + 1, hgt - 1)
            fy = py - y0
            for u in range(n_u):
                r0 = stack[v, u, y0]
                r1 = stack[v, u, y1]
                a0 = cx0[u]
                a1 = cx1[u]
                f = cfx[u]
                out = buf[k]
                for x in range(wid):
                    i0 = a0[x]
                    i1 = a1[x]
                    top = r0[i0] + f[x] * (r0[i1] - r0[i0])
                    bottom = r1[i0] + f[x] * (r1[i1] - r1[i0])
                    out[x] = top + fy * (bottom - top)
                k += 1
        for x in range(wid):
            if not gate[y, x]:
                continue
            if init_center:
                m = stack[cv, cu, y, x]
            else:
                m = 0.0
                for n in range(n_s):
                    m += buf[n, x]
                m /= n_s
            for _ in range(max_iters):
                sw = 0.0
                swr = 0.0
                for n in range(n_s):
                    r = buf[n, x]
                    if literal:
                        w = _kernel_scalar(abs(r - m), h, True)
                    else:
                        w = max(0.0, 1.0 - abs(r - m) * inv_h)
                    sw += w
                    swr += w * (r - m)
                if sw <= 0.0:
                    break
                shift = swr / sw
                step = abs(shift)
                m += shift
                if step < tol:
                    break
            acc = 0.0
            for n in range(n_s):
                if literal:
                    acc += _kernel_scalar(abs(buf[n, x] - m), h, True)
                else:
                    acc += max(0.0, 1.0 - abs(buf[n, x] - m) * inv_h)
            scores[y, x] = acc / n_s
    return scores


def density_score(
    radiances: np.ndarray,
    h: float = 0.1,
    init: float | np.ndarray | None = None,
    max_iters: int = 20,
    tol: float = 1e-3,
    variant: str = "triangular",
) -> tuple[float, float | np.ndarray]:
    """Colour density score ``S`` and converged mode of one radiance set.

    ``init`` defaults to the mean of the samples.
    """
    r = np.asarray(radiances, dtype=np.float64)
    if r.size == 0:
        raise ValueError("need at least one radiance sample")
    scalar = r.ndim == 1
    r = r.reshape(r.shape[0], 1, -1)
    start = r.mean(axis=0) if init is None else np.asarray(init, dtype=np.float64).reshape(1, -1)
    score, mode = mean_shift_scores(r, start, h, max_iters, tol, variant)
    m = mode[0, 0] if scalar else mode[0]
    return float(score[0]), (float(m) if scalar else m)


def estimate_epi_level(
    lf: LightField,
    disparities: np.ndarray,
    params: EpiParams | None = None,
    level: int = 0,
    threads: int = 1,
) -> tuple[DisparityMap, ConfidenceMap]:
    """Score every disparity hypothesis at edge-gated pixels and keep the confident ones.

    Returns the 3x3-median-filtered disparity map (valid only where the depth
    confidence exceeds epsilon) and the depth confidence map, which is zero
    at gated-out pixels.
    """
    params = params or EpiParams()
    disparities = np.asarray(disparities, dtype=np.float64)
    h, w = lf.height, lf.width
    cu, cv = lf.center_u, lf.center_v
    stack = lf.views_stack()
    if stack.ndim == 4:
        stack = stack[..., None]
    center = stack[cv, cu]
    ce = edge_confidence(center if lf.channels > 1 else center[..., 0], params).values

    gate = ce >= params.edge_threshold(level)
    idx = np.flatnonzero(gate)
    cd = np.zeros((h, w))
    if idx.size == 0:
        return DisparityMap.invalid(h, w), ConfidenceMap(cd)

    center_px = center.reshape(h * w, -1)[idx]
    gy, gx = np.divmod(idx, w)

    def scores_for(d: float) -> np.ndarray:
        if lf.channels == 1:
            return _epi_scores_gray(
                stack[..., 0],
                gate,
                d,
                params.bandwidth,
                params.meanshift_max_iters,
                params.meanshift_tol,
                params.kernel == "paper-literal",
                params.init == "center",
            )[gy, gx]
        samples = np.empty((idx.size, lf.n_views, center_px.shape[1]))
        n = 0
        for v in range(lf.n_v):
            for u in range(lf.n_u):
                view = sample_shifted(stack[v, u], (cu - u) * d, (cv - v) * d)
                samples[:, n] = view.reshape(h * w, -1)[idx]
                n += 1
        init = center_px if params.init == "center" else samples.mean(axis=1)
        s, _ = _mean_shift_compiled(
            samples,
            np.ascontiguousarray(init),
            params.bandwidth,
            params.meanshift_max_iters,
            params.meanshift_tol,
            params.kernel == "paper-literal",
        )
        return s

    scores = np.stack(parallel_map(scores_for, [float(d) for d in disparities], threads))
    best = np.argmax(scores, axis=0)
    contrast = np.abs(scores.max(axis=0) - scores.mean(axis=0))
    conf = ce.reshape(-1)[idx] * contrast
    cd.reshape(-1)[idx] = conf

    values = np.full(h * w, np.nan)
    keep = conf > params.depth_conf_epsilon
    values[idx[keep]] = disparities[best[keep]]
    values = values.reshape(h, w)
    valid = np.isfinite(values)
    raw = DisparityMap(values, valid)
    # median smooths confident values; it does not promote rejected pixels
    smoothed = median_filter_3x3(raw)
    return DisparityMap(np.where(valid, smoothed.values, np.nan), valid), ConfidenceMap(cd)


def warmup() -> None:
    """Compile the kernels on a tiny field so later timings exclude JIT cost."""
    tiny = LightField(np.full((4, 4, 3, 3), 0.5))
    estimate_epi_level(tiny, np.array([0.0, 1.0]), EpiParams(edge_threshold_level0=1e-9))
    _mean_shift_compiled(np.zeros((1, 2, 3)), np.zeros((1, 3)), 0.1, 2, 1e-4, False)


def merge_upward(finer: DisparityMap, coarser: DisparityMap) -> DisparityMap:
    """Upsample ``coarser`` to ``finer``'s size and use it only where ``finer`` is invalid."""
    fh, fw = finer.shape
    up = upsample_disparity(coarser, fw, fh, scale=2.0)
    values = np.where(finer.valid, finer.values, up.values)
    return DisparityMap(values, finer.valid | up.valid)


def fine_to_coarse(
    lf: LightField,
    params: EpiParams | None = None,
    threads: int = 1,
    max_levels: int | None = None,
    levels_out: list | None = None,
) -> DisparityMap:
    """Estimate at full resolution, fill unresolved pixels from coarser levels.

    Each coarser level blurs and halves every view (disparities halve too)
    and is only built while its smaller side stays >= ``min_pyramid_extent``.
    Coarse results are merged upward, only into pixels that are still invalid
    at the finer level.  Leftover holes take the nearest valid value and a
    final 3x3 median is applied.  ``levels_out`` receives the per-level maps.
    """
    params = params or EpiParams()
    results: list[DisparityMap] = []
    cur = lf
    level = 0
    while True:
        disp = sample_disparities(cur.meta.disparity_min, cur.meta.disparity_max, params.n_disparities)
        dmap, _ = estimate_epi_level(cur, disp, params, level, threads)
        results.append(dmap)
        if dmap.valid.all() or (max_levels is not None and level + 1 >= max_levels):
            break
        if min(cur.height, cur.width) < 2:
            break
        nxt = pyramid_down_lightfield(cur)
        if min(nxt.height, nxt.width) < params.min_pyramid_extent:
            break
        cur = nxt
        level += 1

    if levels_out is not None:
        levels_out.extend(results)

    merged = results[-1]
    for finer in reversed(results[:-1]):
        merged = merge_upward(finer, merged)

    out = median_filter_3x3(fill_nearest(merged))
    if not out.valid.any():
        return out
    values = np.clip(out.values, lf.meta.disparity_min, lf.meta.disparity_max)
    return DisparityMap(values, out.valid)
