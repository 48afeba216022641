"""Post-processing filters, weighted fusion and Charbonnier energy refinement."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import LinearOperator, cg

from .core import (
    ConfidenceMap,
    DisparityMap,
    LightField,
    clamp_window,
    pyramid_down,
    upsample_disparity,
)


def median_filter_3x3(d: DisparityMap) -> DisparityMap:
    """Median over the valid samples of the clamped 3x3 window.

    A pixel comes out valid when at least one sample in its window is valid,
    so isolated holes get filled by their neighbours.
    """
    values = np.where(d.valid, d.values, np.nan)
    stack = np.stack([s for _, _, s in clamp_window(values, 1, 1)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        med = np.nanmedian(stack, axis=0)
    return DisparityMap(med, np.isfinite(med))


def _guide_distance_sq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a - b
    if diff.ndim == 3:
        return np.sum(diff * diff, axis=2)
    return diff * diff


def bilateral_filter(
    d: DisparityMap,
    guide: np.ndarray,
    sigma_s: float,
    sigma_r: float,
    radius: int | None = None,
) -> DisparityMap:
    """Joint bilateral filter of ``d`` guided by ``guide`` (grey or RGB).

    Weights are ``exp(-|dp|^2 / 2 sigma_s^2) * exp(-|g(p) - g(q)|^2 / 2 sigma_r^2)``
    over valid neighbours in a clamped ``(2r+1)^2`` window, ``r`` defaulting
    to ``ceil(2 sigma_s)``.  Invalid pixels take the weighted mean when any
    weight is positive.
    """
    if not (sigma_s > 0 and sigma_r > 0):
        raise ValueError("sigma_s and sigma_r must be > 0")
    if radius is None:
        radius = int(math.ceil(2.0 * sigma_s))
    guide = np.asarray(guide, dtype=np.float64)
    values = d.filled(0.0)
    validf = d.valid.astype(np.float64)

    num = np.zeros(d.shape)
    den = np.zeros(d.shape)
    windows = zip(
        clamp_window(values, radius, radius),
        clamp_window(validf, radius, radius),
        clamp_window(guide, radius, radius),
    )
    for (dy, dx, vals), (_, _, ok), (_, _, g) in windows:
        spatial = math.exp(-(dx * dx + dy * dy) / (2.0 * sigma_s * sigma_s))
        if math.isinf(sigma_r):
            rng = 1.0
        else:
            rng = np.exp(-_guide_distance_sq(g, guide) / (2.0 * sigma_r * sigma_r))
        w = spatial * rng * ok
        num += w * vals
        den += w
    valid = den > 0
    out = np.where(valid, num / np.where(valid, den, 1.0), np.nan)
    return DisparityMap(out, valid)


@dataclass(frozen=True)
class FusionWeights:
    """Global weight per estimator, optionally modulated by a confidence map."""

    weights: Sequence[float]
    confidences: Sequence[ConfidenceMap | None] | None = None

    def __post_init__(self):
        if any(w < 0 for w in self.weights):
            raise ValueError("fusion weights must be >= 0")
        if self.confidences is not None and len(self.confidences) != len(self.weights):
            raise ValueError("one confidence entry per weight required")


def fuse_weighted(maps: Sequence[DisparityMap], weights: FusionWeights) -> DisparityMap:
    """Per-pixel weighted mean over the estimators valid at that pixel."""
    if not maps:
        raise ValueError("nothing to fuse")
    if len(maps) != len(weights.weights):
        raise ValueError(f"{len(maps)} maps but {len(weights.weights)} weights")
    shape = maps[0].shape
    for m in maps:
        if m.shape != shape:
            raise ValueError(f"dimension mismatch: {m.shape} vs {shape}")
    num = np.zeros(shape)
    den = np.zeros(shape)
    for i, (m, w) in enumerate(zip(maps, weights.weights)):
        wmap = np.full(shape, float(w))
        if weights.confidences is not None and weights.confidences[i] is not None:
            wmap = wmap * weights.confidences[i].values
        wmap = np.where(m.valid, wmap, 0.0)
        num += wmap * m.filled(0.0)
        den += wmap
    valid = den > 0
    out = np.where(valid, num / np.where(valid, den, 1.0), np.nan)
    if np.any(valid):
        # keep rounding inside the input envelope
        stack = np.stack([np.where(m.valid, m.values, np.nan) for m in maps])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            out = np.clip(out, np.nanmin(stack, axis=0), np.nanmax(stack, axis=0))
    return DisparityMap(out, valid)


def fill_nearest(d: DisparityMap) -> DisparityMap:
    """Fill invalid pixels from the nearest valid one (Euclidean distance)."""
    if d.valid.all() or not d.valid.any():
        return d
    _, (iy, ix) = ndimage.distance_transform_edt(~d.valid, return_indices=True)
    values = d.values[iy, ix]
    return DisparityMap(values, np.ones(d.shape, bool))


# -- energy refinement -------------------------------------------------------


def charbonnier(t: np.ndarray, eps: float) -> np.ndarray:
    return np.sqrt(t * t + eps * eps)


def charbonnier_grad(t: np.ndarray, eps: float) -> np.ndarray:
    return t / np.sqrt(t * t + eps * eps)


@dataclass(frozen=True)
class EnergyParams:
    lam: float = 0.1
    charbonnier_eps: float = 1e-3
    step_size: float = 0.5
    max_iters: int = 100
    n_levels: int = 3
    max_backtracks: int = 40
    bilateral_sigma_s: float = 1.0
    bilateral_sigma_r: float = 0.1

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.n_levels < 1:
            raise ValueError("n_levels must be >= 1")
        if not self.charbonnier_eps > 0:
            raise ValueError("charbonnier_eps must be > 0")


class _EnergyProblem:
    """E(D) = sum rho(C - V(p - a D)) + lam * sum_pairs w_pq rho(D_p - D_q).

    ``a`` is the unit angular offset of the neighbour view; the warp moves
    along x for a horizontal neighbour and along y for a vertical one.
    """

    def __init__(self, center, neighbor, axis, lam, eps, lo, hi):
        self.center = center
        self.neighbor = neighbor
        # 1 for x, 0 for y, None for no data term
        if axis is not None and center.shape[axis] < 2:
            axis = None
        self.axis = axis
        self.lam = lam
        self.eps = eps
        self.lo, self.hi = lo, hi
        gy, gx = np.gradient(center) if min(center.shape) >= 2 else (np.zeros_like(center),) * 2
        mag = np.hypot(gx, gy)
        tau = mag.mean()
        w = np.exp(-mag / tau) if tau > 0 else np.ones_like(mag)
        self.w_right = 0.5 * (w[:, :-1] + w[:, 1:])
        self.w_down = 0.5 * (w[:-1, :] + w[1:, :])

    def _warp(self, D):
        """Neighbour sampled at ``p - D`` along the warp axis, plus d/dD of it."""
        img = self.neighbor if self.axis == 1 else self.neighbor.T
        disp = D if self.axis == 1 else D.T
        h, w = img.shape
        pos = np.arange(w)[None, :] - disp
        inside = (pos >= 0) & (pos <= w - 1)
        pos = np.clip(pos, 0.0, w - 1.0)
        i0 = np.minimum(np.floor(pos).astype(np.intp), w - 2)
        f = pos - i0
        rows = np.arange(h)[:, None]
        a = img[rows, i0]
        b = img[rows, i0 + 1]
        val = a + f * (b - a)
        # d/dD of V(p - D) is -(b - a); zero where the sample is clamped
        dval = np.where(inside, -(b - a), 0.0)
        if self.axis == 1:
            return val, dval
        return val.T, dval.T

    def energy(self, D):
        e = 0.0
        if self.axis is not None:
            val, _ = self._warp(D)
            e += charbonnier(self.center - val, self.eps).sum()
        if self.lam > 0:
            e += self.lam * (self.w_right * charbonnier(D[:, :-1] - D[:, 1:], self.eps)).sum()
            e += self.lam * (self.w_down * charbonnier(D[:-1, :] - D[1:, :], self.eps)).sum()
        return float(e)

    def gradient_and_curvature(self, D):
        """Exact gradient and the sparse IRLS majoriser of the Hessian.

        The majoriser is the data curvature on the diagonal plus a graph
        Laplacian whose edge weights are ``lam * w_pq / rho(D_p - D_q)``.
        """
        h, w = D.shape
        n = h * w
        g = np.zeros_like(D)
        diag = np.zeros_like(D)
        if self.axis is not None:
            val, dval = self._warp(D)
            r = self.center - val
            rho = charbonnier(r, self.eps)
            # dr/dD = -dval
            g += (r / rho) * (-dval)
            diag += dval * dval / rho
        rows, cols, vals = [], [], []
        if self.lam > 0:
            idx = np.arange(n).reshape(h, w)
            for t, wt, sl_p, sl_q in (
                (D[:, :-1] - D[:, 1:], self.w_right, np.s_[:, :-1], np.s_[:, 1:]),
                (D[:-1, :] - D[1:, :], self.w_down, np.s_[:-1, :], np.s_[1:, :]),
            ):
                rho = charbonnier(t, self.eps)
                gp = self.lam * wt * t / rho
                hp = self.lam * wt / rho
                g[sl_p] += gp
                g[sl_q] -= gp
                diag[sl_p] += hp
                diag[sl_q] += hp
                p, q = idx[sl_p].ravel(), idx[sl_q].ravel()
                rows += [p, q]
                cols += [q, p]
                vals += [-hp.ravel(), -hp.ravel()]
        # a small ridge keeps the system definite where no term has curvature
        ridge = 1e-9 * max(float(diag.mean()), 1e-12)
        rows.append(np.arange(n))
        cols.append(np.arange(n))
        vals.append(diag.ravel() + ridge)
        H = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
        return g, H


def _solve_direction(H: sparse.csr_matrix, g: np.ndarray) -> np.ndarray:
    """Approximate ``H^-1 g`` by Jacobi-preconditioned conjugate gradients.

    Started from zero, every CG iterate of a definite system has a positive
    inner product with ``g``, so the result is always a descent direction.
    """
    inv_diag = 1.0 / H.diagonal()
    precond = LinearOperator(H.shape, matvec=lambda x: inv_diag * x)
    x, _ = cg(H, g, rtol=1e-2, maxiter=60, M=precond)
    return x


def _descend(problem: _EnergyProblem, D: np.ndarray, params: EnergyParams) -> tuple[np.ndarray, list[float]]:
    """Backtracking descent along the majoriser-preconditioned gradient."""
    D = np.clip(D, problem.lo, problem.hi)
    E = problem.energy(D)
    history = [E]
    step = params.step_size
    for _ in range(params.max_iters):
        g, H = problem.gradient_and_curvature(D)
        direction = _solve_direction(H, g.ravel()).reshape(D.shape)
        accepted = False
        for _ in range(params.max_backtracks):
            Dn = np.clip(D - step * direction, problem.lo, problem.hi)
            En = problem.energy(Dn)
            if En < E:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        converged = E - En <= 1e-13 * max(abs(E), 1.0)
        D, E = Dn, En
        history.append(E)
        step = min(step * 2.0, params.step_size)
        if converged:
            break
    return D, history


def _neighbor_view(lf: LightField) -> tuple[np.ndarray | None, int | None]:
    g = lf.gray()
    if lf.n_u > 1:
        return g.view(min(lf.center_u + 1, lf.n_u - 1), lf.center_v), 1
    if lf.n_v > 1:
        return g.view(lf.center_u, min(lf.center_v + 1, lf.n_v - 1)), 0
    return None, None


def energy_refine(
    d0: DisparityMap,
    lf: LightField,
    params: EnergyParams | None = None,
    trace: list | None = None,
) -> DisparityMap:
    """Minimise the photometric + edge-aware smoothness energy coarse to fine.

    ``d0`` should be dense; remaining holes are filled from the nearest valid
    pixel first.  At each level the solver starts from the fine initial map
    plus the upsampled correction found on the coarser level, provided that
    correction lowers the energy at this level.  The result is
    passed through a bilateral filter guided by the centre view and a 3x3
    median.  When ``trace`` is a list, the accepted energy sequence of every
    level is appended to it (coarsest first).
    """
    params = params or EnergyParams()
    d0 = fill_nearest(d0)
    if not d0.valid.any():
        return d0
    gray = lf.gray()
    center = gray.view(gray.center_u, gray.center_v)
    neighbor, axis = _neighbor_view(lf)
    if neighbor is None:
        neighbor = center

    centers, neighbors, inits = [center], [neighbor], [d0.values]
    for _ in range(params.n_levels - 1):
        if min(centers[-1].shape) < 8:
            break
        centers.append(pyramid_down(centers[-1]))
        neighbors.append(pyramid_down(neighbors[-1]))
        inits.append(pyramid_down(inits[-1]) * 0.5)

    correction = None
    D = None
    for level in range(len(centers) - 1, -1, -1):
        scale = 0.5**level
        lo, hi = sorted((lf.meta.disparity_min * scale, lf.meta.disparity_max * scale))
        init = np.clip(inits[level], lo, hi)
        problem = _EnergyProblem(centers[level], neighbors[level], axis, params.lam, params.charbonnier_eps, lo, hi)
        if correction is not None:
            h, w = init.shape
            up = upsample_disparity(DisparityMap.dense(correction), w, h, scale=2.0)
            corrected = np.clip(init + up.values, lo, hi)
            # the coarse estimate is only a proposal; keep it if it helps here
            if problem.energy(corrected) < problem.energy(init):
                init = corrected
        D, history = _descend(problem, init, params)
        if trace is not None:
            trace.append(history)
        correction = D - inits[level]

    out = DisparityMap.dense(D)
    guide = center
    out = bilateral_filter(out, guide, params.bilateral_sigma_s, params.bilateral_sigma_r)
    return median_filter_3x3(out)
