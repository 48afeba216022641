"""Light field containers and the numerical kernels shared by every estimator.

Index convention
----------------
Arrays are row-major and indexed ``(y, x, v, u)``: spatial row, spatial column,
vertical view index, horizontal view index.  Colour fields carry a trailing
channel axis, ``(y, x, v, u, c)``.  Formulas written as ``L(x, y, u, v)`` map to
``data[y, x, v, u]``.

Disparity sign
--------------
A fronto-parallel scene point with disparity ``d`` that sits at ``x`` in the
reference view appears at ``x - (u - center_u) * d`` in view ``u``; in other words
``L(x, y, u, v) = C(x + (u - cu) d, y + (v - cv) d)`` for the centre image ``C``.
Shearing by ``d`` undoes this motion, the LSG closed form returns ``d`` without a
sign flip, and EPI radiance samples taken at ``x + (cu - u) d`` line up.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np
from scipy import ndimage

LUMA_WEIGHTS = np.array([0.2126, 0.7152, 0.0722])

T = TypeVar("T")
R = TypeVar("R")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.flags.writeable:
        arr = arr.copy()
        arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SceneMeta:
    """Camera geometry and the disparity search range of a scene."""

    focal_length_px: float = 1.0
    baseline: float = 1.0
    disparity_min: float = -2.0
    disparity_max: float = 2.0
    name: str = "scene"

    def __post_init__(self):
        if not self.focal_length_px > 0:
            raise ValueError(f"focal_length_px must be > 0, got {self.focal_length_px}")
        if not self.baseline > 0:
            raise ValueError(f"baseline must be > 0, got {self.baseline}")
        if not self.disparity_min < self.disparity_max:
            raise ValueError(
                f"disparity_min ({self.disparity_min}) must be < disparity_max ({self.disparity_max})"
            )

    @property
    def disparity_span(self) -> float:
        return self.disparity_max - self.disparity_min

    def scaled(self, factor: float) -> "SceneMeta":
        """Meta for a resampled field: disparities scale with spatial resolution."""
        lo, hi = sorted((self.disparity_min * factor, self.disparity_max * factor))
        return replace(
            self,
            focal_length_px=self.focal_length_px * abs(factor),
            disparity_min=lo,
            disparity_max=hi,
        )


@dataclass(frozen=True, eq=False)
class LightField:
    """A 4D light field sampled on a regular ``n_v x n_u`` view grid.

    ``data`` is ``(height, width, n_v, n_u)`` for grayscale or
    ``(height, width, n_v, n_u, 3)`` for RGB, with radiances in ``[0, 1]``.
    The array is stored read-only.
    """

    data: np.ndarray
    meta: SceneMeta = field(default_factory=SceneMeta)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 5 and data.shape[-1] == 1:
            data = data[..., 0]
        if data.ndim not in (4, 5) or (data.ndim == 5 and data.shape[-1] != 3):
            raise ValueError(f"light field must be (H, W, V, U) or (H, W, V, U, 3), got {data.shape}")
        if min(data.shape[:4]) < 1:
            raise ValueError(f"empty light field dimension in {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("light field contains non-finite radiances")
        if data.size and (data.min() < 0.0 or data.max() > 1.0):
            raise ValueError("light field radiances must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def n_v(self) -> int:
        return self.data.shape[2]

    @property
    def n_u(self) -> int:
        return self.data.shape[3]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 4 else self.data.shape[4]

    @property
    def center_u(self) -> int:
        return self.n_u // 2

    @property
    def center_v(self) -> int:
        return self.n_v // 2

    @property
    def n_views(self) -> int:
        return self.n_u * self.n_v

    def view(self, u: int, v: int) -> np.ndarray:
        """Sub-aperture image at angular index ``(u, v)`` (a copy)."""
        return np.array(self.data[:, :, v, u])

    def gray(self) -> "LightField":
        """Luma version of the field; grayscale fields are returned unchanged."""
        if self.channels == 1:
            return self
        return LightField(np.clip(to_gray(self.data), 0.0, 1.0), self.meta)

    def views_stack(self) -> np.ndarray:
        """Contiguous ``(n_v, n_u, H, W[, C])`` copy, convenient for per-view work."""
        axes = (2, 3, 0, 1) if self.data.ndim == 4 else (2, 3, 0, 1, 4)
        return np.ascontiguousarray(self.data.transpose(axes))

    def with_data(self, data: np.ndarray, meta: SceneMeta | None = None) -> "LightField":
        return LightField(data, self.meta if meta is None else meta)


@dataclass(frozen=True, eq=False)
class DisparityMap:
    """Per-pixel disparity in pixels per angular step.

    Invalid pixels hold NaN in ``values`` and ``False`` in ``valid``.
    """

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if values.ndim != 2 or values.shape != valid.shape:
            raise ValueError(f"values {values.shape} and valid {valid.shape} must be equal 2D shapes")
        valid = valid & np.isfinite(values)
        values = np.where(valid, values, np.nan)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "valid", _frozen(valid))

    @classmethod
    def dense(cls, values: np.ndarray) -> "DisparityMap":
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.isfinite(values))

    @classmethod
    def invalid(cls, height: int, width: int) -> "DisparityMap":
        return cls(np.full((height, width), np.nan), np.zeros((height, width), bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def filled(self, fill: float = 0.0) -> np.ndarray:
        return np.where(self.valid, self.values, fill)


@dataclass(frozen=True, eq=False)
class CostVolume:
    """Matching cost per pixel and sampled disparity, shape ``(H, W, n_d)``."""

    costs: np.ndarray
    disparities: np.ndarray

    def __post_init__(self):
        costs = np.asarray(self.costs, dtype=np.float64)
        disp = np.asarray(self.disparities, dtype=np.float64)
        if costs.ndim != 3 or costs.shape[2] != disp.size:
            raise ValueError(f"costs {costs.shape} do not match {disp.size} disparities")
        if disp.size < 2 or np.any(np.diff(disp) <= 0):
            raise ValueError("need >= 2 strictly increasing disparities")
        if not np.all(np.isfinite(costs)) or np.any(costs < 0):
            raise ValueError("costs must be finite and non-negative")
        object.__setattr__(self, "costs", _frozen(costs))
        object.__setattr__(self, "disparities", _frozen(disp))


@dataclass(frozen=True, eq=False)
class ConfidenceMap:
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("confidence map must be 2D")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("confidence values must be finite and non-negative")
        object.__setattr__(self, "values", _frozen(values))


@dataclass(frozen=True, eq=False)
class GradientField:
    lx: np.ndarray
    ly: np.ndarray
    lu: np.ndarray
    lv: np.ndarray


def to_gray(arr: np.ndarray) -> np.ndarray:
    """Luma of an array with a trailing RGB axis."""
    arr = np.asarray(arr, dtype=np.float64)
    return arr[..., 0] * LUMA_WEIGHTS[0] + arr[..., 1] * LUMA_WEIGHTS[1] + arr[..., 2] * LUMA_WEIGHTS[2]


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> list[R]:
    """Ordered map over ``items``; ``threads`` of 0 means one per CPU.

    Each item must be independent, which keeps the results identical under any
    thread count.
    """
    items = list(items)
    if threads == 0:
        threads = os.cpu_count() or 1
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def center_view(lf: LightField) -> np.ndarray:
    return lf.view(lf.center_u, lf.center_v)


def gradients(lf: LightField) -> GradientField:
    """Central differences inside, one-sided at the boundary, on the luma field.

    A singleton angular axis gives a zero gradient along that axis.
    """
    if lf.width < 2 or lf.height < 2:
        raise ValueError(f"gradients need at least 2x2 spatial samples, got {lf.height}x{lf.width}")
    g = lf.gray().data

    def along(axis: int) -> np.ndarray:
        if g.shape[axis] < 2:
            return np.zeros_like(g)
        return np.gradient(g, axis=axis)

    return GradientField(lx=along(1), ly=along(0), lu=along(3), lv=along(2))


def _axis_taps(n: int, shift: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pos = np.clip(np.arange(n) + shift, 0.0, n - 1.0)
    i0 = np.floor(pos).astype(np.intp)
    i1 = np.minimum(i0 + 1, n - 1)
    return i0, i1, pos - i0


def sample_shifted(img: np.ndarray, sx: float, sy: float) -> np.ndarray:
    """Sample ``img`` at ``(x + sx, y + sy)`` bilinearly with clamp-to-edge.

    Interpolates along x first, then along y, as ``a + f * (b - a)``.  Extra
    trailing axes (colour channels) are carried along.
    """
    h, w = img.shape[:2]
    x0, x1, fx = _axis_taps(w, sx)
    y0, y1, fy = _axis_taps(h, sy)
    extra = (slice(None),) + (None,) * (img.ndim - 2)
    fx = fx[extra]
    fy = fy[(slice(None),) + (None,) * (img.ndim - 1)]
    a = img[:, x0]
    rows = a + fx * (img[:, x1] - a)
    top = rows[y0]
    return top + fy * (rows[y1] - top)


def shear(lf: LightField, d: float) -> LightField:
    """Refocus every view onto the reference plane of disparity ``d``.

    ``L_d(x, y, u, v) = L(x - (u - cu) d, y - (v - cv) d, u, v)``, so a scene at
    disparity ``d`` becomes identical in every view.
    """
    if not math.isfinite(d):
        raise ValueError(f"disparity must be finite, got {d}")
    if d == 0:
        return lf
    out = np.empty_like(lf.data)
    for v in range(lf.n_v):
        for u in range(lf.n_u):
            sx = -(u - lf.center_u) * d
            sy = -(v - lf.center_v) * d
            out[:, :, v, u] = sample_shifted(lf.data[:, :, v, u], sx, sy)
    return lf.with_data(np.clip(out, 0.0, 1.0))


def gaussian_kernel_1d(size: int = 7, sigma: float = math.sqrt(0.5)) -> np.ndarray:
    r = size // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def pyramid_down(img: np.ndarray) -> np.ndarray:
    """Blur with the normalised 7x7 Gaussian (sigma sqrt(0.5)) and keep even samples."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise ValueError(f"pyramid_down needs both dimensions >= 2, got {img.shape[:2]}")
    k = gaussian_kernel_1d()
    out = ndimage.correlate1d(img, k, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, k, axis=1, mode="reflect")
    return out[::2, ::2]


def pyramid_down_lightfield(lf: LightField) -> LightField:
    """Downsample every view spatially; disparities halve with the resolution."""
    stack = lf.views_stack()
    first = pyramid_down(stack[0, 0])
    out = np.empty((lf.n_v, lf.n_u) + first.shape, dtype=np.float64)
    for v in range(lf.n_v):
        for u in range(lf.n_u):
            out[v, u] = pyramid_down(stack[v, u])
    axes = (2, 3, 0, 1) if out.ndim == 4 else (2, 3, 0, 1, 4)
    return LightField(np.clip(out.transpose(axes), 0.0, 1.0), lf.meta.scaled(0.5))


def upsample_disparity(
    d: DisparityMap, target_w: int, target_h: int, scale: float | None = None
) -> DisparityMap:
    """Nearest-neighbour upsampling with disparity values multiplied by ``scale``.

    ``scale`` defaults to ``target_w / width``.  Pyramid code passes ``2.0``
    because ceil-rounded level sizes would otherwise give a slightly wrong factor.
    """
    h, w = d.shape
    if target_w < w or target_h < h:
        raise ValueError(f"target {target_h}x{target_w} smaller than source {h}x{w}")
    if scale is None:
        scale = target_w / w
    if (target_h, target_w) == (h, w) and scale == 1.0:
        return d
    ys = np.minimum((np.arange(target_h) * h) // target_h, h - 1)
    xs = np.minimum((np.arange(target_w) * w) // target_w, w - 1)
    valid = d.valid[np.ix_(ys, xs)]
    values = d.values[np.ix_(ys, xs)] * scale
    return DisparityMap(values, valid)


def sample_disparities(lo: float, hi: float, n: int) -> np.ndarray:
    """``n`` uniformly spaced hypotheses covering ``[lo, hi]`` inclusive."""
    if n < 2:
        raise ValueError(f"need at least 2 disparity samples, got {n}")
    return np.linspace(lo, hi, n)


def clamp_window(img: np.ndarray, radius_y: int, radius_x: int) -> Iterable[tuple[int, int, np.ndarray]]:
    """Yield ``(dy, dx, shifted)`` for every offset of a clamped window."""
    padded = np.pad(
        img,
        ((radius_y, radius_y), (radius_x, radius_x)) + ((0, 0),) * (img.ndim - 2),
        mode="edge",
    )
    h, w = img.shape[:2]
    for dy in range(-radius_y, radius_y + 1):
        for dx in range(-radius_x, radius_x + 1):
            yield dy, dx, padded[radius_y + dy : radius_y + dy + h, radius_x + dx : radius_x + dx + w]


__all__: Sequence[str] = [
    "ConfidenceMap",
    "CostVolume",
    "DisparityMap",
    "GradientField",
    "LightField",
    "SceneMeta",
    "center_view",
    "clamp_window",
    "gaussian_kernel_1d",
    "gradients",
    "parallel_map",
    "pyramid_down",
    "pyramid_down_lightfield",
    "sample_disparities",
    "sample_shifted",
    "shear",
    "to_gray",
    "upsample_disparity",
]
