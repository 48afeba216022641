"""Scene ingestion, PFM/PNG writers and the synthetic layered-scene generator."""

from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from PIL import Image

from .core import DisparityMap, LightField, SceneMeta

logger = logging.getLogger(__name__)

DEFAULT_PATTERN = "input_Cam{index:03d}.png"


class SceneConfigError(ValueError):
    """A scene config is malformed or inconsistent."""


class PFMError(ValueError):
    """A PFM file could not be parsed."""


@dataclass(frozen=True)
class SceneConfig:
    image_dir: Path
    n_u: int
    n_v: int
    meta: SceneMeta
    pattern: str = DEFAULT_PATTERN
    gt_path: Path | None = None

    def view_path(self, u: int, v: int) -> Path:
        index = v * self.n_u + u
        return self.image_dir / self.pattern.format(index=index, u=u, v=v)


class Scene(NamedTuple):
    lf: LightField
    meta: SceneMeta
    gt: DisparityMap | None


# -- key=value dialect -------------------------------------------------------


def parse_key_values(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SceneConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise SceneConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def format_key_values(items: dict[str, object], header: str | None = None) -> str:
    lines = [f"# {header}"] if header else []
    lines += [f"{k} = {v}" for k, v in items.items()]
    return "\n".join(lines) + "\n"


def read_scene_config(path: str | os.PathLike) -> SceneConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise
    kv = parse_key_values(text)
    try:
        n_u = int(kv.get("n_u", 9))
        n_v = int(kv.get("n_v", 9))
        meta = SceneMeta(
            focal_length_px=float(kv.get("focal_length_px", 1.0)),
            baseline=float(kv.get("baseline", 1.0)),
            disparity_min=float(kv.get("disp_min", -2.0)),
            disparity_max=float(kv.get("disp_max", 2.0)),
            name=kv.get("name", path.parent.name or "scene"),
        )
    except ValueError as exc:
        raise SceneConfigError(f"{path}: {exc}") from exc
    if n_u < 1 or n_v < 1:
        raise SceneConfigError(f"{path}: n_u and n_v must be >= 1")
    base = path.parent
    image_dir = base / kv.get("image_dir", ".")
    gt = kv.get("gt")
    return SceneConfig(
        image_dir=image_dir,
        n_u=n_u,
        n_v=n_v,
        meta=meta,
        pattern=kv.get("pattern", DEFAULT_PATTERN),
        gt_path=base / gt if gt else None,
    )


def write_scene_config(cfg: SceneConfig, path: str | os.PathLike) -> None:
    path = Path(path)
    items: dict[str, object] = {
        "name": cfg.meta.name,
        "n_u": cfg.n_u,
        "n_v": cfg.n_v,
        "focal_length_px": repr(cfg.meta.focal_length_px),
        "baseline": repr(cfg.meta.baseline),
        "disp_min": repr(cfg.meta.disparity_min),
        "disp_max": repr(cfg.meta.disparity_max),
        "pattern": cfg.pattern,
    }
    rel = os.path.relpath(cfg.image_dir, path.parent)
    if rel != ".":
        items["image_dir"] = rel
    if cfg.gt_path is not None:
        items["gt"] = os.path.relpath(cfg.gt_path, path.parent)
    path.write_text(format_key_values(items, "light field scene"), encoding="utf-8")


# -- images ------------------------------------------------------------------


def _read_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        elif im.mode == "L":
            arr = np.asarray(im, dtype=np.float64) / 255.0
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr


def load_lightfield(cfg: SceneConfig) -> Scene:
    """Load the ``n_v x n_u`` view grid described by ``cfg``.

    Views are read row-major by ``(v, u)``; 8-bit samples are divided by 255.
    Ground truth, when configured, is read from PFM; non-finite entries are
    treated as invalid.
    """
    views = []
    shape = None
    for v in range(cfg.n_v):
        for u in range(cfg.n_u):
            index = v * cfg.n_u + u
            path = cfg.view_path(u, v)
            if not path.is_file():
                raise FileNotFoundError(f"missing view {index} (u={u}, v={v}): {path}")
            try:
                img = _read_image(path)
            except (OSError, ValueError) as exc:
                raise OSError(f"unreadable view {index} (u={u}, v={v}): {path}: {exc}") from exc
            if shape is None:
                shape = img.shape
            elif img.shape != shape:
                raise SceneConfigError(
                    f"view {index} (u={u}, v={v}) has shape {img.shape}, expected {shape}"
                )
            views.append(img)
    stack = np.stack(views).reshape((cfg.n_v, cfg.n_u) + shape)
    axes = (2, 3, 0, 1) if stack.ndim == 4 else (2, 3, 0, 1, 4)
    lf = LightField(stack.transpose(axes), cfg.meta)

    gt = None
    if cfg.gt_path is not None:
        gt_values = read_pfm(cfg.gt_path).astype(np.float64)
        if gt_values.shape != (lf.height, lf.width):
            raise SceneConfigError(
                f"ground truth {cfg.gt_path} is {gt_values.shape}, views are {(lf.height, lf.width)}"
            )
        gt = DisparityMap.dense(gt_values)
    return Scene(lf, cfg.meta, gt)


def load_scene(path: str | os.PathLike) -> Scene:
    return load_lightfield(read_scene_config(path))


def quantize(data: np.ndarray) -> np.ndarray:
    """Round radiances to the 8-bit grid the PNG writer uses."""
    return np.rint(np.clip(data, 0.0, 1.0) * 255.0) / 255.0


def save_scene(
    directory: str | os.PathLike,
    lf: LightField,
    gt: DisparityMap | None = None,
    pattern: str = DEFAULT_PATTERN,
    config_name: str = "scene.cfg",
) -> Path:
    """Write views as 8-bit PNGs, ground truth as ``gt.pfm`` and a scene config.

    Returns the path of the config file.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for v in range(lf.n_v):
        for u in range(lf.n_u):
            index = v * lf.n_u + u
            img = np.rint(lf.data[:, :, v, u] * 255.0).astype(np.uint8)
            Image.fromarray(img).save(directory / pattern.format(index=index, u=u, v=v))
    gt_path = None
    if gt is not None:
        gt_path = directory / "gt.pfm"
        write_pfm(gt.values.astype(np.float32), gt_path)
    cfg = SceneConfig(directory, lf.n_u, lf.n_v, lf.meta, pattern, gt_path)
    cfg_path = directory / config_name
    write_scene_config(cfg, cfg_path)
    return cfg_path


def write_gray_png(
    values: np.ndarray | DisparityMap,
    path: str | os.PathLike,
    lo: float,
    hi: float,
    valid: np.ndarray | None = None,
) -> None:
    """Map ``[lo, hi]`` affinely onto ``[0, 255]`` and save as 8-bit grayscale.

    Values are clamped, then rounded half-to-even (the midpoint lands on 128).
    Invalid or non-finite pixels are written as 0.
    """
    if not lo < hi:
        raise ValueError(f"lo ({lo}) must be < hi ({hi})")
    if isinstance(values, DisparityMap):
        valid = values.valid if valid is None else valid & values.valid
        values = values.values
    values = np.asarray(values, dtype=np.float64)
    ok = np.isfinite(values)
    if valid is not None:
        ok &= np.asarray(valid, bool)
    scaled = (np.where(ok, values, lo) - lo) / (hi - lo) * 255.0
    img = np.rint(np.clip(scaled, 0.0, 255.0)).astype(np.uint8)
    img[~ok] = 0
    Image.fromarray(img).save(Path(path))


# -- PFM ---------------------------------------------------------------------

_PFM_HEADER = re.compile(rb"^(P[fF])\s+(\d+)\s+(\d+)\s+(\S+)\s", re.S)


def read_pfm(path: str | os.PathLike) -> np.ndarray:
    """Read a single-channel ``Pf`` map as float32, top row first."""
    raw = Path(path).read_bytes()
    m = _PFM_HEADER.match(raw)
    if not m:
        raise PFMError(f"{path}: malformed PFM header")
    kind, w, h, scale = m.group(1), int(m.group(2)), int(m.group(3)), m.group(4)
    if kind != b"Pf":
        raise PFMError(f"{path}: expected grayscale 'Pf', got {kind.decode()!r}")
    try:
        scale = float(scale)
    except ValueError as exc:
        raise PFMError(f"{path}: bad scale field {scale!r}") from exc
    if w <= 0 or h <= 0 or scale == 0:
        raise PFMError(f"{path}: invalid dimensions {w}x{h} or zero scale")
    payload = raw[m.end() :]
    need = 4 * w * h
    if len(payload) < need:
        raise PFMError(f"{path}: truncated payload ({len(payload)} of {need} bytes)")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(payload, dtype=dtype, count=w * h).reshape(h, w)
    return np.flipud(data).astype(np.float32)


def write_pfm(values: np.ndarray, path: str | os.PathLike) -> None:
    """Write a 2D map as little-endian ``Pf``, bottom row first."""
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"write_pfm expects a 2D map, got shape {arr.shape}")
    h, w = arr.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.flipud(arr).astype("<f4").tobytes())


# -- synthetic scenes --------------------------------------------------------


@dataclass(frozen=True)
class Layer:
    """A textured fronto-parallel plane.

    ``region`` is ``(x0, y0, x1, y1)`` in reference-view pixels (half-open) or
    ``None`` for the whole image.  ``cell`` is the finest value-noise cell size
    in pixels; ``contrast`` scales the texture around mid-grey (0 gives a flat
    plane).
    """

    disparity: float
    seed: int = 0
    region: tuple[float, float, float, float] | None = None
    cell: float = 6.0
    contrast: float = 1.0


@dataclass(frozen=True)
class SynthSpec:
    """Layers are listed front to back; earlier layers occlude later ones."""

    width: int
    height: int
    n_u: int = 9
    n_v: int = 9
    layers: Sequence[Layer] = field(default_factory=tuple)
    noise_sigma: float = 0.0
    noise_seed: int = 0
    meta: SceneMeta = field(default_factory=SceneMeta)

    def validate(self) -> None:
        if self.width < 1 or self.height < 1 or self.n_u < 1 or self.n_v < 1:
            raise ValueError("synthetic scene dimensions must be positive")
        if not self.layers:
            raise ValueError("synthetic scene needs at least one layer")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        for layer in self.layers:
            if not self.meta.disparity_min <= layer.disparity <= self.meta.disparity_max:
                raise ValueError(
                    f"layer disparity {layer.disparity} outside "
                    f"[{self.meta.disparity_min}, {self.meta.disparity_max}]"
                )


def _fade(t: np.ndarray) -> np.ndarray:
    return t * t * (3.0 - 2.0 * t)


def value_noise(x: np.ndarray, y: np.ndarray, seed: int, cell: float = 6.0, octaves: int = 3) -> np.ndarray:
    """Smooth value noise in ``[0, 1]`` evaluated at continuous coordinates.

    Octaves use cell sizes ``cell * 2**k`` with amplitudes halving toward the
    finest one.  The lattice is hashed, so any coordinate is defined.
    """
    rng = np.random.default_rng(seed)
    total = np.zeros(np.broadcast(x, y).shape)
    norm = 0.0
    for k in range(octaves):
        perm = rng.permutation(256)
        table = rng.random(256)
        size = cell * 2.0 ** (octaves - 1 - k)
        amp = 2.0 ** (-k)
        gx, gy = x / size + 17.0 * k, y / size + 31.0 * k
        ix, iy = np.floor(gx), np.floor(gy)
        fx, fy = _fade(gx - ix), _fade(gy - iy)
        ix = ix.astype(np.int64)
        iy = iy.astype(np.int64)

        def lattice(i, j):
            return table[perm[(perm[i & 255] + j) & 255]]

        top = lattice(ix, iy) + fx * (lattice(ix + 1, iy) - lattice(ix, iy))
        bottom = lattice(ix, iy + 1) + fx * (lattice(ix + 1, iy + 1) - lattice(ix, iy + 1))
        total += amp * (top + fy * (bottom - top))
        norm += amp
    return total / norm


def synth_scene(spec: SynthSpec) -> tuple[LightField, DisparityMap]:
    """Render a layered fronto-parallel scene and its exact disparity map.

    A layer at disparity ``d`` shows texture point ``X`` at ``X - (u - cu) d``
    in view ``u`` (same for ``y``/``v``).  The procedural texture is evaluated
    at the exact sample positions, so no resampling error enters the oracle.
    """
    spec.validate()
    h, w = spec.height, spec.width
    cu, cv = spec.n_u // 2, spec.n_v // 2
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    data = np.full((h, w, spec.n_v, spec.n_u), 0.5)
    gt = np.zeros((h, w))
    gt_set = np.zeros((h, w), bool)

    for layer in reversed(spec.layers):
        for v in range(spec.n_v):
            for u in range(spec.n_u):
                tx = xs + (u - cu) * layer.disparity
                ty = ys + (v - cv) * layer.disparity
                if layer.region is None:
                    mask = np.ones((h, w), bool)
                else:
                    x0, y0, x1, y1 = layer.region
                    mask = (tx >= x0) & (tx < x1) & (ty >= y0) & (ty < y1)
                tex = value_noise(tx, ty, layer.seed, layer.cell)
                tex = 0.5 + layer.contrast * 0.8 * (tex - 0.5)
                view = data[:, :, v, u]
                view[mask] = tex[mask]
                if u == cu and v == cv:
                    gt[mask] = layer.disparity
                    gt_set |= mask

    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.noise_seed)
        data = data + rng.normal(0.0, spec.noise_sigma, data.shape)
    data = np.clip(data, 0.0, 1.0)
    return LightField(data, spec.meta), DisparityMap(gt, gt_set)


def layered_spec(
    disparities: Sequence[float],
    size: int,
    views: int,
    seed: int = 0,
    noise_sigma: float = 0.0,
    meta: SceneMeta | None = None,
) -> SynthSpec:
    """Nested centred rectangles, front layer smallest, last layer full frame."""
    meta = meta or SceneMeta()
    n = len(disparities)
    layers = []
    for i, d in enumerate(disparities):
        if i == n - 1:
            region = None
        else:
            half = size * (i + 1) / (2.0 * (n + 1))
            c = size / 2.0
            region = (c - half, c - half, c + half, c + half)
        layers.append(Layer(float(d), seed=seed * 1000 + i, region=region))
    return SynthSpec(size, size, views, views, tuple(layers), noise_sigma, seed, meta)
