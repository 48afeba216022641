"""Disparity metrics, depth conversion and the benchmark / sampling-density runs."""

from __future__ import annotations

import csv
import logging
import math
import os
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import DisparityMap, LightField, SceneMeta
from .epi import EpiParams, fine_to_coarse, warmup as warmup_epi
from .io import Scene, write_gray_png
from .lsg import LsgParams, estimate_lsg
from .sweep import SweepParams, estimate_sweep

logger = logging.getLogger(__name__)

ALGORITHMS = ("lsg", "sweep", "epi-level0", "epi-final")
CSV_HEADER = ("scene", "algorithm", "psnr_db", "mse", "runtime_s", "error_map")


def _joint(pred: DisparityMap, gt: DisparityMap) -> np.ndarray:
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return pred.valid & gt.valid


def mse(pred: DisparityMap, gt: DisparityMap) -> float:
    """Mean squared disparity error over pixels valid in both maps."""
    joint = _joint(pred, gt)
    n = int(joint.sum())
    if n == 0:
        raise ValueError("no jointly valid pixels")
    diff = pred.values[joint] - gt.values[joint]
    return float(np.mean(diff * diff))


def psnr_from_mse(mse_value: float, max_i: float) -> float:
    if not max_i > 0:
        raise ValueError("max_i must be > 0")
    if mse_value == 0:
        return math.inf
    return 10.0 * math.log10(max_i * max_i / mse_value)


def psnr(pred: DisparityMap, gt: DisparityMap, max_i: float) -> float:
    """PSNR in dB; identical maps give ``inf``."""
    return psnr_from_mse(mse(pred, gt), max_i)


def error_map(pred: DisparityMap, gt: DisparityMap) -> np.ndarray:
    """``|pred - gt|`` where both are valid, NaN elsewhere."""
    joint = _joint(pred, gt)
    out = np.full(pred.shape, np.nan)
    out[joint] = np.abs(pred.values[joint] - gt.values[joint])
    return out


@dataclass(frozen=True, eq=False)
class DepthMap:
    values: np.ndarray
    valid: np.ndarray
    negative_count: int = 0


def disparity_to_depth(d: DisparityMap, meta: SceneMeta) -> DepthMap:
    """``Z = f b / d``.  ``|d| < 1e-9`` is invalid (depth at infinity).

    Negative disparities are legal in a signed search range; they yield
    negative depths, which are kept and reported through a logged warning.
    """
    valid = d.valid & (np.abs(np.nan_to_num(d.values)) >= 1e-9)
    z = np.full(d.shape, np.nan)
    z[valid] = meta.focal_length_px * meta.baseline / d.values[valid]
    negative = int(np.sum(z[valid] < 0))
    if negative:
        logger.warning("%d pixels have negative disparity; their depth is negative", negative)
    return DepthMap(z, valid, negative)


# -- benchmark ---------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkParams:
    lsg: LsgParams = field(default_factory=LsgParams)
    sweep_disparities: int = 11
    sweep_box_radius: int = 1
    epi: EpiParams = field(default_factory=EpiParams)
    repeats: int = 3
    threads: int = 1


@dataclass
class ReportRow:
    algorithm: str
    psnr_db: float
    mse: float
    runtime_s: float
    error_map: str = ""


@dataclass
class EvalReport:
    scene: str
    max_i: float
    rows: list[ReportRow] = field(default_factory=list)

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# max_I={self.max_i!r}\n")
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for r in self.rows:
                writer.writerow([self.scene, r.algorithm, repr(r.psnr_db), repr(r.mse), repr(r.runtime_s), r.error_map])

    @classmethod
    def from_csv(cls, path: str | os.PathLike) -> "EvalReport":
        with open(path, newline="") as fh:
            first = fh.readline().strip()
            if not first.startswith("# max_I="):
                raise ValueError(f"{path}: missing '# max_I=' header line")
            max_i = float(first.split("=", 1)[1])
            reader = csv.DictReader(fh)
            rows, scene = [], ""
            for rec in reader:
                scene = rec["scene"]
                rows.append(
                    ReportRow(
                        rec["algorithm"],
                        float(rec["psnr_db"]),
                        float(rec["mse"]),
                        float(rec["runtime_s"]),
                        rec["error_map"],
                    )
                )
        return cls(scene, max_i, rows)


def estimator(name: str, params: BenchmarkParams, meta: SceneMeta) -> Callable[[LightField], DisparityMap]:
    if name == "lsg":
        return lambda lf: estimate_lsg(lf, params.lsg, params.threads)
    if name == "sweep":
        sp = SweepParams.for_scene(meta, params.sweep_disparities, box_radius=params.sweep_box_radius)
        return lambda lf: estimate_sweep(lf, sp, params.threads)
    if name == "epi-level0":
        return lambda lf: fine_to_coarse(lf, params.epi, params.threads, max_levels=1)
    if name == "epi-final":
        return lambda lf: fine_to_coarse(lf, params.epi, params.threads)
    raise ValueError(f"unknown algorithm {name!r}; choose from {', '.join(ALGORITHMS)}")


def timed(fn: Callable[[], DisparityMap], repeats: int) -> tuple[DisparityMap, float]:
    """Run ``fn`` ``repeats`` times; return the last result and the median wall time."""
    times = []
    result = None
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t0)
    return result, statistics.median(times)


def run_benchmark(
    scene: Scene,
    algorithms: Sequence[str] = ALGORITHMS,
    params: BenchmarkParams | None = None,
    out_dir: str | os.PathLike | None = None,
) -> EvalReport:
    """Time each estimator, score it against ground truth, write error maps.

    Only the estimator call is timed.  ``max_I`` is the span of the scene's
    disparity range.  Compiled kernels are warmed up once beforehand so JIT
    compilation does not land in the first timing.
    """
    if scene.gt is None:
        raise ValueError(f"scene {scene.meta.name!r} has no ground truth")
    params = params or BenchmarkParams()
    max_i = scene.meta.disparity_span
    report = EvalReport(scene.meta.name, max_i)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    if any(a.startswith("epi") for a in algorithms):
        warmup_epi()

    for name in algorithms:
        fn = estimator(name, params, scene.meta)
        pred, runtime = timed(lambda: fn(scene.lf), params.repeats)
        m = mse(pred, scene.gt)
        path = ""
        if out_dir is not None:
            target = out_dir / f"error_{name}.png"
            write_gray_png(error_map(pred, scene.gt), target, 0.0, max_i)
            path = str(target)
        report.rows.append(ReportRow(name, psnr_from_mse(m, max_i), m, runtime, path))
        logger.info("%s: mse=%.6g runtime=%.3fs", name, m, runtime)
    return report


@dataclass
class SweepRow:
    count: int
    mse: float
    runtime_s: float


def depth_count_sweep(
    scene: Scene,
    counts: Sequence[int],
    box_radius: int = 1,
    repeats: int = 3,
    threads: int = 1,
) -> list[SweepRow]:
    """Plane sweeping at several hypothesis counts over the scene's range."""
    if scene.gt is None:
        raise ValueError(f"scene {scene.meta.name!r} has no ground truth")
    rows = []
    for n in counts:
        if n < 2:
            raise ValueError(f"disparity count must be >= 2, got {n}")
        sp = SweepParams.for_scene(scene.meta, n, box_radius=box_radius)
        pred, runtime = timed(lambda: estimate_sweep(scene.lf, sp, threads), repeats)
        rows.append(SweepRow(n, mse(pred, scene.gt), runtime))
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], path: str | os.PathLike, scene: str = "") -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("scene", "count", "mse", "runtime_s"))
        for r in rows:
            writer.writerow((scene, r.count, repr(r.mse), repr(r.runtime_s)))
