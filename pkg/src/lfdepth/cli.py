"""Command-line front end: estimate, compare, synth, sweep-depths, evaluate.

Exit codes are 0 on success, 2 for usage or configuration errors and 3 for
I/O errors.  Every successful run writes ``manifest.cfg`` (key=value) into
its output directory with every effective parameter, the seed and the
toolkit version.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .core import DisparityMap, SceneMeta
from .epi import KERNELS, EpiParams, fine_to_coarse
from .evaluation import (
    ALGORITHMS,
    BenchmarkParams,
    depth_count_sweep,
    mse,
    psnr_from_mse,
    run_benchmark,
    write_sweep_csv,
)
from .io import PFMError, SceneConfigError, format_key_values, layered_spec, load_scene, read_pfm, save_scene, synth_scene, write_gray_png, write_pfm
from .lsg import LsgParams, estimate_lsg
from .refine import EnergyParams, FusionWeights, bilateral_filter, energy_refine, fuse_weighted, median_filter_3x3
from .sweep import SweepParams, estimate_sweep

logger = logging.getLogger("lfdepth")

EXIT_OK, EXIT_USAGE, EXIT_IO = 0, 2, 3
MANIFEST = "manifest.cfg"


class UsageError(Exception):
    """Invalid flag values detected after parsing."""


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _flatten(prefix: str, obj) -> dict[str, object]:
    return {f"{prefix}.{k}": v for k, v in dataclasses.asdict(obj).items()}


def write_manifest(out: Path, args: argparse.Namespace, extra: dict[str, object]) -> Path:
    items: dict[str, object] = {"version": __version__, "command": args.command}
    for key, value in sorted(vars(args).items()):
        if key in ("command", "handler"):
            continue
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        items[f"arg.{key}"] = value
    items.update(extra)
    path = out / MANIFEST
    path.write_text(format_key_values(items, "lfdepth run manifest"), encoding="utf-8")
    return path


# -- parameter assembly ------------------------------------------------------


def _epi_params(args) -> EpiParams:
    return EpiParams(n_disparities=args.n_disparities, kernel=args.kernel, bandwidth=args.bandwidth)


def _lsg_params(args) -> LsgParams:
    return LsgParams(window_radius=args.window_radius)


def _sweep_params(args, meta: SceneMeta) -> SweepParams:
    return SweepParams.for_scene(meta, args.n_disparities, box_radius=args.box_radius)


def _add_estimator_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-disparities", type=int, default=11, help="disparity hypotheses for sweep / EPI")
    p.add_argument("--window-radius", type=int, default=1, help="LSG window radius")
    p.add_argument("--box-radius", type=int, default=1, help="sweep cost aggregation radius")
    p.add_argument("--kernel", choices=KERNELS, default="triangular", help="EPI density kernel")
    p.add_argument("--bandwidth", type=float, default=0.1, help="EPI kernel bandwidth h")
    p.add_argument("--threads", type=int, default=1, help="worker threads (0 = all cores)")
    p.add_argument("--seed", type=int, default=0, help="recorded in the manifest")


# -- subcommands -------------------------------------------------------------


def cmd_estimate(args) -> int:
    scene = load_scene(args.scene)
    lf, meta = scene.lf, scene.meta
    lsg_p, epi_p, sweep_p = _lsg_params(args), _epi_params(args), _sweep_params(args, meta)
    runners = {
        "lsg": lambda: estimate_lsg(lf, lsg_p, args.threads),
        "sweep": lambda: estimate_sweep(lf, sweep_p, args.threads),
        "epi": lambda: fine_to_coarse(lf, epi_p, args.threads),
    }
    d = runners[args.algo]()
    extra = {**_flatten("lsg", lsg_p), **_flatten("sweep", sweep_p), **_flatten("epi", epi_p)}

    if args.refine == "median":
        d = median_filter_3x3(d)
    elif args.refine == "bilateral":
        gray = lf.gray()
        d = bilateral_filter(d, gray.view(gray.center_u, gray.center_v), args.sigma_s, args.sigma_r)
        extra.update({"bilateral.sigma_s": args.sigma_s, "bilateral.sigma_r": args.sigma_r})
    elif args.refine == "energy":
        ep = EnergyParams(lam=args.lam)
        d = energy_refine(d, lf, ep)
        extra.update(_flatten("energy", ep))
    elif args.refine == "fuse":
        order = [args.algo] + [a for a in ("lsg", "sweep", "epi") if a != args.algo]
        maps = [d] + [runners[a]() for a in order[1:]]
        weights = args.fuse_weights or [1.0] * len(maps)
        if len(weights) != len(maps):
            raise UsageError(f"--fuse-weights needs {len(maps)} values ({','.join(order)})")
        d = fuse_weighted(maps, FusionWeights(weights))
        extra.update({"fuse.order": ",".join(order), "fuse.weights": ",".join(map(repr, weights))})

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_pfm(np.where(d.valid, d.values, np.nan).astype(np.float32), out / "disparity.pfm")
    write_gray_png(d, out / "disparity.png", meta.disparity_min, meta.disparity_max)
    extra["scene.name"] = meta.name
    write_manifest(out, args, extra)
    print(f"wrote {out / 'disparity.pfm'}")
    return EXIT_OK


def _benchmark_params(args) -> BenchmarkParams:
    return BenchmarkParams(
        lsg=_lsg_params(args),
        sweep_disparities=args.n_disparities,
        sweep_box_radius=args.box_radius,
        epi=_epi_params(args),
        repeats=args.repeats,
        threads=args.threads,
    )


def cmd_compare(args) -> int:
    scene = load_scene(args.scene)
    if scene.gt is None:
        raise UsageError(f"scene {args.scene} has no ground truth")
    for a in args.algos:
        if a not in ALGORITHMS:
            raise UsageError(f"unknown algorithm {a!r}; choose from {','.join(ALGORITHMS)}")
    params = _benchmark_params(args)
    out = Path(args.out)
    report = run_benchmark(scene, args.algos, params, out)
    report.to_csv(out / "report.csv")
    extra = {
        "max_I": report.max_i,
        "bench.repeats": params.repeats,
        "bench.sweep_disparities": params.sweep_disparities,
        "bench.sweep_box_radius": params.sweep_box_radius,
        **_flatten("lsg", params.lsg),
        **_flatten("epi", params.epi),
    }
    write_manifest(out, args, extra)
    for r in report.rows:
        print(f"{r.algorithm:12s} psnr={r.psnr_db:.4f} dB  mse={r.mse:.6g}  runtime={r.runtime_s:.3f} s")
    return EXIT_OK


def cmd_synth(args) -> int:
    if not args.layers:
        raise UsageError("--layers needs at least one disparity")
    if not args.disp_min < args.disp_max:
        raise UsageError("--disp-min must be < --disp-max")
    for d in args.layers:
        if not args.disp_min <= d <= args.disp_max:
            raise UsageError(f"layer disparity {d} outside [{args.disp_min}, {args.disp_max}]")
    out = Path(args.out)
    meta = SceneMeta(args.focal_length, args.baseline, args.disp_min, args.disp_max, name=out.name or "synth")
    spec = layered_spec(args.layers, args.size, args.views, args.seed, args.noise, meta)
    lf, gt = synth_scene(spec)
    cfg = save_scene(out, lf, gt)
    write_manifest(out, args, {"scene.config": cfg.name})
    print(f"wrote {cfg}")
    return EXIT_OK


def cmd_sweep_depths(args) -> int:
    bad = [c for c in args.counts if c < 2]
    if not args.counts or bad:
        raise UsageError(f"every disparity count must be >= 2 (got {args.counts})")
    scene = load_scene(args.scene)
    if scene.gt is None:
        raise UsageError(f"scene {args.scene} has no ground truth")
    rows = depth_count_sweep(scene, args.counts, args.box_radius, args.repeats, args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(rows, out / "sweep_depths.csv", scene.meta.name)
    write_manifest(out, args, {"scene.name": scene.meta.name})
    for r in rows:
        print(f"n={r.count:3d} mse={r.mse:.6g} runtime={r.runtime_s:.3f} s")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if not args.max_i > 0:
        raise UsageError("--max-i must be > 0")
    pred = read_pfm(args.pred).astype(np.float64)
    gt = read_pfm(args.gt).astype(np.float64)
    if pred.shape != gt.shape:
        raise UsageError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    m = mse(DisparityMap(pred, np.isfinite(pred)), DisparityMap(gt, np.isfinite(gt)))
    p = psnr_from_mse(m, args.max_i)
    print(f"mse={m!r} psnr_db={p!r} max_I={args.max_i!r}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out, args, {"mse": repr(m), "psnr_db": repr(p)})
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lfdepth", description="Light field disparity estimation toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate a disparity map for one scene")
    p.add_argument("--scene", required=True, help="scene config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--algo", required=True, choices=("lsg", "sweep", "epi"))
    p.add_argument("--refine", choices=("none", "median", "bilateral", "energy", "fuse"), default="none")
    p.add_argument("--sigma-s", type=float, default=1.0, help="bilateral spatial sigma")
    p.add_argument("--sigma-r", type=float, default=0.1, help="bilateral range sigma")
    p.add_argument("--lam", type=float, default=0.1, help="energy smoothness weight")
    p.add_argument("--fuse-weights", type=_float_list, default=None, help="weights, chosen algorithm first")
    _add_estimator_flags(p)
    p.set_defaults(handler=cmd_estimate)

    p = sub.add_parser("compare", help="benchmark estimators against ground truth")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--algos", type=lambda s: [a.strip() for a in s.split(",") if a.strip()], default=list(ALGORITHMS))
    p.add_argument("--repeats", type=int, default=3, help="timing repetitions (median reported)")
    _add_estimator_flags(p)
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("synth", help="render a layered synthetic scene with ground truth")
    p.add_argument("--layers", type=_float_list, required=True, help='front-to-back disparities, e.g. "1.0,-0.5"')
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--views", type=int, default=9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0, help="Gaussian noise sigma")
    p.add_argument("--disp-min", type=float, default=-2.0)
    p.add_argument("--disp-max", type=float, default=2.0)
    p.add_argument("--focal-length", type=float, default=1.0, help="focal length in pixels")
    p.add_argument("--baseline", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("sweep-depths", help="plane-sweep MSE and runtime versus hypothesis count")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--counts", type=_int_list, default=[5, 11, 21])
    p.add_argument("--box-radius", type=int, default=1)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0, help="recorded in the manifest")
    p.set_defaults(handler=cmd_sweep_depths)

    p = sub.add_parser("evaluate", help="MSE / PSNR of a predicted PFM against a ground-truth PFM")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--max-i", type=float, default=4.0, help="PSNR peak (disparity range span)")
    p.add_argument("--out", default=None, help="optional directory for a manifest")
    p.set_defaults(handler=cmd_evaluate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.handler(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, PFMError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SceneConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
