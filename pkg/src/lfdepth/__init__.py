"""Light field disparity estimation: LSG, plane sweeping, EPI density scoring and refinement."""

from importlib.metadata import PackageNotFoundError as _PackageNotFoundError, version as _version
from types import ModuleType as _ModuleType

try:
    __version__ = _version("artifact")
except _PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .core import (
    ConfidenceMap,
    CostVolume,
    DisparityMap,
    GradientField,
    LightField,
    SceneMeta,
    center_view,
    gradients,
    pyramid_down,
    sample_disparities,
    shear,
    upsample_disparity,
)
from .epi import EpiParams, density_score, edge_confidence, estimate_epi_level, fine_to_coarse, sample_radiances
from .evaluation import (
    BenchmarkParams,
    EvalReport,
    depth_count_sweep,
    disparity_to_depth,
    error_map,
    mse,
    psnr,
    run_benchmark,
)
from .io import (
    Layer,
    Scene,
    SceneConfig,
    SynthSpec,
    load_lightfield,
    load_scene,
    read_pfm,
    read_scene_config,
    save_scene,
    synth_scene,
    write_gray_png,
    write_pfm,
)
from .lsg import LsgParams, estimate_lsg
from .refine import (
    EnergyParams,
    FusionWeights,
    bilateral_filter,
    energy_refine,
    fill_nearest,
    fuse_weighted,
    median_filter_3x3,
)
from .sweep import SweepParams, box_filter_cost, build_cost_volume, estimate_sweep, select_disparity

__all__ = [n for n, o in globals().items() if not n.startswith("_") and not isinstance(o, _ModuleType)]
