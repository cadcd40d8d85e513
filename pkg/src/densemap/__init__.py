"""CPU dense stereo mapping toolkit.

Dense disparity from rectified stereo pairs via probabilistic patch
matching, depth triangulation and world-frame point lifting, keyframe-wise
map mosaicking with reprojection culling, plus synthetic scene generation
and quantitative evaluation.
"""

from .evaluate import (
    EpeSummary,
    EvaluationReport,
    disparity_epe,
    map_to_surface_error,
    nearest_reference_distance,
)
from .geometry import (
    DepthField,
    Pose,
    StereoRig,
    backproject_point,
    depth_field_from_disparity,
    load_tum_trajectory,
    project_point,
    save_tum_trajectory,
    triangulate_depth,
)
from .matcher import (
    DisparityField,
    KernelTable,
    MatcherConfig,
    PatchEstimate,
    RectifiedStereoPair,
    match,
)
from .mosaic import (
    GlobalMap,
    KeyframeRecord,
    MapPoint,
    MapPoints,
    export_ply,
    lift_keyframe,
    mosaic_update,
)
from .oracle import OracleConfig, exhaustive_disparity
from .pipeline import (
    KeyframePolicy,
    SessionConfig,
    TimingReport,
    run_session,
    select_keyframe,
)
from .synth import SceneSpec, render_pair, write_sequence

__version__ = "0.1.0"

__all__ = [
    "DepthField",
    "DisparityField",
    "EpeSummary",
    "EvaluationReport",
    "GlobalMap",
    "KernelTable",
    "KeyframePolicy",
    "KeyframeRecord",
    "MapPoint",
    "MapPoints",
    "MatcherConfig",
    "OracleConfig",
    "PatchEstimate",
    "Pose",
    "RectifiedStereoPair",
    "SceneSpec",
    "SessionConfig",
    "StereoRig",
    "TimingReport",
    "backproject_point",
    "depth_field_from_disparity",
    "disparity_epe",
    "exhaustive_disparity",
    "export_ply",
    "lift_keyframe",
    "load_tum_trajectory",
    "map_to_surface_error",
    "match",
    "mosaic_update",
    "nearest_reference_distance",
    "project_point",
    "render_pair",
    "run_session",
    "save_tum_trajectory",
    "select_keyframe",
    "triangulate_depth",
    "write_sequence",
]
