"""Plane-sweep multi-view stereo with learned matching and CRF refinement."""

from .errors import (
    BehindCameraError,
    CheckpointError,
    ConfigError,
    DataError,
    DegenerateHomographyError,
    DisparityFormatError,
    EmptyOverlapError,
    InsufficientFeaturesError,
    InsufficientViewsError,
    InvalidCameraError,
    ManifestError,
    MVStereoError,
    NonFiniteError,
    NumericalError,
    SamplingError,
    SceneSpecError,
    TrainingDivergenceError,
    VolumeBudgetError,
)
from .geometry import (
    CameraIntrinsics,
    CameraPose,
    CameraView,
    DisparityMap,
    bilinear_sample,
    plane_homography,
    project,
    warp_image,
)
from .sweep import (
    DEFAULT_MEMORY_BUDGET,
    DisparityDistribution,
    DisparityGrid,
    PlaneSweepVolume,
    SparsePoint,
    argmax_disparity,
    build_volume,
    estimate_max_disparity,
    make_disparity_grid,
    select_neighbors,
    volume_nbytes,
)
from .render import BoxSpec, PlaneSpec, SceneSpec, generate_scene, preset_scene
from .data import (
    Sequence,
    load_disparity,
    load_distribution,
    load_image,
    load_sequence,
    load_volume,
    save_disparity,
    save_distribution,
    save_sequence,
    save_volume,
)
from .crf import CrfParams, crf_refine, crf_refine_brute, label_compatibility
from .metrics import (
    CompletenessCurve,
    completeness_curve,
    geometric_error,
    load_curve,
    photometric_error,
    rephotograph,
    save_curve,
)

# mvstereo.network, mvstereo.training and mvstereo.ops need torch and are
# imported as submodules so that the numpy-only core stays cheap to import.

__version__ = "0.1.0"
