"""mvpad: multi-view projection anomaly detection for segmented CT volumes.

Pipeline: truncated-HU intensity projections of each lung along the three
canonical axes, patch-feature memory banks of normal cases with greedy
coreset subsampling, nearest-neighbor anomaly maps, and 2D-to-3D reverse
projection with percentile min-max normalization for voxel localization.
"""

from .config import PROJECTION_SETS, RunConfig
from .errors import (
    AnomalyFitError,
    ComponentSplitError,
    DimensionMismatchError,
    EmptyMaskError,
    ExtractorMismatchError,
    HeaderFormatError,
    InsufficientDataError,
    InvalidArgumentError,
    MvpadError,
    OverlapError,
    PayloadSizeError,
    UnknownDtypeError,
)
from .evaluation import (
    CALIBRATION_PERCENTILE,
    DEFAULT_CAL_FRAC,
    DEFAULT_FOLDS,
    LABEL_ABNORMAL,
    LABEL_NORMAL,
    METRIC_NAMES,
    Calibration,
    ConfusionCounts,
    FoldSplit,
    RocCurve,
    calibrate,
    confusion_metrics,
    counts_at_threshold,
    fold_metrics,
    monte_carlo_eval,
    monte_carlo_splits,
    operating_point,
    patient_score,
    roc_auc,
    summarize_folds,
)
from .features import ExtractorConfig, FeatureGrid, extract_features, grid_dims, grid_to_pixel
from .memory_bank import (
    DEFAULT_CORESET_FRAC,
    DEFAULT_SMOOTHING_SIGMA,
    AnomalyMap2D,
    MemoryBank,
    aggregate_bank,
    anomaly_map,
    bank_filename,
    build_bank,
    bulk_nn_distance,
    coreset_size,
    greedy_coreset,
    load_bank,
    nn_distance,
    save_bank,
)
from .phantom import AnomalySpec, PhantomConfig, generate_case, generate_dataset
from .pipeline import (
    CaseFeatures,
    FeatureCache,
    FoldResult,
    LoadedCase,
    LocalizationResult,
    build_banks,
    calibrate_from_cases,
    case_anomaly_maps,
    compute_case_features,
    load_case,
    load_manifest_cases,
    localize_case,
    monte_carlo_run,
    parallel_map,
    raw_scores,
    run_fold,
)
from .projection import (
    ALL_PROJECTIONS,
    BBOX_MARGIN,
    DEFAULT_CANVAS,
    ProjectedImage,
    ProjectedMask,
    ProjectionGeometry,
    ProjectionType,
    aip_project,
    bilinear_sample,
    crop_resize_to_canvas,
    mask_bbox,
    mip_project,
    nearest_sample,
    plane_shape,
    prepare_lung_volume,
    prepare_unsegmented_volume,
    project_case,
    project_mask,
)
from .reconstruction import (
    DEFAULT_BINARIZE_PCT,
    DEFAULT_PERCENTILE_Q,
    STAGE_FINAL,
    STAGE_PER_LUNG,
    STAGE_PER_PROJECTION,
    AnomalyVolume,
    NormConfig,
    back_project_plane,
    binarize_top,
    fuse_final,
    fuse_per_lung,
    localization_hit,
    mask_normalize_2d,
    percentile_minmax,
    percentile_nearest_rank,
    replicate_along_axis,
    reverse_project,
)
from .segmentation import LungPair, dice, iou, split_left_right, threshold_segment_phantom
from .volume import (
    DEFAULT_HU_HI,
    DEFAULT_HU_LO,
    MANIFEST_HEADER,
    CaseRecord,
    Volume,
    load_volume,
    normalize_truncated,
    read_manifest,
    resample_nearest,
    resolve_manifest_path,
    save_volume,
    truncate_hu,
    volumes_equal,
    write_manifest,
)

__version__ = "0.1.0"
