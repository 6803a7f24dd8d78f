"""Joint spatial/frequency feature bags with attention-based MIL heads."""

from .attention import (
    HEAD_NAMES,
    ForwardCache,
    HeadParams,
    backward,
    forward,
    gated_mil_forward,
    init_params,
    load_checkpoint,
    mil_forward,
    mrl_forward,
    save_checkpoint,
)
from .bags import (
    DOMAIN_NAMES,
    FACTOR_NAMES,
    DomainStats,
    FactorLabels,
    FeatureBag,
    RawLabels,
    baseline_extract,
    compute_domain_stats,
    join_streams,
    make_bag,
    map_raw_labels,
    normalize_features,
    read_bag,
    write_bag,
)
from .errors import (
    ConfigError,
    DimensionError,
    FormatError,
    LabelError,
    ManifestError,
    SemanticsError,
    TrainingError,
    WsimilError,
)
from .estimators import BagNormalizer, MILBagClassifier
from .frequency import (
    ComplexGrid,
    SubbandSet,
    dft2d,
    dft_log_magnitude,
    dft_stack,
    dwt_haar,
    dwt_stack,
    fft1d,
    idft2d,
    idwt_haar,
    threshold_view,
)
from .imaging import (
    Patch,
    RasterImage,
    RoiMask,
    Semantics,
    blank_ratio,
    extract_patches,
    load_mask_png,
    load_rgb_png,
    resize_bilinear,
    rgb_to_ycbcr,
    save_channel_pngs,
    save_rgb_png,
    ycbcr_to_rgb,
)
from .loss import AslConfig, asl, sigmoid
from .metrics import (
    EvalReport,
    average_precision,
    compute_report,
    confusion,
    evaluate,
    roc_auc,
    roc_auc_trapezoid,
    roc_points,
)
from .synth import make_dataset
from .training import (
    AdamState,
    EpochStats,
    TrainConfig,
    adam_step,
    clip_gradients,
    train,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
