"""risekit: black-box saliency by randomized input masking.

Explains image-classifier decisions by probing an opaque scorer with
randomly masked inputs, and evaluates any saliency map with causal
deletion/insertion curves and the pointing game.
"""

from .baselines import SlidingWindowConfig, random_saliency, sliding_window_saliency
from .errors import (
    DataError,
    EnumerationBoundError,
    ImageIOError,
    InvalidArgumentError,
    InvalidConfigError,
    InvalidDimensionError,
    InvalidInputError,
    ProbeError,
    ProtocolError,
    RemoteError,
    RiseKitError,
    TransportError,
)
from .imagegrid import (
    Image,
    Mask,
    SaliencyMap,
    apply_mask,
    bilinear_upsample,
    gaussian_blur,
    load_image,
    load_saliency,
    render_heatmap,
    save_image,
    save_saliency,
)
from .masking import (
    MaskBatch,
    MaskConfig,
    MaskStatistics,
    generate_masks,
    load_mask_batch,
    mask_statistics,
    save_mask_batch,
)
from .metrics import (
    BoundingBox,
    MetricCurve,
    PointingTally,
    auc,
    deletion,
    insertion,
    load_boxes_jsonl,
    pointing_game,
    tally_pointing,
)
from .modelbridge import (
    ConstantModel,
    HttpScorer,
    RegionMeanModel,
    ScoreFunction,
    SubprocessScorer,
    TargetSpec,
    TemplateDotModel,
    probe_health,
)
from .saliency import (
    ExplainRequest,
    ExplainResult,
    exact_saliency,
    explain_sequence,
    rise_saliency,
)

__version__ = "0.1.0"

__all__ = [
    "Image",
    "Mask",
    "SaliencyMap",
    "apply_mask",
    "bilinear_upsample",
    "gaussian_blur",
    "load_image",
    "save_image",
    "load_saliency",
    "save_saliency",
    "render_heatmap",
    "MaskConfig",
    "MaskBatch",
    "MaskStatistics",
    "generate_masks",
    "mask_statistics",
    "save_mask_batch",
    "load_mask_batch",
    "ExplainRequest",
    "ExplainResult",
    "rise_saliency",
    "exact_saliency",
    "explain_sequence",
    "MetricCurve",
    "BoundingBox",
    "PointingTally",
    "auc",
    "deletion",
    "insertion",
    "pointing_game",
    "tally_pointing",
    "load_boxes_jsonl",
    "SlidingWindowConfig",
    "sliding_window_saliency",
    "random_saliency",
    "ScoreFunction",
    "TargetSpec",
    "ConstantModel",
    "RegionMeanModel",
    "TemplateDotModel",
    "HttpScorer",
    "SubprocessScorer",
    "probe_health",
    "RiseKitError",
    "InvalidDimensionError",
    "InvalidArgumentError",
    "InvalidConfigError",
    "InvalidInputError",
    "EnumerationBoundError",
    "ImageIOError",
    "DataError",
    "ProbeError",
    "TransportError",
    "ProtocolError",
    "RemoteError",
]
