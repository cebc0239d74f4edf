"""Localization-based counting from point annotations.

A small, self-contained toolkit that counts object instances by
predicting one blob per instance from point-supervised training data:
per-pixel class maps, blob geometry (connected components, distance
transform, seeded watershed), the four-term localization counting loss
with exact gradients, a from-scratch encoder-decoder FCN with its own
Adam and training loop, counting metrics, dataset plumbing, and a CLI.

Hot kernels are JIT-compiled when numba is available; set
``LCCOUNT_KERNELS=numpy`` to force the pure-numpy fallback (see
:mod:`lccount.kernels`).
"""

from .kernels import BACKEND as KERNEL_BACKEND
from .grid import (
    LogitMap,
    PointAnnotations,
    ProbMap,
    argmax_class,
    foreground_mask,
    present_classes,
    softmax,
)
from .blobs import (
    BlobLabeling,
    assign_points,
    blob_centers,
    connected_components,
    label_blobs,
)
from .watershed import distance_transform, ridge_pixels, seeded_watershed
from .splits import (
    PointPairing,
    SegmentCandidate,
    SplitBoundary,
    best_split_segment,
    candidate_segments,
    line_split,
    pair_points,
    watershed_split,
)
from .loss import (
    LossBreakdown,
    LossConfig,
    LossContext,
    breakdown_from_context,
    build_loss_context,
    false_positive_loss,
    gradient_from_context,
    image_level_loss,
    loss_and_gradient,
    loss_gradient,
    point_level_loss,
    split_level_loss,
    total_loss,
)
from .fcn import (
    FcnConfig,
    FcnParams,
    backward,
    forward,
    hflip_params,
    init_params,
    load_checkpoint,
    predict_counts,
    save_checkpoint,
)
from .optim import AdamState, adam_step, init_adam_state
from .metrics import EvalRecord, fscore, game, mae, mrmse_family, record_from_prediction
from .data import (
    DatasetManifest,
    ManifestEntry,
    ManifestError,
    SyntheticSpec,
    flip_horizontal,
    generate_synthetic,
    load_image,
    load_manifest,
    map_across_images,
    render_overlay,
    save_grayscale,
    save_manifest,
    save_rgb,
    worker_count,
)
from .train import NumericError, TrainConfig, TrainResult, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "LogitMap", "PointAnnotations", "ProbMap", "argmax_class",
    "foreground_mask", "present_classes", "softmax",
    "BlobLabeling", "assign_points", "blob_centers", "connected_components",
    "label_blobs",
    "distance_transform", "ridge_pixels", "seeded_watershed",
    "PointPairing", "SegmentCandidate", "SplitBoundary", "best_split_segment",
    "candidate_segments", "line_split", "pair_points", "watershed_split",
    "LossBreakdown", "LossConfig", "LossContext", "breakdown_from_context",
    "build_loss_context", "false_positive_loss", "gradient_from_context",
    "image_level_loss", "loss_and_gradient", "loss_gradient",
    "point_level_loss", "split_level_loss", "total_loss",
    "FcnConfig", "FcnParams", "backward", "forward", "hflip_params",
    "init_params", "load_checkpoint", "predict_counts", "save_checkpoint",
    "AdamState", "adam_step", "init_adam_state",
    "EvalRecord", "fscore", "game", "mae", "mrmse_family",
    "record_from_prediction",
    "DatasetManifest", "ManifestEntry", "ManifestError", "SyntheticSpec",
    "flip_horizontal", "generate_synthetic", "load_image", "load_manifest",
    "map_across_images", "render_overlay", "save_grayscale", "save_manifest",
    "save_rgb", "worker_count",
    "NumericError", "TrainConfig", "TrainResult", "evaluate", "train",
    "__version__",
]
