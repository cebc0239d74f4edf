"""The four-term localization-counting loss and its exact logit gradient.

The total loss over a probability map S and point annotations T is

    total = image_level + point_level + split_level + false_positive

* image level: at each class's most-confident pixel, reward presence of
  annotated classes (background always counts as present) and punish
  presence of unannotated ones;
* point level: cross-entropy at exactly the annotated pixels;
* split level: push boundary pixels (from a split generator, see
  :mod:`lccount.splits`) toward background, weighted by how many
  annotations share the blob;
* false positive: push every pixel of an annotation-free blob toward
  background.

All pixel sets derived from S (per-class argmax pixels, blobs, split
boundaries, false-positive pixels) are treated as *constants* of the
current prediction: the gradient flows only through the probabilities at
those frozen locations.  :class:`LossContext` materializes the frozen
sets so that loss and gradient — and finite-difference checks — can be
evaluated against the same sets.

Each logged probability is floored at ``epsilon``; a floored entry
contributes a constant to the loss and nothing to the gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blobs import BlobLabeling, assign_points, label_blobs
from .grid import (LogitMap, PointAnnotations, ProbMap, foreground_mask,
                   present_classes, softmax)
from .splits import SplitBoundary, line_split, watershed_split

SPLIT_METHODS = ("watershed", "line")


@dataclass(frozen=True)
class LossConfig:
    """Loss-term toggles and numeric settings.

    ``normalize`` switches the point/split/false-positive sums to means
    over their pixel sets (off by default: the terms are plain sums).
    """

    split_method: str = "watershed"
    epsilon: float = 1e-12
    include_image: bool = True
    include_point: bool = True
    include_split: bool = True
    include_false_positive: bool = True
    normalize: bool = False

    def __post_init__(self):
        if self.split_method not in SPLIT_METHODS:
            raise ValueError(
                f"split_method must be one of {SPLIT_METHODS}, got {self.split_method!r}"
            )
        if not 0.0 < self.epsilon <= 1e-6:
            raise ValueError(f"epsilon must lie in (0, 1e-6], got {self.epsilon}")


@dataclass(frozen=True)
class LossBreakdown:
    image_level: float
    point_level: float
    split_level: float
    false_positive: float
    total: float


@dataclass(frozen=True)
class LossContext:
    """Frozen pixel sets for one prediction/annotation pair.

    ``argmax_pixels[c]`` is the (row, col) of the most-confident pixel
    for class c.  ``boundary`` and ``fp_pixels`` are None/(0, 2) when the
    corresponding term is disabled.  ``labeling`` retains the assigned
    blob structure for diagnostics.
    """

    num_classes: int
    present: tuple
    absent: tuple
    argmax_pixels: np.ndarray
    points: np.ndarray
    boundary: SplitBoundary | None
    fp_pixels: np.ndarray
    labeling: BlobLabeling | None


def _check_dims(probs: ProbMap, annotations: PointAnnotations):
    if (annotations.height, annotations.width) != (probs.height, probs.width):
        raise ValueError(
            f"annotation canvas {(annotations.height, annotations.width)} does not "
            f"match probability map {(probs.height, probs.width)}"
        )


def _per_class_argmax(values: np.ndarray) -> np.ndarray:
    """(C, 2) row/col of each class plane's maximum (first in row-major order)."""
    h, w, c = values.shape
    flat = values.reshape(h * w, c).argmax(axis=0)
    return np.stack([flat // w, flat % w], axis=1).astype(np.int64)


def build_loss_context(probs: ProbMap, annotations: PointAnnotations,
                       cfg: LossConfig) -> LossContext:
    """Derive every blob-dependent pixel set from the current prediction."""
    _check_dims(probs, annotations)
    present, absent = present_classes(annotations, probs.num_classes)
    argmax_px = _per_class_argmax(probs.values)

    labeling = None
    boundary = None
    fp_pixels = np.zeros((0, 2), dtype=np.int64)
    if cfg.include_split or cfg.include_false_positive:
        labeling = assign_points(label_blobs(probs), annotations)
        if cfg.include_false_positive and labeling.num_blobs:
            fp_mask = np.isin(labeling.labels, labeling.unmatched_blob_ids())
            fp_pixels = np.argwhere(fp_mask).astype(np.int64)
        if cfg.include_split:
            if cfg.split_method == "watershed":
                boundary = watershed_split(foreground_mask(probs), labeling, annotations)
            else:
                boundary = line_split(probs, labeling)
    return LossContext(
        num_classes=probs.num_classes,
        present=present,
        absent=absent,
        argmax_pixels=argmax_px,
        points=annotations.points,
        boundary=boundary,
        fp_pixels=fp_pixels,
        labeling=labeling,
    )


# ---------------------------------------------------------------------------
# individual terms
# ---------------------------------------------------------------------------


def _flog(values, eps):
    return np.log(np.maximum(values, eps))


def _image_term(values, present, absent, argmax_px, eps) -> float:
    ce = (0,) + tuple(present)
    rows, cols = argmax_px[:, 0], argmax_px[:, 1]
    loss = -sum(float(_flog(values[rows[c], cols[c], c], eps)) for c in ce) / len(ce)
    if absent:
        loss -= sum(
            float(_flog(1.0 - values[rows[c], cols[c], c], eps)) for c in absent
        ) / len(absent)
    return loss


def image_level_loss(probs: ProbMap, annotations: PointAnnotations,
                     *, epsilon: float = 1e-12) -> float:
    """Most-confident-pixel term: −mean log S at t_c over annotated classes
    (plus background), −mean log (1 − S) at t_c over unannotated classes."""
    _check_dims(probs, annotations)
    present, absent = present_classes(annotations, probs.num_classes)
    return _image_term(probs.values, present, absent,
                       _per_class_argmax(probs.values), epsilon)


def point_level_loss(probs: ProbMap, annotations: PointAnnotations,
                     *, epsilon: float = 1e-12, normalize: bool = False) -> float:
    """Cross-entropy summed over exactly the annotated pixels."""
    _check_dims(probs, annotations)
    pts = annotations.points
    if pts.shape[0] == 0:
        return 0.0
    vals = probs.values[pts[:, 0], pts[:, 1], pts[:, 2]]
    total = -float(_flog(vals, epsilon).sum())
    return total / pts.shape[0] if normalize else total


def split_level_loss(probs: ProbMap, boundary: SplitBoundary,
                     *, epsilon: float = 1e-12, normalize: bool = False) -> float:
    """Weighted background log-loss over the boundary pixels."""
    if (boundary.height, boundary.width) != (probs.height, probs.width):
        raise ValueError("boundary does not match the probability map")
    if len(boundary) == 0:
        return 0.0
    s0 = probs.values[boundary.pixels[:, 0], boundary.pixels[:, 1], 0]
    total = -float((boundary.weights * _flog(s0, epsilon)).sum())
    return total / len(boundary) if normalize else total


def false_positive_loss(probs: ProbMap, labeling: BlobLabeling,
                        *, epsilon: float = 1e-12, normalize: bool = False) -> float:
    """Background log-loss over every pixel of annotation-free blobs."""
    if labeling.tallies is None:
        raise ValueError("labeling has no assigned points; call assign_points first")
    if (labeling.height, labeling.width) != (probs.height, probs.width):
        raise ValueError("labeling does not match the probability map")
    if labeling.num_blobs == 0:
        return 0.0
    fp_mask = np.isin(labeling.labels, labeling.unmatched_blob_ids())
    count = int(fp_mask.sum())
    if count == 0:
        return 0.0
    total = -float(_flog(probs.values[fp_mask, 0], epsilon).sum())
    return total / count if normalize else total


# ---------------------------------------------------------------------------
# assembled loss and gradient
# ---------------------------------------------------------------------------


def breakdown_from_context(probs: ProbMap, ctx: LossContext,
                           cfg: LossConfig) -> LossBreakdown:
    """Evaluate all enabled terms against the frozen pixel sets of ``ctx``."""
    values = probs.values
    eps = cfg.epsilon
    li = lp = ls = lf = 0.0
    if cfg.include_image:
        li = _image_term(values, ctx.present, ctx.absent, ctx.argmax_pixels, eps)
    if cfg.include_point and ctx.points.shape[0]:
        vals = values[ctx.points[:, 0], ctx.points[:, 1], ctx.points[:, 2]]
        lp = -float(_flog(vals, eps).sum())
        if cfg.normalize:
            lp /= ctx.points.shape[0]
    if cfg.include_split and ctx.boundary is not None and len(ctx.boundary):
        ls = split_level_loss(probs, ctx.boundary, epsilon=eps, normalize=cfg.normalize)
    if cfg.include_false_positive and ctx.fp_pixels.shape[0]:
        s0 = values[ctx.fp_pixels[:, 0], ctx.fp_pixels[:, 1], 0]
        lf = -float(_flog(s0, eps).sum())
        if cfg.normalize:
            lf /= ctx.fp_pixels.shape[0]
    total = li + lp + ls + lf
    return LossBreakdown(li, lp, ls, lf, total)


def gradient_from_context(probs: ProbMap, ctx: LossContext,
                          cfg: LossConfig) -> np.ndarray:
    """Exact gradient of the total loss w.r.t. the logits behind ``probs``.

    Every enabled term is a weighted sum of −log softmax entries at
    frozen (pixel, class) slots, whose logit gradient at a pixel is
    ``S * total_weight − weight``; the unannotated-class penalty
    −log(1 − S_c) adds ``w·S_c/(1−S_c)·(onehot_c − S)`` at its pixel.
    Floored entries contribute nothing.
    """
    values = probs.values
    h, w, c = values.shape
    eps = cfg.epsilon
    wpos = np.zeros((h, w, c))

    if cfg.include_image:
        ce = (0,) + tuple(ctx.present)
        for k in ce:
            r, col = ctx.argmax_pixels[k]
            wpos[r, col, k] += 1.0 / len(ce)
    if cfg.include_point and ctx.points.shape[0]:
        scale = 1.0 / ctx.points.shape[0] if cfg.normalize else 1.0
        np.add.at(wpos, (ctx.points[:, 0], ctx.points[:, 1], ctx.points[:, 2]), scale)
    if cfg.include_split and ctx.boundary is not None and len(ctx.boundary):
        bnd = ctx.boundary
        scale = 1.0 / len(bnd) if cfg.normalize else 1.0
        np.add.at(wpos, (bnd.pixels[:, 0], bnd.pixels[:, 1], 0),
                  bnd.weights.astype(np.float64) * scale)
    if cfg.include_false_positive and ctx.fp_pixels.shape[0]:
        scale = 1.0 / ctx.fp_pixels.shape[0] if cfg.normalize else 1.0
        np.add.at(wpos, (ctx.fp_pixels[:, 0], ctx.fp_pixels[:, 1], 0), scale)

    # floored entries are locally constant: drop their weight entirely
    wpos[values <= eps] = 0.0
    grad = values * wpos.sum(axis=2, keepdims=True) - wpos

    if cfg.include_image and ctx.absent:
        wa = 1.0 / len(ctx.absent)
        for k in ctx.absent:
            r, col = ctx.argmax_pixels[k]
            sc = values[r, col, k]
            if 1.0 - sc > eps:
                coeff = wa * sc / (1.0 - sc)
                row = -coeff * values[r, col, :]
                row[k] += coeff
                grad[r, col, :] += row
    return grad


def total_loss(logits: LogitMap, annotations: PointAnnotations,
               cfg: LossConfig) -> LossBreakdown:
    probs = softmax(logits)
    ctx = build_loss_context(probs, annotations, cfg)
    return breakdown_from_context(probs, ctx, cfg)


def loss_gradient(logits: LogitMap, annotations: PointAnnotations,
                  cfg: LossConfig) -> np.ndarray:
    probs = softmax(logits)
    ctx = build_loss_context(probs, annotations, cfg)
    return gradient_from_context(probs, ctx, cfg)


def loss_and_gradient(logits: LogitMap, annotations: PointAnnotations,
                      cfg: LossConfig):
    """One-pass (LossBreakdown, gradient) sharing a single context build."""
    probs = softmax(logits)
    ctx = build_loss_context(probs, annotations, cfg)
    return (breakdown_from_context(probs, ctx, cfg),
            gradient_from_context(probs, ctx, cfg))
