"""Training loop: per-image SGD with Adam, flip doubling, early stopping.

One optimization step per image (batch size 1).  When flip augmentation
is on, every epoch iterates over each training image twice — once as-is
and once horizontally mirrored (with mirrored annotations) — in one
seeded shuffled order.  After each epoch the validation MAE is measured
with :func:`lccount.fcn.predict_counts`; the parameters with the best
validation MAE so far are kept and returned, and training stops early
after ``patience`` epochs without improvement.  Everything is
deterministic for a fixed seed and kernel backend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import flip_horizontal
from .fcn import FcnConfig, FcnParams, backward, forward, init_params, predict_counts
from .grid import PointAnnotations
from .loss import LossConfig, loss_and_gradient
from .metrics import fscore, game, mae, record_from_prediction
from .optim import adam_step, init_adam_state


class NumericError(RuntimeError):
    """Raised when the training loss turns non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    weight_decay: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    flip_augment: bool = True
    split_method: str = "watershed"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("Adam moment decays must lie in [0, 1)")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    image_level: float
    point_level: float
    split_level: float
    false_positive: float
    total: float
    val_mae: float
    val_fscore: float


@dataclass(frozen=True)
class TrainResult:
    params: FcnParams
    history: tuple
    best_epoch: int
    best_val_mae: float


def _check_samples(samples, name):
    samples = list(samples)
    if not samples:
        raise ValueError(f"{name} set must not be empty")
    for image, ann in samples:
        if not isinstance(ann, PointAnnotations):
            raise ValueError(f"{name} annotations must be PointAnnotations")
        arr = np.asarray(image)
        if arr.ndim not in (2, 3):
            raise ValueError(f"{name} images must be 2-d or 3-d arrays")
        if arr.shape[:2] != (ann.height, ann.width):
            raise ValueError(f"{name} image shape {arr.shape[:2]} does not "
                             f"match its annotation canvas")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name} images must be finite")
    return samples


def evaluate(params: FcnParams, samples) -> list:
    """EvalRecords for a list of (image, annotations) pairs."""
    records = []
    for image, ann in samples:
        counts, labeling = predict_counts(params, image)
        records.append(record_from_prediction(ann, counts, labeling))
    return records


def train(train_samples, val_samples, cfg: TrainConfig,
          loss_cfg: LossConfig | None = None,
          fcn_cfg: FcnConfig | None = None,
          initial_params: FcnParams | None = None) -> TrainResult:
    """Train on (image, PointAnnotations) pairs; returns the
    best-validation-MAE parameter snapshot and the per-epoch log."""
    train_samples = _check_samples(train_samples, "train")
    val_samples = _check_samples(val_samples, "validation")
    if loss_cfg is None:
        loss_cfg = LossConfig(split_method=cfg.split_method)
    elif loss_cfg.split_method != cfg.split_method:
        raise ValueError(
            f"LossConfig.split_method {loss_cfg.split_method!r} conflicts with "
            f"TrainConfig.split_method {cfg.split_method!r}"
        )
    if initial_params is not None:
        params = initial_params
    else:
        params = init_params(fcn_cfg if fcn_cfg is not None else FcnConfig(), cfg.seed)

    state = init_adam_state(params)
    rng = np.random.default_rng(cfg.seed)
    best_params = params
    best_mae = math.inf
    best_epoch = 0
    stale = 0
    history = []

    plan = [(i, False) for i in range(len(train_samples))]
    if cfg.flip_augment:
        plan += [(i, True) for i in range(len(train_samples))]

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(plan))
        sums = np.zeros(5)
        for k in order:
            idx, flipped = plan[k]
            image, ann = train_samples[idx]
            if flipped:
                image, ann = flip_horizontal(image, ann)
            # inputs were validated up front, so a ValueError from the
            # forward pass here means activations overflowed float64
            try:
                logits = forward(params, image)
            except ValueError as exc:
                raise NumericError(
                    f"non-finite forward pass at epoch {epoch}: {exc}") from exc
            breakdown, grad = loss_and_gradient(logits, ann, loss_cfg)
            if not math.isfinite(breakdown.total):
                raise NumericError(
                    f"non-finite loss {breakdown.total} at epoch {epoch}"
                )
            grads = backward(params, image, grad)
            try:
                params, state = adam_step(params, grads, state, cfg)
            except ValueError as exc:  # diverged into non-finite parameters
                raise NumericError(
                    f"optimizer produced non-finite parameters at epoch "
                    f"{epoch}: {exc}") from exc
            sums += (breakdown.image_level, breakdown.point_level,
                     breakdown.split_level, breakdown.false_positive,
                     breakdown.total)
        means = sums / len(plan)

        try:
            records = evaluate(params, val_samples)
        except ValueError as exc:
            raise NumericError(
                f"non-finite validation pass at epoch {epoch}: {exc}") from exc
        # With more than two classes there is no single count pair, so fall
        # back to the level-0 grid error, which pools classes per image.
        val_mae = mae(records) if records[0].num_classes == 2 else game(records, 0)
        val_f = fscore(records)
        history.append(EpochStats(epoch, *(float(x) for x in means), val_mae, val_f))

        if val_mae < best_mae:
            best_mae = val_mae
            best_params = params
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    return TrainResult(best_params, tuple(history), best_epoch, best_mae)
