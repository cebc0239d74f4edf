"""Core grid data model: logits, per-pixel class distributions, and point labels.

Everything downstream (blob analysis, losses, metrics) consumes the three
immutable value types defined here:

* :class:`LogitMap` — raw per-pixel class scores, shape (H, W, C)
* :class:`ProbMap` — per-pixel distributions over classes, shape (H, W, C)
* :class:`PointAnnotations` — sparse (row, col, class) ground-truth points

Class 0 is always the background class; object classes are 1..C-1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_SUM_TOL = 1e-6


def _frozen_f64(values, name):
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"{name} must be a (H, W, C) array, got shape {arr.shape}")
    h, w, c = arr.shape
    if h < 1 or w < 1:
        raise ValueError(f"{name} needs at least one pixel, got shape {arr.shape}")
    if c < 2:
        raise ValueError(f"{name} needs >= 2 classes (background + objects), got {c}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LogitMap:
    """Raw per-pixel class scores, shape (H, W, C) float64, all finite."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_f64(self.values, "LogitMap"))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def num_classes(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class ProbMap:
    """Per-pixel class distributions, shape (H, W, C) float64.

    Entries lie in [0, 1] and each pixel's distribution sums to 1 within
    1e-6; both are validated at construction.
    """

    values: np.ndarray

    def __post_init__(self):
        arr = _frozen_f64(self.values, "ProbMap")
        if arr.min() < -_SUM_TOL or arr.max() > 1.0 + _SUM_TOL:
            raise ValueError("ProbMap entries must lie in [0, 1]")
        sums = arr.sum(axis=2)
        worst = np.abs(sums - 1.0).max()
        if worst > _SUM_TOL:
            raise ValueError(
                f"ProbMap pixel distributions must sum to 1 (worst deviation {worst:.3g})"
            )
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def num_classes(self) -> int:
        return self.values.shape[2]

    def background(self) -> np.ndarray:
        """The background-class plane S[:, :, 0], shape (H, W)."""
        return self.values[:, :, 0]

    def class_plane(self, c: int) -> np.ndarray:
        if not 0 <= c < self.num_classes:
            raise ValueError(f"class {c} out of range for {self.num_classes} classes")
        return self.values[:, :, c]


@dataclass(frozen=True)
class PointAnnotations:
    """Sparse point labels: one (row, col, class) triple per object.

    ``points`` has shape (N, 3) int64 with class >= 1 (points never carry
    the background class); N may be 0.  Coordinates are validated against
    the (height, width) canvas.
    """

    points: np.ndarray
    height: int
    width: int

    def __post_init__(self):
        arr = np.array(self.points, dtype=np.int64)
        if arr.size == 0:
            arr = arr.reshape(0, 3)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ValueError(f"points must be (N, 3) (row, col, class), got {arr.shape}")
        if self.height < 1 or self.width < 1:
            raise ValueError("annotation canvas must be at least 1x1")
        if arr.shape[0]:
            r, c, k = arr[:, 0], arr[:, 1], arr[:, 2]
            if r.min() < 0 or r.max() >= self.height or c.min() < 0 or c.max() >= self.width:
                raise ValueError("point coordinates fall outside the canvas")
            if k.min() < 1:
                raise ValueError("point classes must be >= 1 (0 is background)")
        arr.setflags(write=False)
        object.__setattr__(self, "points", arr)

    @classmethod
    def from_list(cls, triples, height: int, width: int) -> "PointAnnotations":
        return cls(np.array(list(triples), dtype=np.int64).reshape(-1, 3), height, width)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def rows(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def cols(self) -> np.ndarray:
        return self.points[:, 1]

    @property
    def classes(self) -> np.ndarray:
        return self.points[:, 2]

    def of_class(self, c: int) -> "PointAnnotations":
        """The subset of points carrying class ``c`` (order preserved)."""
        return PointAnnotations(self.points[self.classes == c], self.height, self.width)

    def class_counts(self, num_classes: int) -> np.ndarray:
        """Ground-truth object count per class, shape (num_classes,); index 0 is 0."""
        counts = np.zeros(num_classes, dtype=np.int64)
        for k in self.classes:
            if k >= num_classes:
                raise ValueError(f"point class {k} out of range for {num_classes} classes")
            counts[k] += 1
        return counts


def softmax(logits: LogitMap) -> ProbMap:
    """Per-pixel softmax over the class axis (max-shifted for stability)."""
    z = logits.values
    shifted = z - z.max(axis=2, keepdims=True)
    e = np.exp(shifted)
    return ProbMap(e / e.sum(axis=2, keepdims=True))


def argmax_class(probs: ProbMap) -> np.ndarray:
    """Per-pixel argmax class, shape (H, W) int64; ties go to the lowest index."""
    return probs.values.argmax(axis=2)


def foreground_mask(probs: ProbMap) -> np.ndarray:
    """Boolean (H, W) mask of pixels whose argmax class is non-background."""
    return argmax_class(probs) > 0


def present_classes(annotations: PointAnnotations, num_classes: int):
    """Split object classes 1..C-1 by whether any annotation carries them.

    Returns ``(present, absent)`` as ascending tuples.  Background (class
    0) is in neither list.
    """
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    seen = set(int(k) for k in annotations.classes)
    bad = [k for k in seen if k >= num_classes]
    if bad:
        raise ValueError(f"annotation classes {sorted(bad)} out of range for {num_classes} classes")
    present = tuple(c for c in range(1, num_classes) if c in seen)
    absent = tuple(c for c in range(1, num_classes) if c not in seen)
    return present, absent
