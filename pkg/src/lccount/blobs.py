"""Blob extraction and point-to-blob assignment.

A *blob* is an 8-connected component of same-class foreground pixels in
the argmax image of a :class:`~lccount.grid.ProbMap`.  Blob ids are dense
ints 1..K assigned in row-major first-appearance order (scanning classes
in ascending order contributes nothing extra: ids are re-densified over
the union so the ordering is purely spatial per class, then stacked by
class).  Background keeps label 0.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .grid import PointAnnotations, ProbMap, argmax_class


@dataclass(frozen=True)
class BlobLabeling:
    """A labelled blob image plus optional per-blob bookkeeping.

    Attributes
    ----------
    labels : (H, W) int32 array; 0 = background, blobs are 1..num_blobs.
    num_blobs : number of blobs K.
    classes : (K,) int64 class of each blob, or None for class-agnostic
        labelings produced directly from a binary mask.
    sizes : (K,) int64 pixel count of each blob.
    tallies : (K,) int64 number of annotation points matched to each
        blob, or None before :func:`assign_points` has run.
    point_blob : (N,) int64 blob id (0 = unmatched) for each annotation
        point, aligned with the order of the annotations; None before
        assignment.
    points : (N, 3) int64 snapshot of the assigned annotation triples
        (row, col, class), aligned with ``point_blob``; None before
        assignment.
    """

    labels: np.ndarray
    num_blobs: int
    classes: np.ndarray | None = None
    sizes: np.ndarray | None = None
    tallies: np.ndarray | None = None
    point_blob: np.ndarray | None = None
    points: np.ndarray | None = None

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def blob_mask(self, blob_id: int) -> np.ndarray:
        if not 1 <= blob_id <= self.num_blobs:
            raise ValueError(f"blob id {blob_id} out of range 1..{self.num_blobs}")
        return self.labels == blob_id

    def _require_assigned(self):
        if self.tallies is None:
            raise ValueError("points have not been assigned; call assign_points first")

    def multi_point_blob_ids(self) -> np.ndarray:
        """Ids of blobs matched to two or more points, ascending."""
        self._require_assigned()
        return np.flatnonzero(self.tallies >= 2) + 1

    def unmatched_blob_ids(self) -> np.ndarray:
        """Ids of blobs matched to no point at all, ascending."""
        self._require_assigned()
        return np.flatnonzero(self.tallies == 0) + 1

    def points_in_blob(self, blob_id: int) -> np.ndarray:
        """Indices (into the annotation order) of points matched to a blob."""
        self._require_assigned()
        if not 1 <= blob_id <= self.num_blobs:
            raise ValueError(f"blob id {blob_id} out of range 1..{self.num_blobs}")
        return np.flatnonzero(self.point_blob == blob_id)

    def point_coords_in_blob(self, blob_id: int) -> np.ndarray:
        """(M, 2) rows/cols of the points matched to a blob, in annotation order."""
        return self.points[self.points_in_blob(blob_id), :2]


def _finalize(labels: np.ndarray, count: int, classes: np.ndarray | None) -> BlobLabeling:
    labels = np.ascontiguousarray(labels, dtype=np.int32)
    sizes = np.bincount(labels.ravel(), minlength=count + 1)[1:].astype(np.int64)
    labels.setflags(write=False)
    if classes is not None:
        classes = np.asarray(classes, dtype=np.int64)
        classes.setflags(write=False)
    sizes.setflags(write=False)
    return BlobLabeling(labels=labels, num_blobs=count, classes=classes, sizes=sizes)


def connected_components(mask) -> BlobLabeling:
    """8-connected components of a binary mask (class-agnostic labeling)."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-d, got shape {mask.shape}")
    labels, count = kernels.label_components(np.ascontiguousarray(mask, dtype=np.uint8))
    return _finalize(labels, int(count), None)


def label_blobs(probs: ProbMap) -> BlobLabeling:
    """Blobs of a probability map: per-class components of its argmax image.

    Components are extracted independently for every object class c >= 1
    and stacked into one dense id space (class 1's blobs first, then
    class 2's, ...), so two touching blobs of different classes stay
    distinct.
    """
    cls = argmax_class(probs)
    h, w = cls.shape
    labels = np.zeros((h, w), dtype=np.int32)
    blob_classes: list[int] = []
    offset = 0
    for c in range(1, probs.num_classes):
        mask = np.ascontiguousarray(cls == c, dtype=np.uint8)
        if not mask.any():
            continue
        sub, count = kernels.label_components(mask)
        sub = np.asarray(sub)
        labels[sub > 0] = sub[sub > 0] + offset
        blob_classes.extend([c] * int(count))
        offset += int(count)
    return _finalize(labels, offset, np.array(blob_classes, dtype=np.int64))


def assign_points(labeling: BlobLabeling, annotations: PointAnnotations) -> BlobLabeling:
    """Match annotation points to the blobs that contain them.

    A point matches the blob under its pixel; for class-aware labelings
    the blob's class must equal the point's class, otherwise the point
    counts as unmatched even if it sits on some other class's blob.
    Returns a new labeling with ``tallies`` and ``point_blob`` filled in.
    """
    if (annotations.height, annotations.width) != (labeling.height, labeling.width):
        raise ValueError(
            f"annotation canvas {(annotations.height, annotations.width)} does not match "
            f"label image {(labeling.height, labeling.width)}"
        )
    n = len(annotations)
    point_blob = np.zeros(n, dtype=np.int64)
    tallies = np.zeros(labeling.num_blobs, dtype=np.int64)
    for i in range(n):
        r, c, k = annotations.points[i]
        b = int(labeling.labels[r, c])
        if b == 0:
            continue
        if labeling.classes is not None and labeling.classes[b - 1] != k:
            continue
        point_blob[i] = b
        tallies[b - 1] += 1
    tallies.setflags(write=False)
    point_blob.setflags(write=False)
    return replace(labeling, tallies=tallies, point_blob=point_blob,
                   points=annotations.points)


def blob_centers(labeling: BlobLabeling) -> np.ndarray:
    """Centroid pixel of every blob, shape (K, 2) int64 in blob-id order.

    The centroid is the mean of the blob's pixel coordinates, rounded
    half-up per axis (so a 2x2 blob at rows/cols {0, 1} centers on
    (1, 1)) and clamped to the image.
    """
    k = labeling.num_blobs
    centers = np.zeros((k, 2), dtype=np.int64)
    if k == 0:
        return centers
    flat = labeling.labels.ravel()
    idx = np.flatnonzero(flat)
    ids = flat[idx]
    rows = idx // labeling.width
    cols = idx % labeling.width
    counts = np.bincount(ids, minlength=k + 1)[1:]
    sum_r = np.bincount(ids, weights=rows, minlength=k + 1)[1:]
    sum_c = np.bincount(ids, weights=cols, minlength=k + 1)[1:]
    centers[:, 0] = np.floor(sum_r / counts + 0.5).astype(np.int64)
    centers[:, 1] = np.floor(sum_c / counts + 0.5).astype(np.int64)
    centers[:, 0] = np.clip(centers[:, 0], 0, labeling.height - 1)
    centers[:, 1] = np.clip(centers[:, 1], 0, labeling.width - 1)
    return centers
