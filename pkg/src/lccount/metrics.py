"""Counting and localization metrics.

All metrics consume :class:`EvalRecord` lists — one record per evaluated
image, carrying true/predicted per-class counts, predicted blob centers,
the ground-truth points, and (for the F-Score) the blob labeling with
points assigned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blobs import BlobLabeling, assign_points, blob_centers
from .grid import PointAnnotations


@dataclass(frozen=True)
class EvalRecord:
    """Per-image evaluation payload.

    ``true_counts``/``pred_counts`` have one slot per class (index 0,
    background, stays 0).  ``centers`` is (K, 2) with ``center_classes``
    aligned; ``points`` is the (N, 3) ground truth.  ``labeling`` (with
    assigned points) is required only by :func:`fscore`.
    """

    true_counts: np.ndarray
    pred_counts: np.ndarray
    centers: np.ndarray
    center_classes: np.ndarray
    points: np.ndarray
    height: int
    width: int
    labeling: BlobLabeling | None = None

    def __post_init__(self):
        tc = np.array(self.true_counts, dtype=np.int64)
        pc = np.array(self.pred_counts, dtype=np.int64)
        if tc.ndim != 1 or tc.shape != pc.shape or tc.shape[0] < 2:
            raise ValueError("true/predicted counts must be aligned (C,) vectors, C >= 2")
        if tc.min() < 0 or pc.min() < 0:
            raise ValueError("counts must be non-negative")
        ct = np.array(self.centers, dtype=np.int64).reshape(-1, 2)
        if ct.shape[0]:
            if ct[:, 0].min() < 0 or ct[:, 0].max() >= self.height \
                    or ct[:, 1].min() < 0 or ct[:, 1].max() >= self.width:
                raise ValueError("blob centers fall outside the image")
        cc = np.array(self.center_classes, dtype=np.int64).reshape(-1)
        if cc.shape[0] != ct.shape[0]:
            raise ValueError("center_classes must align with centers")
        pt = np.array(self.points, dtype=np.int64).reshape(-1, 3)
        for arr in (tc, pc, ct, cc, pt):
            arr.setflags(write=False)
        object.__setattr__(self, "true_counts", tc)
        object.__setattr__(self, "pred_counts", pc)
        object.__setattr__(self, "centers", ct)
        object.__setattr__(self, "center_classes", cc)
        object.__setattr__(self, "points", pt)

    @property
    def num_classes(self) -> int:
        return self.true_counts.shape[0]


def record_from_prediction(annotations: PointAnnotations, pred_counts,
                           labeling: BlobLabeling) -> EvalRecord:
    """Bundle one image's prediction into an EvalRecord.

    ``labeling`` may arrive unassigned; points are (re)assigned here so
    the record is always F-Score-ready.
    """
    pred_counts = np.asarray(pred_counts, dtype=np.int64)
    num_classes = pred_counts.shape[0]
    assigned = assign_points(labeling, annotations)
    center_classes = (assigned.classes if assigned.classes is not None
                      else np.ones(assigned.num_blobs, dtype=np.int64))
    return EvalRecord(
        true_counts=annotations.class_counts(num_classes),
        pred_counts=pred_counts,
        centers=blob_centers(assigned),
        center_classes=center_classes,
        points=annotations.points,
        height=annotations.height,
        width=annotations.width,
        labeling=assigned,
    )


def _require_records(records):
    records = list(records)
    if not records:
        raise ValueError("metrics need at least one record")
    c = records[0].num_classes
    if any(r.num_classes != c for r in records):
        raise ValueError("records disagree on the number of classes")
    return records


def mae(records) -> float:
    """Mean absolute count error for single-object-class records."""
    records = _require_records(records)
    if records[0].num_classes != 2:
        raise ValueError("mae is defined for single-class records (C == 2)")
    errs = [abs(int(r.pred_counts[1]) - int(r.true_counts[1])) for r in records]
    return float(np.mean(errs))


def game(records, level: int) -> float:
    """Grid average mean absolute error at a given level.

    Each image is partitioned into 2^level x 2^level regions with edges
    at ``floor(i * size / 2^level)``, so every level's grid refines the
    previous one exactly (each coarse region is a union of fine regions,
    even when the size does not divide evenly).  The per-image error is
    the sum over regions of |predicted centers in the region −
    ground-truth points in the region|, and images are averaged.  The
    refinement property makes the error non-decreasing in the level, and
    GAME(0) coincides with MAE on single-class records.
    """
    if level < 0:
        raise ValueError("GAME level must be >= 0")
    records = _require_records(records)
    n = 2 ** level
    per_image = []
    for rec in records:

        def region(r, c):
            # proportional edges: floor(floor(r*2n/H)/2) == floor(r*n/H),
            # so halving a fine index always recovers the coarse index
            return (int(r) * n // rec.height, int(c) * n // rec.width)

        diff = {}
        for r, c in rec.centers:
            key = region(r, c)
            diff[key] = diff.get(key, 0) + 1
        for r, c, _ in rec.points:
            key = region(r, c)
            diff[key] = diff.get(key, 0) - 1
        per_image.append(sum(abs(v) for v in diff.values()))
    return float(np.mean(per_image))


def fscore(records) -> float:
    """Blob-level F-Score: 2TP / (2TP + FP + FN).

    A blob is a true positive when it contains at least one point of its
    class (multi-point blobs still count once; the surplus points land in
    FN = points − TP).  TP/FP/FN aggregate over all records per class;
    multi-class results average the per-class scores.  A class with no
    blobs and no points anywhere scores 1.0.
    """
    records = _require_records(records)
    num_classes = records[0].num_classes
    scores = []
    for cls in range(1, num_classes):
        tp = fp = points = 0
        for rec in records:
            if rec.labeling is None or rec.labeling.tallies is None:
                raise ValueError("fscore needs records with assigned blob labelings")
            lab = rec.labeling
            blob_classes = (lab.classes if lab.classes is not None
                            else np.ones(lab.num_blobs, dtype=np.int64))
            for b in range(lab.num_blobs):
                if blob_classes[b] != cls:
                    continue
                if lab.tallies[b] >= 1:
                    tp += 1
                else:
                    fp += 1
            points += int((rec.points[:, 2] == cls).sum())
        fn = points - tp
        denom = 2 * tp + fp + fn
        scores.append(1.0 if denom == 0 else 2.0 * tp / denom)
    return float(np.mean(scores))


def mrmse_family(records) -> dict:
    """The four RMSE-style multi-class counting metrics.

    * mrmse: per class, root of the mean squared count error over all
      images; classes averaged.
    * mrmse_nz: same, but each class averages only over images where its
      true count is nonzero (classes with no such image are skipped).
    * m_relrmse / m_relrmse_nz: squared errors divided by (true + 1).
    """
    records = _require_records(records)
    num_classes = records[0].num_classes
    out = {"mrmse": [], "mrmse_nz": [], "m_relrmse": [], "m_relrmse_nz": []}
    for cls in range(1, num_classes):
        true = np.array([int(r.true_counts[cls]) for r in records], dtype=np.float64)
        pred = np.array([int(r.pred_counts[cls]) for r in records], dtype=np.float64)
        sq = (pred - true) ** 2
        rel = sq / (true + 1.0)
        out["mrmse"].append(np.sqrt(sq.mean()))
        out["m_relrmse"].append(np.sqrt(rel.mean()))
        nz = true > 0
        if nz.any():
            out["mrmse_nz"].append(np.sqrt(sq[nz].mean()))
            out["m_relrmse_nz"].append(np.sqrt(rel[nz].mean()))
    result = {}
    for key, vals in out.items():
        if not vals:
            raise ValueError(f"{key}: no class has a nonzero ground-truth count")
        result[key] = float(np.mean(vals))
    return result
