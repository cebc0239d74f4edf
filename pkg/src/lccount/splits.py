"""Split-boundary generators for blobs containing multiple annotations.

Training needs a set of pixels T_b that should be pushed toward the
background class so that merged objects separate into one blob each.
Two generators produce such boundaries:

* :func:`watershed_split` — seeded watersheds on the distance transform
  of the foreground mask: one *global* pass over the whole image seeded
  with every annotation, plus one *local* pass inside each multi-point
  blob seeded with its own points.  T_b is the union of basin-boundary
  (ridge) pixels from all passes.
* :func:`line_split` — for each multi-point blob, pair each point with
  its nearest neighbour and, per pair, pick the straight segment
  perpendicular to the pair's axis whose pixels have the highest mean
  background probability.

Every boundary pixel carries a weight: the annotation tally of its blob
when it lies inside a blob with >= 2 points, otherwise 1.

Degenerate-geometry fallbacks (documented determinism):

* a multi-point blob whose basins touch only diagonally has no
  4-adjacent ridge pair; the local pass then falls back to 8-adjacent
  comparison so the blob still yields a boundary;
* a point pair with no integer anchor step strictly between the points
  (distance < 2) anchors one candidate at the pair midpoint;
* if every anchor of a pair rasterizes outside the blob (strongly
  concave blobs), the midpoint is snapped to the nearest blob pixel.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .blobs import BlobLabeling
from .grid import PointAnnotations, ProbMap
from .watershed import distance_transform, ridge_pixels, seeded_watershed

# invocation counters: inference code must never trigger the split
# machinery, and tests assert that through this hook
_INVOCATIONS = {"watershed_split": 0, "line_split": 0}


def invocation_counts() -> dict:
    """Snapshot of how often each boundary generator has run (test hook)."""
    return dict(_INVOCATIONS)


@dataclass(frozen=True)
class SplitBoundary:
    """A weighted set of boundary pixels.

    ``pixels`` is (M, 2) int64, unique rows sorted lexicographically;
    ``weights`` aligns with it and every weight is >= 1.
    """

    pixels: np.ndarray
    weights: np.ndarray
    height: int
    width: int

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.int64).reshape(-1, 2)
        wt = np.array(self.weights, dtype=np.int64).reshape(-1)
        if px.shape[0] != wt.shape[0]:
            raise ValueError("pixels and weights must have equal length")
        if px.shape[0]:
            if px[:, 0].min() < 0 or px[:, 0].max() >= self.height \
                    or px[:, 1].min() < 0 or px[:, 1].max() >= self.width:
                raise ValueError("boundary pixels fall outside the image")
            if wt.min() < 1:
                raise ValueError("boundary weights must be >= 1")
            order = np.lexsort((px[:, 1], px[:, 0]))
            px, wt = px[order], wt[order]
            flat = px[:, 0] * self.width + px[:, 1]
            if len(np.unique(flat)) != len(flat):
                raise ValueError("boundary pixels must be unique")
        px.setflags(write=False)
        wt.setflags(write=False)
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "weights", wt)

    @classmethod
    def empty(cls, height: int, width: int) -> "SplitBoundary":
        return cls(np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64),
                   height, width)

    def __len__(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class PointPairing:
    """Nearest-neighbour pairing of the points inside one blob.

    ``pairs`` holds index pairs (i, j) with i < j into the point list
    this pairing was built from, deduplicated and sorted.
    """

    pairs: tuple


@dataclass(frozen=True)
class SegmentCandidate:
    """One rasterized perpendicular segment and its mean-background score."""

    pixels: tuple
    score: float


def pair_points(points) -> PointPairing:
    """Pair each point with its Euclidean-nearest other point.

    Distance ties pick the partner with the lexicographically smallest
    (row, col); unordered duplicates collapse.  Needs >= 2 points.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = pts.shape[0]
    if n < 2:
        raise ValueError(f"pairing needs at least 2 points, got {n}")
    pairs = set()
    for i in range(n):
        best = -1
        best_key = None
        for j in range(n):
            if j == i:
                continue
            d2 = float((pts[i, 0] - pts[j, 0]) ** 2 + (pts[i, 1] - pts[j, 1]) ** 2)
            key = (d2, pts[j, 0], pts[j, 1], j)
            if best < 0 or key < best_key:
                best, best_key = j, key
        pairs.add((min(i, best), max(i, best)))
    return PointPairing(tuple(sorted(pairs)))


def _march(labels, blob_id, r0, c0, dr, dc, start):
    """Collect in-blob pixels along a ray until the first pixel outside."""
    h, w = labels.shape
    out = []
    k = start
    while True:
        r = math.floor(r0 + k * dr + 0.5)
        c = math.floor(c0 + k * dc + 0.5)
        if r < 0 or r >= h or c < 0 or c >= w or labels[r, c] != blob_id:
            break
        if not out or out[-1] != (r, c):
            out.append((r, c))
        k += 1
    return out


def _segment_at(s0, labels, blob_id, ar, ac, pr, pc):
    """Rasterize the segment through anchor (ar, ac) along direction (pr, pc),
    grown in both directions until each end exits the blob; None when the
    anchor pixel itself is outside the blob."""
    h, w = labels.shape
    r = math.floor(ar + 0.5)
    c = math.floor(ac + 0.5)
    if r < 0 or r >= h or c < 0 or c >= w or labels[r, c] != blob_id:
        return None
    fwd = _march(labels, blob_id, ar, ac, pr, pc, 1)
    bwd = _march(labels, blob_id, ar, ac, -pr, -pc, 1)
    pixels = list(reversed(bwd))
    if not pixels or pixels[-1] != (r, c):
        pixels.append((r, c))
    for px in fwd:
        if px != pixels[-1]:
            pixels.append(px)
    score = float(np.mean([s0[pr_, pc_] for pr_, pc_ in pixels]))
    return SegmentCandidate(tuple(pixels), score)


def candidate_segments(s0, labels, blob_id, p, q) -> list:
    """All scored perpendicular candidates for one point pair, in
    enumeration order (ascending anchor step along the p->q line)."""
    pr0, pc0 = float(p[0]), float(p[1])
    qr, qc = float(q[0]), float(q[1])
    d = math.hypot(qr - pr0, qc - pc0)
    if d == 0.0:
        warnings.warn("degenerate point pair (identical coordinates) skipped")
        return []
    ur, uc = (qr - pr0) / d, (qc - pc0) / d
    perp_r, perp_c = -uc, ur
    steps = [float(t) for t in range(1, math.ceil(d))] or [d / 2.0]
    cands = []
    for t in steps:
        seg = _segment_at(s0, labels, blob_id, pr0 + t * ur, pc0 + t * uc, perp_r, perp_c)
        if seg is not None:
            cands.append(seg)
    if not cands:
        # strongly concave blob: every anchor rounded outside it — snap
        # the midpoint to the nearest blob pixel (ties: row-major)
        mr, mc = pr0 + 0.5 * d * ur, pc0 + 0.5 * d * uc
        rows, cols = np.nonzero(labels == blob_id)
        d2 = (rows - mr) ** 2 + (cols - mc) ** 2
        k = int(np.argmin(d2))
        seg = _segment_at(s0, labels, blob_id, float(rows[k]), float(cols[k]),
                          perp_r, perp_c)
        if seg is not None:
            cands.append(seg)
    return cands


def best_split_segment(s0, labels, blob_id, p, q) -> SegmentCandidate | None:
    """The highest-scoring candidate; ties keep the earliest candidate."""
    best = None
    for cand in candidate_segments(s0, labels, blob_id, p, q):
        if best is None or cand.score > best.score:
            best = cand
    return best


def _require_assigned(labeling: BlobLabeling):
    if labeling.tallies is None or labeling.points is None:
        raise ValueError("labeling has no assigned points; call assign_points first")


def _boundary_from_alpha(pix2alpha: dict, height: int, width: int) -> SplitBoundary:
    if not pix2alpha:
        return SplitBoundary.empty(height, width)
    px = np.array(sorted(pix2alpha), dtype=np.int64)
    wt = np.array([pix2alpha[tuple(p)] for p in px], dtype=np.int64)
    return SplitBoundary(px, wt, height, width)


def _alpha_for(labeling: BlobLabeling, r: int, c: int) -> int:
    b = int(labeling.labels[r, c])
    if b > 0 and labeling.tallies[b - 1] >= 2:
        return int(labeling.tallies[b - 1])
    return 1


def watershed_split(mask, labeling: BlobLabeling, annotations: PointAnnotations,
                    *, include_global: bool = True, include_local: bool = True
                    ) -> SplitBoundary:
    """Watershed-based boundary: ridges of the global and local passes.

    The global pass floods the whole image on the distance transform of
    ``mask`` seeded with every annotation; the local passes re-flood each
    multi-point blob with its own points.  Coincident annotation pixels
    collapse to one seed.  Ridges are 4-adjacent label changes, with a
    per-blob 8-adjacent fallback when a multi-seed local pass produces
    none (possible only for diagonal basin contact).
    """
    _INVOCATIONS["watershed_split"] += 1
    _require_assigned(labeling)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (labeling.height, labeling.width):
        raise ValueError("mask shape does not match the blob labeling")
    if (annotations.height, annotations.width) != mask.shape:
        raise ValueError("annotation canvas does not match the mask")
    h, w = mask.shape
    if len(annotations) == 0:
        return SplitBoundary.empty(h, w)

    relief = distance_transform(mask)
    ridge = np.zeros((h, w), dtype=bool)

    if include_global:
        seeds = _unique_rows(annotations.points[:, :2])
        full = np.ones((h, w), dtype=bool)
        ridge |= ridge_pixels(seeded_watershed(relief, seeds, full), full, 4)

    if include_local:
        for blob_id in labeling.multi_point_blob_ids():
            dom = labeling.labels == blob_id
            seeds = _unique_rows(labeling.point_coords_in_blob(int(blob_id)))
            if len(seeds) < 2:
                continue  # coincident points: nothing to split locally
            local = seeded_watershed(relief, seeds, dom)
            r = ridge_pixels(local, dom, 4)
            if not r.any():
                r = ridge_pixels(local, dom, 8)
            ridge |= r

    pix2alpha = {}
    for r, c in zip(*np.nonzero(ridge)):
        pix2alpha[(int(r), int(c))] = _alpha_for(labeling, int(r), int(c))
    return _boundary_from_alpha(pix2alpha, h, w)


def line_split(probs: ProbMap, labeling: BlobLabeling) -> SplitBoundary:
    """Line-based boundary: per multi-point blob and per nearest-neighbour
    point pair, the perpendicular segment with the highest mean background
    probability."""
    _INVOCATIONS["line_split"] += 1
    _require_assigned(labeling)
    if (probs.height, probs.width) != (labeling.height, labeling.width):
        raise ValueError("probability map shape does not match the blob labeling")
    s0 = probs.background()
    pix2alpha = {}
    for blob_id in labeling.multi_point_blob_ids():
        pts = labeling.point_coords_in_blob(int(blob_id))
        tally = int(labeling.tallies[blob_id - 1])
        pairing = pair_points(pts)
        for i, j in pairing.pairs:
            best = best_split_segment(s0, labeling.labels, int(blob_id), pts[i], pts[j])
            if best is None:
                continue
            for px in best.pixels:
                pix2alpha[px] = tally
    return _boundary_from_alpha(pix2alpha, labeling.height, labeling.width)


def _unique_rows(arr) -> np.ndarray:
    """Unique (row, col) pairs preserving first-occurrence order."""
    seen = set()
    out = []
    for r, c in np.asarray(arr).reshape(-1, 2):
        key = (int(r), int(c))
        if key not in seen:
            seen.add(key)
            out.append(key)
    return np.array(out, dtype=np.int64).reshape(-1, 2)
