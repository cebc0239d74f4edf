"""Boundary generators: nearest-pair line splits and watershed splits.

Oracles: a brute-force nearest-neighbour pairing and an independent
exhaustive enumeration of perpendicular split segments (every integer
anchor step, straightforward ray marching).
"""

import math
import warnings

import numpy as np
import pytest

from lccount import (
    PointAnnotations,
    ProbMap,
    SplitBoundary,
    assign_points,
    best_split_segment,
    candidate_segments,
    connected_components,
    label_blobs,
    line_split,
    pair_points,
    watershed_split,
)
from tests.test_blobs import probs_from_argmax


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------


def pairing_oracle(points):
    """Brute-force nearest partner per point with the documented tie-breaks:
    smaller squared distance, then lexicographically smaller partner
    coordinates, then smaller partner index; unordered pairs deduplicate."""
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    pairs = set()
    for i in range(n):
        keys = []
        for j in range(n):
            if j == i:
                continue
            d2 = (pts[i, 0] - pts[j, 0]) ** 2 + (pts[i, 1] - pts[j, 1]) ** 2
            keys.append(((d2, pts[j, 0], pts[j, 1], j), j))
        j = min(keys)[1]
        pairs.add((min(i, j), max(i, j)))
    return tuple(sorted(pairs))


def march_oracle(labels, blob_id, anchor_r, anchor_c, dr, dc):
    """Maximal run of rounded in-blob pixels through the anchor along
    (dr, dc), truncated at the first out-of-blob step per direction."""
    h, w = labels.shape

    def rounded(k):
        return math.floor(anchor_r + k * dr + 0.5), math.floor(anchor_c + k * dc + 0.5)

    r0, c0 = rounded(0)
    if not (0 <= r0 < h and 0 <= c0 < w) or labels[r0, c0] != blob_id:
        return None
    back = []
    k = -1
    while True:
        r, c = rounded(k)
        if not (0 <= r < h and 0 <= c < w) or labels[r, c] != blob_id:
            break
        back.append((r, c))
        k -= 1
    fwd = []
    k = 1
    while True:
        r, c = rounded(k)
        if not (0 <= r < h and 0 <= c < w) or labels[r, c] != blob_id:
            break
        fwd.append((r, c))
        k += 1
    pixels = list(reversed(back)) + [(r0, c0)] + fwd
    deduped = [pixels[0]]
    for px in pixels[1:]:
        if px != deduped[-1]:
            deduped.append(px)
    return deduped


def enumerate_candidates_oracle(s0, labels, blob_id, p, q):
    """(pixels, score) for every integer anchor step strictly between the
    points (or the midpoint when the points are too close)."""
    pr, pc = float(p[0]), float(p[1])
    qr, qc = float(q[0]), float(q[1])
    d = math.hypot(qr - pr, qc - pc)
    if d == 0:
        return []
    ur, uc = (qr - pr) / d, (qc - pc) / d
    steps = [float(t) for t in range(1, math.ceil(d))] or [d / 2.0]
    out = []
    for t in steps:
        seg = march_oracle(labels, blob_id, pr + t * ur, pc + t * uc, -uc, ur)
        if seg is not None:
            score = float(np.mean([s0[r, c] for r, c in seg]))
            out.append((seg, score))
    return out


def random_blob(rng, h, w):
    """One connected random blob (as a bool mask) or None."""
    mask = rng.random((h, w)) < rng.uniform(0.35, 0.85)
    lab = connected_components(mask)
    if lab.num_blobs == 0:
        return None
    sizes = [int((lab.labels == b).sum()) for b in range(1, lab.num_blobs + 1)]
    b = int(np.argmax(sizes)) + 1
    return lab.labels == b


# ---------------------------------------------------------------------------
# pairing
# ---------------------------------------------------------------------------


def test_pair_points_simple_chain():
    pts = np.array([[0.0, 0.0], [0.0, 2.0], [0.0, 5.0]])
    assert pair_points(pts).pairs == ((0, 1), (1, 2))


def test_pair_points_mutual_nearest_collapses_to_one_pair():
    pts = np.array([[0.0, 0.0], [0.0, 1.0]])
    assert pair_points(pts).pairs == ((0, 1),)


def test_pair_points_distance_tie_prefers_lexicographic_partner():
    # point 0 is equidistant from (0, 2) and (2, 0); (0, 2) sorts first
    pts = np.array([[0.0, 0.0], [0.0, 2.0], [2.0, 0.0]])
    pairs = pair_points(pts).pairs
    assert (0, 1) in pairs
    assert pairs == pairing_oracle(pts)


def test_pair_points_needs_two():
    with pytest.raises(ValueError):
        pair_points(np.array([[0.0, 0.0]]))


def test_pair_points_matches_brute_force():
    rng = np.random.default_rng(41)
    for _ in range(60):
        n = int(rng.integers(2, 9))
        pts = rng.integers(0, 12, size=(n, 2)).astype(float)
        # collapse exact duplicates to keep the instance well-posed
        pts = np.unique(pts, axis=0)
        if len(pts) < 2:
            continue
        assert pair_points(pts).pairs == pairing_oracle(pts)


# ---------------------------------------------------------------------------
# candidate segments
# ---------------------------------------------------------------------------


def test_candidates_on_a_bar_are_single_pixels_between_the_points():
    lab = connected_components(np.ones((1, 7), dtype=bool))
    s0 = np.full((1, 7), 0.3)
    cands = candidate_segments(s0, lab.labels, 1, (0, 1), (0, 5))
    assert [c.pixels for c in cands] == [((0, 2),), ((0, 3),), ((0, 4),)]


def test_best_candidate_maximizes_mean_background():
    lab = connected_components(np.ones((1, 7), dtype=bool))
    s0 = np.full((1, 7), 0.3)
    s0[0, 3] = 0.9
    best = best_split_segment(s0, lab.labels, 1, (0, 1), (0, 5))
    assert best.pixels == ((0, 3),)
    assert best.score == pytest.approx(0.9)


def test_best_candidate_tie_keeps_first_anchor():
    lab = connected_components(np.ones((1, 7), dtype=bool))
    s0 = np.full((1, 7), 0.3)  # all candidates score equally
    best = best_split_segment(s0, lab.labels, 1, (0, 1), (0, 5))
    assert best.pixels == ((0, 2),)


def test_segment_marches_perpendicular_across_the_blob():
    # horizontal pair in a 5x5 square: the split is the full vertical
    # column through the anchor, clipped at the blob border
    mask = np.ones((5, 5), dtype=bool)
    lab = connected_components(mask)
    s0 = np.zeros((5, 5))
    cands = candidate_segments(s0, lab.labels, 1, (2, 0), (2, 4))
    cols = {px[1] for c in cands for px in c.pixels}
    assert cols == {1, 2, 3}
    for c in cands:
        rows = sorted(px[0] for px in c.pixels)
        assert rows == [0, 1, 2, 3, 4]  # spans the full blob height
        assert len({px[1] for px in c.pixels}) == 1  # stays in one column


def test_adjacent_points_fall_back_to_midpoint_anchor():
    # distance 1 < 2 leaves no integer step strictly between: use d/2
    lab = connected_components(np.ones((3, 3), dtype=bool))
    s0 = np.zeros((3, 3))
    cands = candidate_segments(s0, lab.labels, 1, (1, 0), (1, 1))
    assert len(cands) == 1
    assert (1, 1) in cands[0].pixels or (1, 0) in cands[0].pixels


def test_concave_blob_snaps_midpoint_to_nearest_blob_pixel():
    # V-shaped blob: the straight line between the two points leaves the
    # blob entirely, so every anchor rounds outside it
    mask = np.array([
        [1, 0, 1],
        [0, 1, 0],
    ], dtype=bool)
    lab = connected_components(mask)
    s0 = np.zeros((2, 3))
    cands = candidate_segments(s0, lab.labels, 1, (0, 0), (0, 2))
    assert len(cands) == 1  # the snapped-midpoint candidate


def test_identical_points_warn_and_yield_nothing():
    lab = connected_components(np.ones((2, 2), dtype=bool))
    with pytest.warns(UserWarning):
        cands = candidate_segments(np.zeros((2, 2)), lab.labels, 1, (0, 0), (0, 0))
    assert cands == []


def test_best_split_matches_exhaustive_enumeration_on_random_blobs():
    rng = np.random.default_rng(42)
    checked = 0
    while checked < 60:
        h, w = rng.integers(3, 12, size=2)
        blob = random_blob(rng, h, w)
        if blob is None or blob.sum() < 2:
            continue
        cells = np.argwhere(blob)
        i, j = rng.choice(len(cells), size=2, replace=False)
        p, q = tuple(cells[i]), tuple(cells[j])
        s0 = rng.random((h, w))
        lab = connected_components(blob)
        oracle = enumerate_candidates_oracle(s0, lab.labels, 1, p, q)
        got = best_split_segment(s0, lab.labels, 1, p, q)
        if not oracle:
            # only the snapped-midpoint fallback remains
            assert got is not None
            continue
        checked += 1
        want_score = max(score for _, score in oracle)
        assert got.score == pytest.approx(want_score, abs=1e-12)


# ---------------------------------------------------------------------------
# split boundary container
# ---------------------------------------------------------------------------


def test_split_boundary_validates_and_sorts():
    bnd = SplitBoundary(np.array([[1, 1], [0, 2]]), np.array([2, 1]), 3, 3)
    assert bnd.pixels.tolist() == [[0, 2], [1, 1]]  # lexicographic order
    assert bnd.weights.tolist() == [1, 2]  # weights follow their pixels
    with pytest.raises(ValueError):
        SplitBoundary(np.array([[0, 0], [0, 0]]), np.array([1, 1]), 2, 2)
    with pytest.raises(ValueError):
        SplitBoundary(np.array([[0, 0]]), np.array([0]), 2, 2)  # weight < 1
    with pytest.raises(ValueError):
        SplitBoundary(np.array([[5, 0]]), np.array([1]), 2, 2)  # out of canvas
    empty = SplitBoundary.empty(4, 5)
    assert len(empty) == 0 and (empty.height, empty.width) == (4, 5)


# ---------------------------------------------------------------------------
# watershed split
# ---------------------------------------------------------------------------


def bar_labeling():
    mask = np.ones((1, 7), dtype=bool)
    ann = PointAnnotations.from_list([(0, 1, 1), (0, 5, 1)], 1, 7)
    return mask, assign_points(connected_components(mask), ann), ann


def test_watershed_split_bar_ridge_and_weights():
    mask, lab, ann = bar_labeling()
    bnd = watershed_split(mask, lab, ann)
    assert bnd.pixels.tolist() == [[0, 3], [0, 4]]
    assert bnd.weights.tolist() == [2, 2]  # two points share the blob


def test_watershed_split_no_annotations_is_empty():
    mask = np.ones((2, 2), dtype=bool)
    ann = PointAnnotations.from_list([], 2, 2)
    lab = assign_points(connected_components(mask), ann)
    assert len(watershed_split(mask, lab, ann)) == 0


def test_watershed_split_global_ridges_get_weight_one_outside_multi_blobs():
    # two separate singleton blobs: the global pass still splits the image
    # between the two annotations, but every ridge pixel weighs 1
    mask = np.zeros((1, 7), dtype=bool)
    mask[0, 0] = mask[0, 6] = True
    ann = PointAnnotations.from_list([(0, 0, 1), (0, 6, 1)], 1, 7)
    lab = assign_points(connected_components(mask), ann)
    bnd = watershed_split(mask, lab, ann)
    assert len(bnd) > 0
    assert np.all(bnd.weights == 1)


def test_watershed_split_local_only_isolates_multi_blobs():
    mask, lab, ann = bar_labeling()
    local = watershed_split(mask, lab, ann, include_global=False)
    assert local.pixels.tolist() == [[0, 3], [0, 4]]
    nothing = watershed_split(mask, lab, ann, include_global=False,
                              include_local=False)
    assert len(nothing) == 0


def test_watershed_split_local_pass_falls_back_to_diagonal_ridges():
    # a 2-pixel diagonal blob: its two basins touch only diagonally, so
    # 4-neighbour comparison alone would yield no ridge at all
    mask = np.array([[1, 0], [0, 1]], dtype=bool)
    ann = PointAnnotations.from_list([(0, 0, 1), (1, 1, 1)], 2, 2)
    lab = assign_points(connected_components(mask), ann)
    bnd = watershed_split(mask, lab, ann, include_global=False)
    assert len(bnd) > 0
    assert np.all(bnd.weights == 2)


def test_watershed_split_coincident_points_collapse_to_one_seed():
    mask = np.ones((1, 5), dtype=bool)
    ann = PointAnnotations.from_list([(0, 2, 1)], 1, 5)
    lab = assign_points(connected_components(mask), ann)
    two = PointAnnotations(np.array([[0, 2, 1], [0, 2, 1]]), 1, 5)
    lab2 = assign_points(connected_components(mask), two)
    # duplicate pixels cannot seed two basins; the local pass skips the blob
    bnd = watershed_split(mask, lab2, two, include_global=False)
    assert len(bnd) == 0
    # and the global pass still works with the deduplicated seed
    full = watershed_split(mask, lab2, two)
    assert len(full) == 0  # single seed -> one basin -> no ridges


def test_watershed_split_every_multi_point_blob_contributes():
    # randomized: whenever a blob holds >= 2 distinct annotation pixels,
    # the local pass must produce at least one ridge pixel inside it
    rng = np.random.default_rng(43)
    done = 0
    while done < 40:
        h, w = rng.integers(3, 12, size=2)
        blob = random_blob(rng, h, w)
        if blob is None or blob.sum() < 2:
            continue
        cells = np.argwhere(blob)
        k = min(len(cells), int(rng.integers(2, 5)))
        sel = cells[rng.choice(len(cells), size=k, replace=False)]
        ann = PointAnnotations.from_list([(int(r), int(c), 1) for r, c in sel], h, w)
        lab = assign_points(connected_components(blob), ann)
        bnd = watershed_split(blob, lab, ann, include_global=False)
        done += 1
        inside = blob[bnd.pixels[:, 0], bnd.pixels[:, 1]] if len(bnd) else np.array([])
        assert len(bnd) > 0 and inside.all()
        assert np.all(bnd.weights == k)


# ---------------------------------------------------------------------------
# line split
# ---------------------------------------------------------------------------


def test_line_split_bar_picks_one_weighted_segment():
    classes = np.array([[1, 1, 1, 1, 1, 1, 1]])
    probs = probs_from_argmax(classes)
    ann = PointAnnotations.from_list([(0, 1, 1), (0, 5, 1)], 1, 7)
    lab = assign_points(label_blobs(probs), ann)
    bnd = line_split(probs, lab)
    assert len(bnd) == 1
    assert bnd.weights.tolist() == [2]
    assert bnd.pixels[0, 1] in (2, 3, 4)


def test_line_split_without_multi_blobs_is_empty():
    classes = np.array([[1, 0, 1]])
    probs = probs_from_argmax(classes)
    ann = PointAnnotations.from_list([(0, 0, 1), (0, 2, 1)], 1, 3)
    lab = assign_points(label_blobs(probs), ann)
    assert len(line_split(probs, lab)) == 0


def test_line_split_weights_equal_blob_tally():
    classes = np.array([[1, 1, 1, 1, 1]])
    probs = probs_from_argmax(classes)
    ann = PointAnnotations.from_list([(0, 0, 1), (0, 2, 1), (0, 4, 1)], 1, 5)
    lab = assign_points(label_blobs(probs), ann)
    bnd = line_split(probs, lab)
    assert len(bnd) >= 1
    assert np.all(bnd.weights == 3)


def test_split_generators_require_assigned_points():
    probs = probs_from_argmax(np.array([[1, 1]]))
    lab = label_blobs(probs)  # no assign_points
    with pytest.raises(ValueError):
        line_split(probs, lab)
    ann = PointAnnotations.from_list([(0, 0, 1)], 1, 2)
    with pytest.raises(ValueError):
        watershed_split(np.ones((1, 2), dtype=bool), lab, ann)
