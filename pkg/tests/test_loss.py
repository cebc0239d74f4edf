"""Four-term localization counting loss and its analytic gradient.

Oracles: worked values recomputed inline with plain ``math.log`` and
central finite differences of the frozen-context breakdown.
"""

import math

import numpy as np
import pytest

from lccount import (
    LogitMap,
    LossConfig,
    PointAnnotations,
    ProbMap,
    assign_points,
    breakdown_from_context,
    build_loss_context,
    connected_components,
    false_positive_loss,
    gradient_from_context,
    image_level_loss,
    loss_and_gradient,
    loss_gradient,
    point_level_loss,
    softmax,
    split_level_loss,
    total_loss,
    SplitBoundary,
)


def probs(values):
    return ProbMap(np.asarray(values, dtype=np.float64))


def fd_gradient(raw, annotations, cfg, coords, h=1e-6):
    """Central finite differences of the frozen-context total w.r.t. logits.

    The pixel sets are built once from the unperturbed prediction and held
    fixed, matching the piecewise definition the analytic gradient assumes.
    """
    base = softmax(LogitMap(raw))
    ctx = build_loss_context(base, annotations, cfg)

    def value(arr):
        return breakdown_from_context(softmax(LogitMap(arr)), ctx, cfg).total

    out = []
    for idx in coords:
        up = raw.copy()
        up[idx] += h
        dn = raw.copy()
        dn[idx] -= h
        out.append((value(up) - value(dn)) / (2 * h))
    return np.array(out)


# ---------------------------------------------------------------------------
# worked values per term
# ---------------------------------------------------------------------------


def test_image_level_present_class_means_over_confident_pixels():
    # class 0 peaks at 0.9, class 1 peaks at 0.8; both are "expected"
    # (background always is, class 1 is annotated), so the term averages
    # -log of those two peaks
    pm = probs([[[0.9, 0.1], [0.2, 0.8]]])
    ann = PointAnnotations.from_list([(0, 1, 1)], 1, 2)
    want = (-math.log(0.9) - math.log(0.8)) / 2
    assert image_level_loss(pm, ann) == pytest.approx(want, abs=1e-12)


def test_image_level_absent_class_penalizes_its_peak():
    # nothing is annotated: class 1 is absent, so its peak 0.25 is pushed
    # down via -log(1 - 0.25); background stays in the expected set
    pm = probs([[[0.9, 0.1], [0.75, 0.25]]])
    ann = PointAnnotations.from_list([], 1, 2)
    want = -math.log(0.9) - math.log(0.75)
    assert image_level_loss(pm, ann) == pytest.approx(want, abs=1e-12)


def test_point_level_sums_cross_entropy_at_annotations():
    pm = probs([[[0.5, 0.5], [0.25, 0.75]]])
    ann = PointAnnotations.from_list([(0, 0, 1), (0, 1, 1)], 1, 2)
    want = -math.log(0.5) - math.log(0.75)
    assert point_level_loss(pm, ann) == pytest.approx(want, abs=1e-12)
    assert point_level_loss(pm, ann, normalize=True) == pytest.approx(want / 2,
                                                                      abs=1e-12)
    empty = PointAnnotations.from_list([], 1, 2)
    assert point_level_loss(pm, empty) == 0.0


def test_split_level_weights_background_log_loss():
    pm = probs([[[0.5, 0.5], [0.25, 0.75]]])
    bnd = SplitBoundary(np.array([[0, 0], [0, 1]]), np.array([1, 2]), 1, 2)
    want = -(1 * math.log(0.5) + 2 * math.log(0.25))  # = 5 ln 2
    assert split_level_loss(pm, bnd) == pytest.approx(want, abs=1e-12)
    assert split_level_loss(pm, bnd, normalize=True) == pytest.approx(want / 2,
                                                                      abs=1e-12)
    assert split_level_loss(pm, SplitBoundary.empty(1, 2)) == 0.0


def test_false_positive_penalizes_unannotated_blobs():
    # a 4-pixel blob with no annotation inside: every pixel pays
    # -log(background prob); the labeling is an input, so the background
    # probability there can be anything
    mask = np.zeros((2, 4), dtype=bool)
    mask[0, :4] = True
    ann = PointAnnotations.from_list([], 2, 4)
    lab = assign_points(connected_components(mask), ann)
    vals = np.full((2, 4, 2), [0.9, 0.1])
    want = -4 * math.log(0.9)
    assert false_positive_loss(probs(vals), lab) == pytest.approx(want, abs=1e-12)
    assert false_positive_loss(probs(vals), lab, normalize=True) == pytest.approx(
        want / 4, abs=1e-12)


def test_false_positive_zero_when_all_blobs_annotated():
    mask = np.zeros((1, 3), dtype=bool)
    mask[0, 0] = True
    ann = PointAnnotations.from_list([(0, 0, 1)], 1, 3)
    lab = assign_points(connected_components(mask), ann)
    vals = np.full((1, 3, 2), [0.4, 0.6])
    assert false_positive_loss(probs(vals), lab) == 0.0


# ---------------------------------------------------------------------------
# assembled breakdown
# ---------------------------------------------------------------------------


def rand_instance(rng, h=6, w=6, c=3, n_points=3):
    raw = rng.normal(size=(h, w, c)) * 2.0
    pts = []
    seen = set()
    for _ in range(n_points):
        r, col = int(rng.integers(h)), int(rng.integers(w))
        if (r, col) in seen:
            continue
        seen.add((r, col))
        pts.append((r, col, int(rng.integers(1, c))))
    return raw, PointAnnotations.from_list(pts, h, w)


def test_total_is_the_left_to_right_sum_of_the_terms():
    rng = np.random.default_rng(7)
    raw, ann = rand_instance(rng)
    for method in ("watershed", "line"):
        bd = total_loss(LogitMap(raw), ann, LossConfig(split_method=method))
        assert bd.total == bd.image_level + bd.point_level + bd.split_level \
            + bd.false_positive
        assert bd.image_level > 0 and bd.point_level > 0


def test_disabled_terms_are_zero_and_all_off_is_zero_loss():
    rng = np.random.default_rng(8)
    raw, ann = rand_instance(rng)
    cfg = LossConfig(include_image=False, include_point=False,
                     include_split=False, include_false_positive=False)
    bd, grad = loss_and_gradient(LogitMap(raw), ann, cfg)
    assert bd.total == 0.0
    assert np.all(grad == 0.0)


def test_image_and_point_terms_ignore_the_split_method():
    rng = np.random.default_rng(9)
    raw, ann = rand_instance(rng)
    bds = []
    grads = []
    for method in ("watershed", "line"):
        cfg = LossConfig(split_method=method, include_split=False,
                         include_false_positive=False)
        bd, grad = loss_and_gradient(LogitMap(raw), ann, cfg)
        bds.append(bd)
        grads.append(grad)
    assert bds[0] == bds[1]
    assert np.array_equal(grads[0], grads[1])


def test_split_term_fires_only_on_multi_point_blobs():
    # single blob, single point: nothing to split
    raw = np.zeros((3, 3, 2))
    raw[1, 1, 1] = 4.0
    ann = PointAnnotations.from_list([(1, 1, 1)], 3, 3)
    bd = total_loss(LogitMap(raw), ann, LossConfig())
    assert bd.split_level == 0.0


def test_false_positive_term_fires_only_on_unmatched_blobs():
    # two predicted blobs, one annotated: only the other is penalized
    raw = np.zeros((1, 5, 2))
    raw[0, 0, 1] = raw[0, 4, 1] = 4.0
    ann = PointAnnotations.from_list([(0, 0, 1)], 1, 5)
    bd = total_loss(LogitMap(raw), ann, LossConfig())
    assert bd.false_positive > 0.0
    both = PointAnnotations.from_list([(0, 0, 1), (0, 4, 1)], 1, 5)
    assert total_loss(LogitMap(raw), both, LossConfig()).false_positive == 0.0


def test_normalize_divides_sums_by_their_pixel_counts():
    rng = np.random.default_rng(10)
    raw, ann = rand_instance(rng)
    cfg = LossConfig()
    ncfg = LossConfig(normalize=True)
    pm = softmax(LogitMap(raw))
    ctx = build_loss_context(pm, ann, cfg)
    bd = breakdown_from_context(pm, ctx, cfg)
    nbd = breakdown_from_context(pm, ctx, ncfg)
    assert nbd.image_level == bd.image_level  # already a mean
    assert nbd.point_level == pytest.approx(bd.point_level / len(ctx.points),
                                            abs=1e-12)
    if ctx.boundary is not None and len(ctx.boundary):
        assert nbd.split_level == pytest.approx(
            bd.split_level / len(ctx.boundary), abs=1e-12)
    if ctx.fp_pixels.shape[0]:
        assert nbd.false_positive == pytest.approx(
            bd.false_positive / ctx.fp_pixels.shape[0], abs=1e-12)


def test_context_skips_blob_machinery_when_unneeded():
    rng = np.random.default_rng(11)
    raw, ann = rand_instance(rng)
    cfg = LossConfig(include_split=False, include_false_positive=False)
    ctx = build_loss_context(softmax(LogitMap(raw)), ann, cfg)
    assert ctx.boundary is None
    assert ctx.labeling is None
    assert ctx.fp_pixels.shape == (0, 2)


def test_config_validation():
    with pytest.raises(ValueError):
        LossConfig(split_method="diagonal")
    with pytest.raises(ValueError):
        LossConfig(epsilon=0.0)
    with pytest.raises(ValueError):
        LossConfig(epsilon=1e-3)


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------


CFG_VARIANTS = [
    LossConfig(),
    LossConfig(split_method="line"),
    LossConfig(normalize=True),
    LossConfig(include_point=False, include_split=False,
               include_false_positive=False),
    LossConfig(include_image=False, include_split=False,
               include_false_positive=False),
    LossConfig(include_image=False, include_point=False,
               include_false_positive=False),
    LossConfig(include_image=False, include_point=False, include_split=False),
]


@pytest.mark.parametrize("cfg", CFG_VARIANTS)
def test_gradient_matches_finite_differences(cfg):
    rng = np.random.default_rng(12)
    for _ in range(6):
        raw, ann = rand_instance(rng, h=5, w=5, c=3)
        analytic = loss_gradient(LogitMap(raw), ann, cfg)
        coords = [tuple(int(v) for v in rng.integers(0, 5, size=2)) + (int(k),)
                  for k in range(3) for _ in range(4)]
        fd = fd_gradient(raw, ann, cfg, coords)
        got = np.array([analytic[idx] for idx in coords])
        np.testing.assert_allclose(got, fd, rtol=3e-5, atol=1e-7)


def test_gradient_every_coordinate_small_instance():
    rng = np.random.default_rng(13)
    raw, ann = rand_instance(rng, h=3, w=4, c=3, n_points=2)
    cfg = LossConfig()
    analytic = loss_gradient(LogitMap(raw), ann, cfg)
    coords = [(r, c, k) for r in range(3) for c in range(4) for k in range(3)]
    fd = fd_gradient(raw, ann, cfg, coords)
    got = np.array([analytic[idx] for idx in coords])
    np.testing.assert_allclose(got, fd, rtol=3e-5, atol=1e-7)


def test_gradient_no_annotations_still_defined():
    rng = np.random.default_rng(14)
    raw = rng.normal(size=(4, 4, 2)) * 2.0
    ann = PointAnnotations.from_list([], 4, 4)
    cfg = LossConfig()
    analytic = loss_gradient(LogitMap(raw), ann, cfg)
    coords = [(r, c, k) for r in range(4) for c in range(4) for k in range(2)]
    fd = fd_gradient(raw, ann, cfg, coords)
    np.testing.assert_allclose(
        np.array([analytic[i] for i in coords]), fd, rtol=3e-5, atol=1e-7)


def test_floored_probability_has_zero_gradient():
    # the annotated class is ~e^-60 at its point: the loss clamps it at
    # epsilon, making the term locally constant, so the exact gradient of
    # the clamped loss is zero everywhere
    raw = np.zeros((1, 2, 2))
    raw[0, 0, 0] = 60.0  # softmax class-1 prob ~ 8.8e-27 < 1e-12
    ann = PointAnnotations.from_list([(0, 0, 1)], 1, 2)
    cfg = LossConfig(include_image=False, include_split=False,
                     include_false_positive=False)
    bd, grad = loss_and_gradient(LogitMap(raw), ann, cfg)
    assert bd.point_level == pytest.approx(-math.log(1e-12), rel=1e-12)
    assert np.all(grad == 0.0)


def test_saturated_absent_class_is_floored_not_infinite():
    # an absent class predicted at ~1 would send -log(1 - S) to infinity;
    # the floor caps it at -log(epsilon) and zeroes that contribution's
    # gradient rather than overflowing
    raw = np.zeros((1, 2, 3))
    raw[0, 1, 2] = 60.0  # class 2 saturates at pixel (0, 1)
    ann = PointAnnotations.from_list([(0, 0, 1)], 1, 2)
    cfg = LossConfig(include_split=False, include_false_positive=False)
    bd, grad = loss_and_gradient(LogitMap(raw), ann, cfg)
    assert math.isfinite(bd.total)
    assert bd.image_level >= -math.log(1e-12)
    assert np.all(np.isfinite(grad))


def test_loss_and_gradient_matches_separate_calls():
    rng = np.random.default_rng(15)
    raw, ann = rand_instance(rng)
    cfg = LossConfig()
    bd, grad = loss_and_gradient(LogitMap(raw), ann, cfg)
    assert bd == total_loss(LogitMap(raw), ann, cfg)
    assert np.array_equal(grad, loss_gradient(LogitMap(raw), ann, cfg))


def test_canvas_mismatch_rejected():
    pm = probs([[[0.5, 0.5]]])
    ann = PointAnnotations.from_list([(0, 0, 1)], 2, 2)
    with pytest.raises(ValueError):
        image_level_loss(pm, ann)
