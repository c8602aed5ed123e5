import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splesp.assignment import NEGATIVE, AnchorGrid, PredictionMaps, assign_anchors
from splesp.boxes import Box
from splesp.errors import ContractError
from splesp.losses import (
    LossTargets, anchor_loss, baseline_sample_loss, baseline_sample_losses, ciou_loss, loss_and_grad,
    total_loss, weighted_total_loss,
)


def perfect_maps(grid, gt, assignment, conf_pos=1.0):
    conf = np.zeros(grid.shape)
    reg = np.ones(grid.shape + (4,))
    cx, cy = grid.centers
    for i, b in enumerate(gt):
        mask = assignment.labels == i
        x1, y1, x2, y2 = b.corners()
        conf[mask] = conf_pos
        reg[mask] = np.stack([cx[mask] - x1, cy[mask] - y1, x2 - cx[mask], y2 - cy[mask]], axis=1)
    return PredictionMaps(conf, reg)


def test_anchor_loss_examples():
    b = Box(5, 5, 4, 4)
    assert anchor_loss(0.0, 0) == 0.0
    assert anchor_loss(1.0, 1, b, b, alpha=3.0) == 0.0
    assert anchor_loss(0.5, 1, b, b, alpha=1.0) == pytest.approx(0.25)
    assert anchor_loss(0.7, None) == 0.0
    with pytest.raises(ContractError):
        anchor_loss(0.5, 1, b, None)


def test_ciou_examples():
    assert ciou_loss(Box(0, 0, 2, 2), Box(0, 0, 2, 2)) == pytest.approx(0.0, abs=1e-15)
    far = ciou_loss(Box(0, 0, 2, 2), Box(10, 10, 2, 2))
    # disjoint, same shape: 1 + rho^2 / c^2 = 1 + 200 / 288
    assert far == pytest.approx(1 + 200 / 288)
    assert 1.0 < far < 2.0
    tall = ciou_loss(Box(0, 0, 2, 2), Box(0, 0, 2, 4))
    assert 0.0 < tall < 1.0
    with pytest.raises(ContractError):
        Box(0, 0, 0, 2)


def test_empty_scene_total_zero(grid):
    a = assign_anchors(grid, [])
    maps = PredictionMaps(np.zeros(grid.shape), np.ones(grid.shape + (4,)))
    bd = total_loss(maps, a, [], grid)
    assert bd.total == 0.0 and bd.normalizer == 64.0


def test_perfect_prediction_total_zero(grid):
    gt = [Box(30, 30, 24, 24)]
    a = assign_anchors(grid, gt)
    bd = total_loss(perfect_maps(grid, gt, a), a, gt, grid)
    assert bd.total == pytest.approx(0.0, abs=1e-12)


def test_symmetric_objects_brute_force(grid):
    gt = [Box(20, 20, 24, 24), Box(68, 44, 24, 24)]
    a = assign_anchors(grid, gt)
    maps = perfect_maps(grid, gt, a, conf_pos=0.6)
    maps.reg[a.labels >= 0] *= 1.1
    bd = total_loss(maps, a, gt, grid)
    ell = bd.per_object_losses
    assert ell[0] == pytest.approx(ell[1], rel=1e-12)
    # brute-force per-anchor sum
    cx, cy = grid.centers
    total = 0.0
    for (r, c), lab in np.ndenumerate(a.labels):
        if lab == NEGATIVE:
            total += anchor_loss(maps.conf[r, c], 0)
        elif lab >= 0:
            x1, y1 = cx[r, c] - maps.reg[r, c, 0], cy[r, c] - maps.reg[r, c, 1]
            x2, y2 = cx[r, c] + maps.reg[r, c, 2], cy[r, c] + maps.reg[r, c, 3]
            total += anchor_loss(maps.conf[r, c], 1, Box.from_corners(x1, y1, x2, y2), gt[lab])
    n = int((a.labels >= 0).sum())
    assert bd.total == pytest.approx(total / n, rel=1e-12)
    assert bd.total == pytest.approx(2 * ell[0] / n, rel=1e-12)


def test_weighted_identities(grid):
    gt = [Box(30, 30, 24, 24)]
    a = assign_anchors(grid, gt)
    maps = perfect_maps(grid, gt, a, conf_pos=0.3)
    full = total_loss(maps, a, gt, grid)
    assert weighted_total_loss(maps, a, gt, grid, np.ones(1)).total == full.total
    half = weighted_total_loss(maps, a, gt, grid, np.array([0.5]))
    assert half.total == pytest.approx(full.total / 2)
    maps.conf[a.labels == NEGATIVE] = 0.2
    zero = weighted_total_loss(maps, a, gt, grid, np.zeros(1))
    assert zero.total == pytest.approx(zero.neg_loss / zero.normalizer)
    with pytest.raises(ContractError):
        weighted_total_loss(maps, a, gt, grid, np.ones(2))


def test_baseline_sample_loss_examples(grid):
    gt = [Box(30, 30, 24, 24)]
    a = assign_anchors(grid, gt)
    assert baseline_sample_loss(0, perfect_maps(grid, gt, a), a, gt, grid) == pytest.approx(0.0, abs=1e-12)
    assert baseline_sample_loss(0, perfect_maps(grid, gt, a, 0.5), a, gt, grid) == pytest.approx(0.25)
    bad = perfect_maps(grid, gt, a, 0.0)
    bad.reg[a.labels >= 0] = [-1000.0, 0.5, 1001.0, 0.5]  # tiny box far away, CIOU near 2
    v = baseline_sample_loss(0, bad, a, gt, grid)
    assert 0.95 < v < 1.0


def test_baseline_sample_loss_needs_anchors():
    grid = AnchorGrid(4, 4, 8.0)
    gt = [Box(16, 16, 2, 2)]  # core holds no anchor center
    a = assign_anchors(grid, gt)
    maps = PredictionMaps(np.zeros(grid.shape), np.ones(grid.shape + (4,)))
    with pytest.raises(ContractError):
        baseline_sample_loss(0, maps, a, gt, grid)
    assert np.isnan(baseline_sample_losses(maps, LossTargets(a, gt, grid))[0])


def test_shape_mismatch(grid):
    a = assign_anchors(grid, [])
    with pytest.raises(ContractError):
        total_loss(PredictionMaps(np.zeros((3, 3)), np.zeros((3, 3, 4))), a, [], grid)


def test_gradient_matches_finite_differences(grid, rng):
    gt = [Box(20, 20, 24, 16), Box(60, 40, 20, 28)]
    a = assign_anchors(grid, gt)
    t = LossTargets(a, gt, grid)
    maps = PredictionMaps(rng.uniform(0.05, 0.95, grid.shape), rng.uniform(4, 16, grid.shape + (4,)))
    v = np.array([0.7, 0.2])
    _, d_conf, d_reg = loss_and_grad(maps, t, v)
    h = 1e-6
    for idx in [(1, 1), (2, 2), (5, 7), (0, 0)]:
        up, dn = maps.conf.copy(), maps.conf.copy()
        up[idx] += h
        dn[idx] -= h
        fd = (loss_and_grad(PredictionMaps(up, maps.reg), t, v, need_grad=False)[0].total
              - loss_and_grad(PredictionMaps(dn, maps.reg), t, v, need_grad=False)[0].total) / (2 * h)
        assert d_conf[idx] == pytest.approx(fd, rel=1e-5, abs=1e-9)
        for j in range(4):
            up, dn = maps.reg.copy(), maps.reg.copy()
            up[idx + (j,)] += h
            dn[idx + (j,)] -= h
            fd = (loss_and_grad(PredictionMaps(maps.conf, up), t, v, need_grad=False)[0].total
                  - loss_and_grad(PredictionMaps(maps.conf, dn), t, v, need_grad=False)[0].total) / (2 * h)
            assert d_reg[idx + (j,)] == pytest.approx(fd, rel=1e-5, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), w=st.lists(st.floats(0, 1), min_size=2, max_size=2))
def test_weighted_loss_is_affine_in_weights(seed, w):
    grid = AnchorGrid(12, 8, 8.0)
    rng = np.random.default_rng(seed)
    gt = [Box(20, 20, 24, 16), Box(60, 40, 20, 28)]
    a = assign_anchors(grid, gt)
    maps = PredictionMaps(rng.uniform(0, 1, grid.shape), rng.uniform(1, 20, grid.shape + (4,)))
    bd = weighted_total_loss(maps, a, gt, grid, np.array(w))
    expect = (bd.neg_loss + float(np.dot(w, bd.per_object_losses))) / bd.normalizer
    assert bd.total == pytest.approx(expect, rel=1e-12, abs=1e-15)
    assert bd.total >= 0.0
    s = baseline_sample_losses(maps, LossTargets(a, gt, grid))
    assert np.all((s >= 0) & (s < 1))
