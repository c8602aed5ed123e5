"""Detection losses: per-anchor L2 confidence + CIOU regression, the
object-grouped total loss, its SPL-weighted form, and the per-object sample
loss used by the loss-based minimizers.

Grouping follows the decomposition ``L(neg) + L(F_1) + ... + L(F_n)``: the
negative-anchor loss plus one summed term per object over its positive
anchors. Ignored anchors contribute nothing.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .assignment import NEGATIVE, AnchorAssignment, AnchorGrid, PredictionMaps
from .boxes import Box, corners_array
from .errors import ContractError

DEFAULT_ALPHA = 1.0
DEFAULT_N_FIXED = 64.0


def ciou_loss(gt: Box, pred: Box) -> float:
    """``1 - IoU + rho^2 / c^2 + a * v`` for a single box pair."""
    if not (gt.w > 0 and gt.h > 0 and pred.w > 0 and pred.h > 0):
        raise ContractError("ciou_loss needs boxes with positive extent")
    loss, _ = _kernels.ciou_with_grad(np.array([gt.corners()]), np.array([pred.corners()]))
    return float(loss[0])


def anchor_loss(pred_conf, target, pred_box=None, gt_box=None, alpha=DEFAULT_ALPHA) -> float:
    """Loss of one anchor sample.

    ``target`` is 1 (positive), 0 (negative) or ``None`` (ignored).
    """
    if target is None:
        return 0.0
    if target == 0:
        return float(pred_conf) ** 2
    if target != 1:
        raise ContractError(f"target must be 0, 1 or None, got {target}")
    if pred_box is None or gt_box is None:
        raise ContractError("positive anchor needs both a predicted and a ground-truth box")
    return (float(pred_conf) - 1.0) ** 2 + alpha * ciou_loss(gt_box, pred_box)


@dataclass
class LossBreakdown:
    conf_loss: float
    reg_loss: float
    total: float
    per_object_losses: np.ndarray
    neg_loss: float
    normalizer: float


class LossTargets:
    """Flattened training targets of one scene, reusable across steps."""

    def __init__(self, assignment: AnchorAssignment, gt, grid: AnchorGrid, n_fixed=DEFAULT_N_FIXED):
        if not n_fixed > 0:
            raise ContractError(f"n_fixed must be positive, got {n_fixed}")
        gt_corners = gt if isinstance(gt, np.ndarray) else corners_array(gt)
        if len(gt_corners) != assignment.n_objects:
            raise ContractError(
                f"assignment covers {assignment.n_objects} objects but {len(gt_corners)} were given"
            )
        if assignment.shape != grid.shape:
            raise ContractError(f"assignment shape {assignment.shape} does not match grid {grid.shape}")
        flat = assignment.labels.ravel()
        self.grid = grid
        self.n_objects = assignment.n_objects
        self.pos = np.flatnonzero(flat >= 0)
        self.owner = flat[self.pos]
        self.neg = np.flatnonzero(flat == NEGATIVE)
        self.gt_rows = gt_corners[self.owner] if len(self.pos) else np.zeros((0, 4))
        self.anchor_xy = grid.flat_centers[self.pos]
        self.normalizer = float(len(self.pos)) if len(self.pos) > 0 else float(n_fixed)
        self.counts = np.bincount(self.owner, minlength=self.n_objects)

    def pred_rows(self, reg_flat: np.ndarray) -> np.ndarray:
        r = reg_flat[self.pos]
        a = self.anchor_xy
        return np.stack([a[:, 0] - r[:, 0], a[:, 1] - r[:, 1], a[:, 0] + r[:, 2], a[:, 1] + r[:, 3]], axis=1)


def _as_targets(assignment, gt, grid, n_fixed):
    if isinstance(assignment, LossTargets):
        return assignment
    return LossTargets(assignment, gt, grid, n_fixed)


def _check_maps(maps: PredictionMaps, targets: LossTargets):
    maps.check(targets.grid)


def loss_and_grad(
    maps: PredictionMaps,
    targets: LossTargets,
    v=None,
    alpha: float = DEFAULT_ALPHA,
    need_grad: bool = True,
):
    """Weighted loss breakdown and its gradient w.r.t. ``maps.conf`` / ``maps.reg``.

    ``v=None`` means unit weights. Returns ``(breakdown, d_conf, d_reg)``;
    the gradients are ``None`` when ``need_grad`` is false.
    """
    _check_maps(maps, targets)
    n = targets.n_objects
    if v is None:
        v = np.ones(n)
    else:
        v = np.asarray(v, dtype=float)
        if v.shape != (n,):
            raise ContractError(f"weight vector has length {v.size}, scene has {n} objects")

    conf = maps.conf.ravel()
    reg = maps.reg.reshape(-1, 4)
    c_neg = conf[targets.neg]
    neg_loss = float(np.sum(c_neg * c_neg))

    c_pos = conf[targets.pos]
    conf_terms = (c_pos - 1.0) ** 2
    ciou, ciou_grad = _kernels.ciou_with_grad(targets.gt_rows, targets.pred_rows(reg))
    obj_conf = np.bincount(targets.owner, weights=conf_terms, minlength=n)
    obj_reg = np.bincount(targets.owner, weights=ciou, minlength=n)
    per_object = obj_conf + alpha * obj_reg

    conf_loss = neg_loss
    reg_loss = 0.0
    for i in range(n):
        conf_loss += v[i] * obj_conf[i]
        reg_loss += v[i] * obj_reg[i]
    norm = targets.normalizer
    breakdown = LossBreakdown(
        conf_loss=float(conf_loss),
        reg_loss=float(reg_loss),
        total=float((conf_loss + alpha * reg_loss) / norm),
        per_object_losses=per_object,
        neg_loss=neg_loss,
        normalizer=norm,
    )
    if not need_grad:
        return breakdown, None, None

    w_pos = v[targets.owner] / norm
    d_conf = np.zeros_like(conf)
    d_conf[targets.neg] = 2.0 * c_neg / norm
    d_conf[targets.pos] = 2.0 * (c_pos - 1.0) * w_pos
    d_reg = np.zeros_like(reg)
    g = ciou_grad * (alpha * w_pos)[:, None]
    d_reg[targets.pos] = np.stack([-g[:, 0], -g[:, 1], g[:, 2], g[:, 3]], axis=1)
    return breakdown, d_conf.reshape(maps.conf.shape), d_reg.reshape(maps.reg.shape)


def total_loss(
    maps: PredictionMaps,
    assignment: AnchorAssignment,
    gt,
    grid: AnchorGrid,
    alpha: float = DEFAULT_ALPHA,
    n_fixed: float = DEFAULT_N_FIXED,
) -> LossBreakdown:
    """Unweighted total loss ``(L_C + alpha * L_R) / N``.

    ``N`` is the positive-anchor count, or ``n_fixed`` for scenes without
    positives.
    """
    targets = _as_targets(assignment, gt, grid, n_fixed)
    return loss_and_grad(maps, targets, None, alpha, need_grad=False)[0]


def weighted_total_loss(
    maps: PredictionMaps,
    assignment: AnchorAssignment,
    gt,
    grid: AnchorGrid,
    v,
    alpha: float = DEFAULT_ALPHA,
    n_fixed: float = DEFAULT_N_FIXED,
) -> LossBreakdown:
    """``(L(neg) + sum_i v_i L(F_i)) / N`` with object weights ``v``."""
    targets = _as_targets(assignment, gt, grid, n_fixed)
    if np.shape(v) != (targets.n_objects,):
        raise ContractError(f"weight vector has length {np.size(v)}, scene has {targets.n_objects} objects")
    return loss_and_grad(maps, targets, v, alpha, need_grad=False)[0]


def baseline_sample_losses(maps: PredictionMaps, targets: LossTargets) -> np.ndarray:
    """Per-object sample loss in [0, 1): the mean over the object's positive
    anchors of ``(|conf - 1| + CIOU / 2) / 2``. NaN for objects without
    positive anchors."""
    _check_maps(maps, targets)
    conf = maps.conf.ravel()[targets.pos]
    ciou, _ = _kernels.ciou_with_grad(targets.gt_rows, targets.pred_rows(maps.reg.reshape(-1, 4)))
    per_anchor = 0.5 * (np.abs(conf - 1.0) + 0.5 * ciou)
    sums = np.bincount(targets.owner, weights=per_anchor, minlength=targets.n_objects)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(targets.counts > 0, sums / np.maximum(targets.counts, 1), np.nan)


def baseline_sample_loss(
    object_index: int,
    maps: PredictionMaps,
    assignment: AnchorAssignment,
    gt,
    grid: AnchorGrid,
) -> float:
    """Sample loss of one object, for the loss-based minimizers."""
    targets = _as_targets(assignment, gt, grid, DEFAULT_N_FIXED)
    if targets.counts[object_index] == 0:
        raise ContractError(f"object {object_index} has no positive anchors")
    return float(baseline_sample_losses(maps, targets)[object_index])
