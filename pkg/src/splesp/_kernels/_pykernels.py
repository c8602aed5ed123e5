"""Pure numpy implementations of the hot kernels.

These are the reference versions; ``_ckernels.pyx`` mirrors them loop for
loop. All boxes are corner-form ``(n, 4)`` float64 arrays.
"""
import math

import numpy as np

_ASPECT_K = 4.0 / (math.pi ** 2)


def ciou_with_grad(gt, pred):
    """CIOU loss per row and its gradient w.r.t. the predicted corners.

    Returns ``(loss, grad)`` with shapes ``(n,)`` and ``(n, 4)``. The
    aspect trade-off coefficient is differentiated through, so ``grad`` is
    the exact derivative of ``loss`` away from max/min kinks.
    """
    gt = np.asarray(gt, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    n = gt.shape[0]
    if n == 0:
        return np.zeros(0), np.zeros((0, 4))
    gx1, gy1, gx2, gy2 = gt[:, 0], gt[:, 1], gt[:, 2], gt[:, 3]
    px1, py1, px2, py2 = pred[:, 0], pred[:, 1], pred[:, 2], pred[:, 3]
    gw, gh = gx2 - gx1, gy2 - gy1
    pw, ph = px2 - px1, py2 - py1

    iw_raw = np.minimum(px2, gx2) - np.maximum(px1, gx1)
    ih_raw = np.minimum(py2, gy2) - np.maximum(py1, gy1)
    ow = (iw_raw > 0).astype(float)
    oh = (ih_raw > 0).astype(float)
    iw, ih = iw_raw * ow, ih_raw * oh
    inter = iw * ih
    d_iw = np.stack([-1.0 * (px1 > gx1) * ow, np.zeros(n), 1.0 * (px2 < gx2) * ow, np.zeros(n)], axis=1)
    d_ih = np.stack([np.zeros(n), -1.0 * (py1 > gy1) * oh, np.zeros(n), 1.0 * (py2 < gy2) * oh], axis=1)
    d_inter = d_iw * ih[:, None] + d_ih * iw[:, None]

    parea = pw * ph
    d_parea = np.stack([-ph, -pw, ph, pw], axis=1)
    union = parea + gw * gh - inter
    d_union = d_parea - d_inter
    iou = inter / union
    d_iou = (d_inter * union[:, None] - inter[:, None] * d_union) / (union * union)[:, None]

    cw = np.maximum(px2, gx2) - np.minimum(px1, gx1)
    ch = np.maximum(py2, gy2) - np.minimum(py1, gy1)
    d_cw = np.stack([-(px1 < gx1).astype(float), np.zeros(n), (px2 > gx2).astype(float), np.zeros(n)], axis=1)
    d_ch = np.stack([np.zeros(n), -(py1 < gy1).astype(float), np.zeros(n), (py2 > gy2).astype(float)], axis=1)
    c2 = cw * cw + ch * ch
    d_c2 = 2.0 * cw[:, None] * d_cw + 2.0 * ch[:, None] * d_ch

    dx = 0.5 * (px1 + px2) - 0.5 * (gx1 + gx2)
    dy = 0.5 * (py1 + py2) - 0.5 * (gy1 + gy2)
    rho2 = dx * dx + dy * dy
    d_rho2 = np.stack([dx, dy, dx, dy], axis=1)
    dist = rho2 / c2
    d_dist = (d_rho2 * c2[:, None] - rho2[:, None] * d_c2) / (c2 * c2)[:, None]

    delta = np.arctan(gw / gh) - np.arctan(pw / ph)
    v = _ASPECT_K * delta * delta
    r2 = pw * pw + ph * ph
    dv_dpw = 2.0 * _ASPECT_K * delta * (-ph / r2)
    dv_dph = 2.0 * _ASPECT_K * delta * (pw / r2)
    d_v = np.stack([-dv_dpw, -dv_dph, dv_dpw, dv_dph], axis=1)

    active = v > 0
    denom = np.where(active, 1.0 - iou + v, 1.0)
    aspect = np.where(active, v * v / denom, 0.0)
    d_aspect = (
        2.0 * (v * denom)[:, None] * d_v - (v * v)[:, None] * (d_v - d_iou)
    ) / (denom * denom)[:, None]
    d_aspect = np.where(active[:, None], d_aspect, 0.0)

    loss = 1.0 - iou + dist + aspect
    grad = -d_iou + d_dist + d_aspect
    return loss, grad


def nms(boxes, scores, iou_threshold):
    """Greedy non-maximum suppression.

    Candidates are visited by descending score, ties by ascending index. A
    candidate is dropped when its IoU with any kept box is ``>= iou_threshold``.
    Returns kept indices in visiting order.
    """
    boxes = np.asarray(boxes, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    suppressed = np.zeros(len(boxes), dtype=bool)
    keep = []
    for pos, i in enumerate(order):
        if suppressed[i]:
            continue
        keep.append(i)
        rest = order[pos + 1:]
        rest = rest[~suppressed[rest]]
        if len(rest) == 0:
            continue
        iw = np.minimum(boxes[i, 2], boxes[rest, 2]) - np.maximum(boxes[i, 0], boxes[rest, 0])
        ih = np.minimum(boxes[i, 3], boxes[rest, 3]) - np.maximum(boxes[i, 1], boxes[rest, 1])
        inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
        iou = inter / (areas[i] + areas[rest] - inter)
        suppressed[rest[iou >= iou_threshold]] = True
    return np.asarray(keep, dtype=np.int64)


def greedy_match(det_boxes, det_scene, gt_boxes, gt_start, iou_threshold):
    """Match detections (already in processing order) to ground truth.

    ``gt_start[s]:gt_start[s + 1]`` indexes the GT boxes of scene ``s``. Each
    detection takes its highest-IoU GT in the same scene; it is a true
    positive when that IoU is ``>= iou_threshold`` and the GT is still
    unclaimed. Returns the matched GT index per detection, ``-1`` otherwise.
    """
    det_boxes = np.asarray(det_boxes, dtype=np.float64)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64)
    matched = np.full(len(det_boxes), -1, dtype=np.int64)
    taken = np.zeros(len(gt_boxes), dtype=bool)
    for k in range(len(det_boxes)):
        s = det_scene[k]
        lo, hi = gt_start[s], gt_start[s + 1]
        if hi <= lo:
            continue
        b = det_boxes[k]
        g = gt_boxes[lo:hi]
        iw = np.minimum(b[2], g[:, 2]) - np.maximum(b[0], g[:, 0])
        ih = np.minimum(b[3], g[:, 3]) - np.maximum(b[1], g[:, 1])
        inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
        iou = inter / ((b[2] - b[0]) * (b[3] - b[1]) + (g[:, 2] - g[:, 0]) * (g[:, 3] - g[:, 1]) - inter)
        j = int(np.argmax(iou))
        if iou[j] >= iou_threshold and not taken[lo + j]:
            taken[lo + j] = True
            matched[k] = lo + j
    return matched
