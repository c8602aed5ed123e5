# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``; same contracts."""
import numpy as np
cimport numpy as cnp
from libc.math cimport atan, M_PI

cnp.import_array()

cdef double ASPECT_K = 4.0 / (M_PI * M_PI)


def ciou_with_grad(gt, pred):
    cdef double[:, ::1] g = np.ascontiguousarray(gt, dtype=np.float64)
    cdef double[:, ::1] p = np.ascontiguousarray(pred, dtype=np.float64)
    cdef Py_ssize_t n = g.shape[0]
    loss_arr = np.zeros(n, dtype=np.float64)
    grad_arr = np.zeros((n, 4), dtype=np.float64)
    cdef double[::1] loss = loss_arr
    cdef double[:, ::1] grad = grad_arr
    cdef Py_ssize_t i, k
    cdef double gx1, gy1, gx2, gy2, px1, py1, px2, py2, gw, gh, pw, ph
    cdef double iw_raw, ih_raw, ow, oh, iw, ih, inter, parea, union, iou
    cdef double cw, ch, c2, dx, dy, rho2, dist, delta, v, r2, dv_dpw, dv_dph
    cdef double denom, aspect
    cdef double d_iw[4]
    cdef double d_ih[4]
    cdef double d_inter[4]
    cdef double d_parea[4]
    cdef double d_iou[4]
    cdef double d_cw[4]
    cdef double d_ch[4]
    cdef double d_c2
    cdef double d_rho2[4]
    cdef double d_dist
    cdef double d_v[4]
    cdef double d_aspect
    for i in range(n):
        gx1 = g[i, 0]; gy1 = g[i, 1]; gx2 = g[i, 2]; gy2 = g[i, 3]
        px1 = p[i, 0]; py1 = p[i, 1]; px2 = p[i, 2]; py2 = p[i, 3]
        gw = gx2 - gx1; gh = gy2 - gy1
        pw = px2 - px1; ph = py2 - py1

        iw_raw = (px2 if px2 < gx2 else gx2) - (px1 if px1 > gx1 else gx1)
        ih_raw = (py2 if py2 < gy2 else gy2) - (py1 if py1 > gy1 else gy1)
        ow = 1.0 if iw_raw > 0 else 0.0
        oh = 1.0 if ih_raw > 0 else 0.0
        iw = iw_raw * ow; ih = ih_raw * oh
        inter = iw * ih
        d_iw[0] = -(1.0 if px1 > gx1 else 0.0) * ow
        d_iw[1] = 0.0
        d_iw[2] = (1.0 if px2 < gx2 else 0.0) * ow
        d_iw[3] = 0.0
        d_ih[0] = 0.0
        d_ih[1] = -(1.0 if py1 > gy1 else 0.0) * oh
        d_ih[2] = 0.0
        d_ih[3] = (1.0 if py2 < gy2 else 0.0) * oh
        for k in range(4):
            d_inter[k] = d_iw[k] * ih + d_ih[k] * iw

        parea = pw * ph
        d_parea[0] = -ph; d_parea[1] = -pw; d_parea[2] = ph; d_parea[3] = pw
        union = parea + gw * gh - inter
        iou = inter / union
        for k in range(4):
            d_iou[k] = (d_inter[k] * union - inter * (d_parea[k] - d_inter[k])) / (union * union)

        cw = (px2 if px2 > gx2 else gx2) - (px1 if px1 < gx1 else gx1)
        ch = (py2 if py2 > gy2 else gy2) - (py1 if py1 < gy1 else gy1)
        d_cw[0] = -(1.0 if px1 < gx1 else 0.0); d_cw[1] = 0.0
        d_cw[2] = 1.0 if px2 > gx2 else 0.0; d_cw[3] = 0.0
        d_ch[0] = 0.0; d_ch[1] = -(1.0 if py1 < gy1 else 0.0)
        d_ch[2] = 0.0; d_ch[3] = 1.0 if py2 > gy2 else 0.0
        c2 = cw * cw + ch * ch

        dx = 0.5 * (px1 + px2) - 0.5 * (gx1 + gx2)
        dy = 0.5 * (py1 + py2) - 0.5 * (gy1 + gy2)
        rho2 = dx * dx + dy * dy
        d_rho2[0] = dx; d_rho2[1] = dy; d_rho2[2] = dx; d_rho2[3] = dy
        dist = rho2 / c2

        delta = atan(gw / gh) - atan(pw / ph)
        v = ASPECT_K * delta * delta
        r2 = pw * pw + ph * ph
        dv_dpw = 2.0 * ASPECT_K * delta * (-ph / r2)
        dv_dph = 2.0 * ASPECT_K * delta * (pw / r2)
        d_v[0] = -dv_dpw; d_v[1] = -dv_dph; d_v[2] = dv_dpw; d_v[3] = dv_dph

        if v > 0:
            denom = 1.0 - iou + v
            aspect = v * v / denom
        else:
            denom = 1.0
            aspect = 0.0

        loss[i] = 1.0 - iou + dist + aspect
        for k in range(4):
            d_c2 = 2.0 * cw * d_cw[k] + 2.0 * ch * d_ch[k]
            d_dist = (d_rho2[k] * c2 - rho2 * d_c2) / (c2 * c2)
            if v > 0:
                d_aspect = (2.0 * (v * denom) * d_v[k] - (v * v) * (d_v[k] - d_iou[k])) / (denom * denom)
            else:
                d_aspect = 0.0
            grad[i, k] = -d_iou[k] + d_dist + d_aspect
    return loss_arr, grad_arr


def nms(boxes, scores, double iou_threshold):
    cdef double[:, ::1] b = np.ascontiguousarray(boxes, dtype=np.float64)
    cdef Py_ssize_t n = b.shape[0]
    cdef cnp.int64_t[::1] order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable").astype(np.int64)
    supp_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] suppressed = supp_arr
    keep_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] keep = keep_arr
    cdef Py_ssize_t nkeep = 0, a, c, i, j
    cdef double area_i, area_j, iw, ih, inter
    for a in range(n):
        i = order[a]
        if suppressed[i]:
            continue
        keep[nkeep] = i
        nkeep += 1
        area_i = (b[i, 2] - b[i, 0]) * (b[i, 3] - b[i, 1])
        for c in range(a + 1, n):
            j = order[c]
            if suppressed[j]:
                continue
            iw = (b[i, 2] if b[i, 2] < b[j, 2] else b[j, 2]) - (b[i, 0] if b[i, 0] > b[j, 0] else b[j, 0])
            ih = (b[i, 3] if b[i, 3] < b[j, 3] else b[j, 3]) - (b[i, 1] if b[i, 1] > b[j, 1] else b[j, 1])
            if iw <= 0 or ih <= 0:
                continue
            inter = iw * ih
            area_j = (b[j, 2] - b[j, 0]) * (b[j, 3] - b[j, 1])
            if inter / (area_i + area_j - inter) >= iou_threshold:
                suppressed[j] = 1
    return keep_arr[:nkeep].copy()


def greedy_match(det_boxes, det_scene, gt_boxes, gt_start, double iou_threshold):
    cdef double[:, ::1] d = np.ascontiguousarray(det_boxes, dtype=np.float64).reshape(-1, 4)
    cdef cnp.int64_t[::1] ds = np.ascontiguousarray(det_scene, dtype=np.int64)
    cdef double[:, ::1] g = np.ascontiguousarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    cdef cnp.int64_t[::1] gs = np.ascontiguousarray(gt_start, dtype=np.int64)
    cdef Py_ssize_t n = d.shape[0]
    matched_arr = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] matched = matched_arr
    taken_arr = np.zeros(g.shape[0], dtype=np.uint8)
    cdef unsigned char[::1] taken = taken_arr
    cdef Py_ssize_t k, j, lo, hi, best
    cdef double best_iou, iw, ih, inter, iou, area_d
    for k in range(n):
        lo = gs[ds[k]]
        hi = gs[ds[k] + 1]
        if hi <= lo:
            continue
        area_d = (d[k, 2] - d[k, 0]) * (d[k, 3] - d[k, 1])
        best = -1
        best_iou = -1.0
        for j in range(lo, hi):
            iw = (d[k, 2] if d[k, 2] < g[j, 2] else g[j, 2]) - (d[k, 0] if d[k, 0] > g[j, 0] else g[j, 0])
            ih = (d[k, 3] if d[k, 3] < g[j, 3] else g[j, 3]) - (d[k, 1] if d[k, 1] > g[j, 1] else g[j, 1])
            if iw < 0:
                iw = 0.0
            if ih < 0:
                ih = 0.0
            inter = iw * ih
            iou = inter / (area_d + (g[j, 2] - g[j, 0]) * (g[j, 3] - g[j, 1]) - inter)
            if iou > best_iou:
                best_iou = iou
                best = j
        if best_iou >= iou_threshold and not taken[best]:
            taken[best] = 1
            matched[k] = best
    return matched_arr
