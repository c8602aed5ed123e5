"""VOC2007-style average precision, per-difficulty detection rates and the
false-detection rate."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .assignment import (
    DEFAULT_CONF_THRESHOLD, DEFAULT_CORE_FRACTION, DEFAULT_NMS_IOU, AnchorGrid, PredictionMaps,
    decode_detection_arrays,
)
from .errors import ContractError

AP_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
AP_CONF_THRESHOLD = 0.01
LEVELS = (1, 2, 3, 4)


def voc07_ap(recall: np.ndarray, precision: np.ndarray) -> float:
    """11-point interpolated AP: mean over ``t in {0, 0.1, ..., 1}`` of the
    best precision at recall ``>= t``."""
    total = 0.0
    for t in np.linspace(0.0, 1.0, 11):
        mask = recall >= t - 1e-12
        total += precision[mask].max() if mask.any() else 0.0
    return float(total / 11.0)


def _flatten(detections, scene_ids=None):
    """Concatenate per-scene ``(boxes, scores)`` into processing order:
    score descending, then scene id ascending, then detection index."""
    n_scenes = len(detections)
    scene_ids = np.arange(n_scenes) if scene_ids is None else np.asarray(scene_ids)
    boxes, scores, scene_idx, sid, det_idx = [], [], [], [], []
    for s, (b, sc) in enumerate(detections):
        b = np.asarray(b, dtype=float).reshape(-1, 4)
        sc = np.asarray(sc, dtype=float).ravel()
        if len(b) != len(sc):
            raise ContractError("each scene needs as many scores as boxes")
        boxes.append(b)
        scores.append(sc)
        scene_idx.append(np.full(len(b), s))
        sid.append(np.full(len(b), scene_ids[s]))
        det_idx.append(np.arange(len(b)))
    if not boxes:
        return np.zeros((0, 4)), np.zeros(0), np.zeros(0, dtype=np.int64)
    boxes, scores = np.concatenate(boxes), np.concatenate(scores)
    scene_idx, sid, det_idx = np.concatenate(scene_idx), np.concatenate(sid), np.concatenate(det_idx)
    order = np.lexsort((det_idx, sid, -scores))
    return boxes[order], scores[order], scene_idx[order].astype(np.int64)


def _gt_index(gt):
    gt = [np.asarray(g, dtype=float).reshape(-1, 4) for g in gt]
    start = np.zeros(len(gt) + 1, dtype=np.int64)
    start[1:] = np.cumsum([len(g) for g in gt])
    flat = np.concatenate(gt) if gt else np.zeros((0, 4))
    return flat, start


def match(detections, gt, iou_threshold: float, scene_ids=None):
    """Greedy one-to-one matching in score order.

    Returns ``(scores, matched_gt)`` in processing order, where
    ``matched_gt`` holds the flat GT index or -1, and the flat GT count.
    """
    if len(detections) != len(gt):
        raise ContractError("detections and ground truth cover different numbers of scenes")
    boxes, scores, scene_idx = _flatten(detections, scene_ids)
    gt_flat, gt_start = _gt_index(gt)
    matched = _kernels.greedy_match(boxes, scene_idx, gt_flat, gt_start, iou_threshold)
    return scores, matched, len(gt_flat)


def average_precision(detections, gt, iou_threshold: float = 0.5, scene_ids=None) -> float:
    """VOC2007 11-point AP.

    ``detections`` is a per-scene list of ``(boxes, scores)`` with corner
    boxes; ``gt`` a per-scene list of corner-box arrays. With no ground truth
    at all, AP is 1.0 when there are also no detections and 0.0 otherwise.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ContractError("iou_threshold must lie in (0, 1)")
    scores, matched, n_gt = match(detections, gt, iou_threshold, scene_ids)
    if n_gt == 0:
        return 1.0 if len(scores) == 0 else 0.0
    if len(scores) == 0:
        return 0.0
    tp = np.cumsum(matched >= 0)
    fp = np.cumsum(matched < 0)
    return voc07_ap(tp / n_gt, tp / (tp + fp))


@dataclass
class EvalReport:
    ap50: float
    ap75: float
    ap: float
    detection_rate: dict
    false_detection_rate: float
    gt_per_level: dict
    tp_per_level: dict
    tp: int
    fp: int
    n_detections: int
    conf_threshold: float
    match_iou: float

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        for key in ("detection_rate", "gt_per_level", "tp_per_level"):
            d[key] = {int(k): v for k, v in d[key].items()}
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1))


def _difficulties(scenes):
    out = []
    for s in scenes:
        levels = []
        for o in s.objects:
            lvl = getattr(o, "difficulty", None)
            if lvl not in LEVELS:
                raise ContractError(f"object in scene {s.scene_id} lacks a difficulty label 1..4")
            levels.append(lvl)
        out.append(levels)
    return out


def evaluate(
    maps_list: list[PredictionMaps],
    scenes,
    grid: AnchorGrid,
    conf_threshold: float = DEFAULT_CONF_THRESHOLD,
    nms_iou: float = DEFAULT_NMS_IOU,
    match_iou: float = 0.5,
    ap_conf_threshold: float = AP_CONF_THRESHOLD,
) -> EvalReport:
    """Full report for per-scene prediction maps against labeled scenes.

    AP uses every detection above ``ap_conf_threshold``; the rates use the
    fixed operating point ``conf_threshold`` and matching at ``match_iou``.
    """
    if len(maps_list) != len(scenes):
        raise ContractError("need one prediction map per scene")
    levels = _difficulties(scenes)
    gt = [s.gt_corners for s in scenes]
    ids = [s.scene_id for s in scenes]

    low = [decode_detection_arrays(m, grid, ap_conf_threshold, nms_iou) for m in maps_list]
    aps = {t: average_precision(low, gt, t, ids) for t in AP_IOU_THRESHOLDS}

    high = [decode_detection_arrays(m, grid, conf_threshold, nms_iou) for m in maps_list]
    scores, matched, n_gt = match(high, gt, match_iou, ids)
    flat_levels = np.array([lvl for lv in levels for lvl in lv], dtype=int)
    hit = flat_levels[matched[matched >= 0]]
    gt_per = {k: int(np.sum(flat_levels == k)) for k in LEVELS}
    tp_per = {k: int(np.sum(hit == k)) for k in LEVELS}
    tp = int(np.sum(matched >= 0))
    fp = int(np.sum(matched < 0))
    n_det = len(scores)
    return EvalReport(
        ap50=aps[0.5],
        ap75=aps[0.75],
        ap=float(np.mean(list(aps.values()))),
        detection_rate={k: (tp_per[k] / gt_per[k] if gt_per[k] else 0.0) for k in LEVELS},
        false_detection_rate=fp / n_det if n_det else 0.0,
        gt_per_level=gt_per,
        tp_per_level=tp_per,
        tp=tp,
        fp=fp,
        n_detections=n_det,
        conf_threshold=conf_threshold,
        match_iou=match_iou,
    )


def oracle_maps(scene, grid: AnchorGrid, include=None, high: float = 0.99, low: float = 0.01) -> PredictionMaps:
    """Prediction maps of a detector that knows the ground truth.

    Anchors in the central half of each included object's box get
    confidence ``high`` and the exact distances to that box's edges; every
    other anchor gets ``low`` and a small box. ``include(obj)`` filters objects.
    """
    cx, cy = grid.centers
    conf = np.full(grid.shape, low)
    reg = np.full(grid.shape + (4,), grid.stride / 4)
    for obj in scene.objects:
        if include is not None and not include(obj):
            continue
        box = obj.gt_box
        core = box.scaled(DEFAULT_CORE_FRACTION).contains(cx, cy)
        x1, y1, x2, y2 = box.corners()
        conf[core] = high
        reg[core] = np.stack([cx[core] - x1, cy[core] - y1, x2 - cx[core], y2 - cy[core]], axis=1)
    return PredictionMaps(conf, reg)


COMPARISON_COLUMNS = (
    "label", "mode", "seed", "ap50", "ap75", "ap", "dr1", "dr2", "dr3", "dr4", "false_detection_rate",
)


def comparison_row(label: str, mode: str, seed, report: EvalReport) -> dict:
    dr = report.detection_rate
    return {
        "label": label, "mode": mode, "seed": seed,
        "ap50": report.ap50, "ap75": report.ap75, "ap": report.ap,
        "dr1": dr[1], "dr2": dr[2], "dr3": dr[3], "dr4": dr[4],
        "false_detection_rate": report.false_detection_rate,
    }


def append_comparison_row(path, row: dict) -> None:
    """Append one tab-separated row, writing the header for a new file."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a") as fh:
        if new:
            fh.write("\t".join(COMPARISON_COLUMNS) + "\n")
        fh.write("\t".join(_fmt(row[c]) for c in COMPARISON_COLUMNS) + "\n")


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.4f}"
    return str(x)
