"""Static anchor labeling, object-confidence extraction and detection decoding."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels
from .boxes import Box
from .errors import ContractError, DegenerateObjectError

log = logging.getLogger(__name__)

NEGATIVE = -1
IGNORE = -2

DEFAULT_CORE_FRACTION = 0.5
DEFAULT_IGNORE_FRACTION = 1.0
DEFAULT_CONF_THRESHOLD = 0.3
DEFAULT_NMS_IOU = 0.5


@dataclass(frozen=True)
class AnchorGrid:
    width: int
    height: int
    stride: float

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or not self.stride > 0:
            raise ContractError(f"invalid anchor grid {self.width}x{self.height}, stride {self.stride}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def size(self) -> int:
        return self.width * self.height

    @cached_property
    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Anchor center coordinates ``(cx, cy)``, each shaped ``(height, width)``."""
        xs = (np.arange(self.width) + 0.5) * self.stride
        ys = (np.arange(self.height) + 0.5) * self.stride
        cx, cy = np.meshgrid(xs, ys)
        return cx, cy

    @cached_property
    def flat_centers(self) -> np.ndarray:
        cx, cy = self.centers
        return np.stack([cx.ravel(), cy.ravel()], axis=1)


@dataclass
class PredictionMaps:
    """Detector output: ``conf`` is ``(H, W)``, ``reg`` is ``(H, W, 4)`` holding
    left/top/right/bottom distances from the anchor center."""

    conf: np.ndarray
    reg: np.ndarray

    def check(self, grid: AnchorGrid) -> None:
        if self.conf.shape != grid.shape or self.reg.shape != grid.shape + (4,):
            raise ContractError(
                f"prediction maps {self.conf.shape}/{self.reg.shape} do not match grid {grid.shape}"
            )


@dataclass
class AnchorAssignment:
    """Per-anchor labels: ``NEGATIVE``, ``IGNORE`` or the index of an object."""

    labels: np.ndarray
    n_objects: int
    skipped: tuple[int, ...] = ()
    _members: list = field(default=None, repr=False, compare=False)

    @property
    def shape(self):
        return self.labels.shape

    def members(self, i: int) -> np.ndarray:
        """Flat indices of the positive anchors of object ``i``, ascending."""
        if self._members is None:
            flat = self.labels.ravel()
            pos = np.flatnonzero(flat >= 0)
            owner = flat[pos]
            self._members = [pos[owner == k] for k in range(self.n_objects)]
        return self._members[i]

    @property
    def active_objects(self) -> list[int]:
        return [i for i in range(self.n_objects) if i not in self.skipped]


def assign_anchors(
    grid: AnchorGrid,
    gt: list[Box],
    core_fraction: float = DEFAULT_CORE_FRACTION,
    ignore_fraction: float = DEFAULT_IGNORE_FRACTION,
    strict: bool = False,
) -> AnchorAssignment:
    """Label anchors from ground-truth boxes.

    An anchor is positive for an object when its center lies in the box
    shrunk to ``core_fraction`` about its center; anchors in the band out to
    ``ignore_fraction`` are ignored; the rest are negative. Competing
    positive claims go to the object with the nearest center (lower index on
    ties). Objects left with no positive anchor are skipped and logged, or
    raise :class:`DegenerateObjectError` when ``strict``.
    """
    if not (0.0 < core_fraction <= ignore_fraction <= 1.0):
        raise ContractError(
            f"need 0 < core_fraction <= ignore_fraction <= 1, got {core_fraction}, {ignore_fraction}"
        )
    cx, cy = grid.centers
    labels = np.full(grid.shape, NEGATIVE, dtype=np.int64)
    if not gt:
        return AnchorAssignment(labels, 0)

    best_d2 = np.full(grid.shape, np.inf)
    ignored = np.zeros(grid.shape, dtype=bool)
    for i, box in enumerate(gt):
        core = box.scaled(core_fraction).contains(cx, cy)
        d2 = (cx - box.cx) ** 2 + (cy - box.cy) ** 2
        win = core & (d2 < best_d2)
        labels[win] = i
        best_d2[win] = d2[win]
        ignored |= box.scaled(ignore_fraction).contains(cx, cy)
    labels[(labels == NEGATIVE) & ignored] = IGNORE

    counts = np.bincount(labels[labels >= 0], minlength=len(gt))
    skipped = tuple(int(i) for i in np.flatnonzero(counts == 0))
    for i in skipped:
        msg = f"object {i} at {gt[i]} has no anchor center in its core region; skipped"
        if strict:
            raise DegenerateObjectError(msg, object_index=i)
        log.warning(msg)
    return AnchorAssignment(labels, len(gt), skipped)


def object_confidence(gt_box: Box, maps: PredictionMaps, grid: AnchorGrid) -> float:
    """Maximum predicted confidence over anchors whose centers lie inside ``gt_box``."""
    cx, cy = grid.centers
    inside = gt_box.contains(cx, cy)
    if not inside.any():
        raise DegenerateObjectError(f"no anchor center inside {gt_box}")
    return float(maps.conf[inside].max())


def object_confidences(gt: list[Box], maps: PredictionMaps, grid: AnchorGrid) -> np.ndarray:
    return np.array([object_confidence(b, maps, grid) for b in gt], dtype=float)


def decode_boxes(reg: np.ndarray, grid: AnchorGrid) -> np.ndarray:
    """Corner boxes for every anchor, shape ``(H * W, 4)``."""
    c = grid.flat_centers
    r = reg.reshape(-1, 4)
    return np.stack([c[:, 0] - r[:, 0], c[:, 1] - r[:, 1], c[:, 0] + r[:, 2], c[:, 1] + r[:, 3]], axis=1)


@dataclass(frozen=True)
class Detection:
    box: Box
    score: float


def decode_detection_arrays(
    maps: PredictionMaps,
    grid: AnchorGrid,
    conf_threshold: float = DEFAULT_CONF_THRESHOLD,
    nms_iou: float = DEFAULT_NMS_IOU,
) -> tuple[np.ndarray, np.ndarray]:
    """Array form of :func:`decode_detections`: corner boxes and scores."""
    if not (0.0 < conf_threshold < 1.0 and 0.0 < nms_iou < 1.0):
        raise ContractError("conf_threshold and nms_iou must lie in (0, 1)")
    conf = maps.conf.ravel()
    cand = np.flatnonzero(conf >= conf_threshold)
    if len(cand) == 0:
        return np.zeros((0, 4)), np.zeros(0)
    c = grid.flat_centers[cand]
    r = maps.reg.reshape(-1, 4)[cand]
    boxes = np.stack([c[:, 0] - r[:, 0], c[:, 1] - r[:, 1], c[:, 0] + r[:, 2], c[:, 1] + r[:, 3]], axis=1)
    scores = conf[cand]
    valid = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
    boxes, scores = boxes[valid], scores[valid]
    keep = _kernels.nms(boxes, scores, nms_iou)
    return boxes[keep], scores[keep]


def decode_detections(
    maps: PredictionMaps,
    grid: AnchorGrid,
    conf_threshold: float = DEFAULT_CONF_THRESHOLD,
    nms_iou: float = DEFAULT_NMS_IOU,
) -> list[Detection]:
    """Threshold, decode and non-max-suppress anchor predictions.

    Scores come out in non-increasing order.
    """
    boxes, scores = decode_detection_arrays(maps, grid, conf_threshold, nms_iou)
    return [Detection(Box.from_corners(*b), float(s)) for b, s in zip(boxes, scores)]
