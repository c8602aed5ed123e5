"""Axis-aligned boxes and vectorized IoU helpers.

Boxes are stored as ``(cx, cy, w, h)`` in scene units. Kernels work on
corner form ``(x1, y1, x2, y2)`` arrays of shape ``(n, 4)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class Box:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ContractError(f"box extent must be positive, got w={self.w}, h={self.h}")

    @classmethod
    def from_corners(cls, x1, y1, x2, y2) -> "Box":
        return cls((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)

    def corners(self) -> tuple[float, float, float, float]:
        hw, hh = self.w / 2.0, self.h / 2.0
        return (self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh)

    def scaled(self, factor: float) -> "Box":
        """Same center, extent multiplied by ``factor``."""
        return Box(self.cx, self.cy, self.w * factor, self.h * factor)

    def contains(self, x, y):
        """Closed-interval membership test; broadcasts over arrays."""
        x1, y1, x2, y2 = self.corners()
        return (x >= x1) & (x <= x2) & (y >= y1) & (y <= y2)

    def as_list(self) -> list[float]:
        return [self.cx, self.cy, self.w, self.h]


def corners_array(boxes) -> np.ndarray:
    """Stack a sequence of :class:`Box` into an ``(n, 4)`` corner array."""
    if len(boxes) == 0:
        return np.zeros((0, 4))
    return np.array([b.corners() for b in boxes], dtype=float)


def iou_one_to_many(box: np.ndarray, others: np.ndarray) -> np.ndarray:
    """IoU between one corner box and an ``(n, 4)`` array of corner boxes."""
    iw = np.minimum(box[2], others[:, 2]) - np.maximum(box[0], others[:, 0])
    ih = np.minimum(box[3], others[:, 3]) - np.maximum(box[1], others[:, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    area = (box[2] - box[0]) * (box[3] - box[1])
    areas = (others[:, 2] - others[:, 0]) * (others[:, 3] - others[:, 1])
    return inter / (area + areas - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU, shape ``(len(a), len(b))``."""
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    return np.stack([iou_one_to_many(row, b) for row in a])
