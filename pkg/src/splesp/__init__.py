"""Self-paced training strategies for a one-class anchor-grid detector."""
from ._kernels import BACKEND as KERNEL_BACKEND
from .assignment import AnchorGrid, PredictionMaps, assign_anchors, decode_detections, object_confidence
from .boxes import Box
from .detector import DetectorParams, forward, init_params
from .losses import baseline_sample_loss, ciou_loss, total_loss, weighted_total_loss
from .metrics import EvalReport, average_precision, evaluate
from .spl_core import (
    RegularizerKind, ScheduleParams, lambda_schedule, minimize_weight_confidence_based,
    minimize_weight_loss_based, oracle_argmin_weight, xi_schedule,
)
from .synth_world import DatasetSpec, generate_dataset, easy_subset
from .trainer import Mode, TrainConfig, train

__version__ = "0.1.0"
