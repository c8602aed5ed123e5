"""Training modes and the two-phase easy-prior + self-paced schedule.

Modes:

* ``AS``  - every labeled object, unit weights.
* ``ES``  - only easy-marked objects are labeled; the rest become background.
* ``HEM`` - at each epoch start the frozen model scores every object with the
  per-object sample loss; the top ``hem_keep_fraction`` train with weight 1,
  the rest with weight 0.
* ``SPL-ESP-*`` - ``epochs_esp`` epochs as in ES, then ``epochs_spl`` epochs
  on all objects where each batch first computes object weights from the
  frozen model (confidence-based for BC, loss-based closed forms for
  BH/BLine/BLog) and then takes one gradient step on the weighted loss.

Schedules use training progress ``EP = completed phase-2 epochs / epochs_spl``.
"""
from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ._runtime import tune_allocator
from .assignment import DEFAULT_CORE_FRACTION, DEFAULT_IGNORE_FRACTION, AnchorGrid, assign_anchors
from .detector import (
    DetectorParams, OptimizerState, adam_step, batch_loss_and_grad, end_epoch, forward_batch,
    init_params, save_checkpoint,
)
from .errors import ContractError, TrainingDivergenceError
from .losses import DEFAULT_ALPHA, DEFAULT_N_FIXED, LossTargets, baseline_sample_losses
from .spl_core import (
    DEFAULT_ROOT_ORDER, RegularizerKind, ScheduleParams, confidence_weights, lambda_params,
    lambda_schedule, loss_based_weights, xi_params, xi_schedule,
)
from .synth_world import Scene, easy_subset

log = logging.getLogger(__name__)


class Mode(enum.Enum):
    AS = "AS"
    ES = "ES"
    HEM = "HEM"
    SPL_ESP_BC = "SPL-ESP-BC"
    SPL_ESP_BH = "SPL-ESP-BH"
    SPL_ESP_BLINE = "SPL-ESP-BLine"
    SPL_ESP_BLOG = "SPL-ESP-BLog"

    @property
    def uses_esp(self) -> bool:
        return self.value.startswith("SPL-ESP")

    @property
    def regularizer(self) -> RegularizerKind | None:
        return _MODE_KIND.get(self)

    @classmethod
    def parse(cls, name: str) -> "Mode":
        for m in cls:
            if m.value.lower() == name.strip().lower() or m.name.lower() == name.strip().lower():
                return m
        raise ContractError(f"unknown mode {name!r}; choose from {[m.value for m in cls]}")


_MODE_KIND = {
    Mode.SPL_ESP_BC: RegularizerKind.CONFIDENCE_ROOT,
    Mode.SPL_ESP_BH: RegularizerKind.HARD,
    Mode.SPL_ESP_BLINE: RegularizerKind.LINEAR,
    Mode.SPL_ESP_BLOG: RegularizerKind.LOGARITHMIC,
}


@dataclass
class TrainConfig:
    mode: Mode = Mode.SPL_ESP_BC
    epochs_total: int = 150
    epochs_esp: int = 50
    epochs_spl: int = 100
    batch_size: int = 8
    xi: ScheduleParams = field(default_factory=xi_params)
    lam: ScheduleParams = field(default_factory=lambda_params)
    alpha: float = DEFAULT_ALPHA
    n_fixed: float = DEFAULT_N_FIXED
    m: int = DEFAULT_ROOT_ORDER
    seed: int = 0
    hem_keep_fraction: float = 0.4
    lr: float = 1e-3
    lr_decay: float = 0.95
    hidden: int = 16
    init_std: float = 0.1
    core_fraction: float = DEFAULT_CORE_FRACTION
    ignore_fraction: float = DEFAULT_IGNORE_FRACTION
    # lambda for the logarithmic regularizer must stay below 1
    log_lambda_cap: float = 0.999
    literal_lambda: bool = False
    force_unit_weights: bool = False
    reset_optimizer_at_phase2: bool = True

    def __post_init__(self):
        if isinstance(self.mode, str):
            self.mode = Mode.parse(self.mode)
        self.validate()

    def validate(self) -> None:
        if self.mode.uses_esp:
            if self.epochs_esp < 0 or self.epochs_spl < 1:
                raise ContractError("ESP modes need epochs_esp >= 0 and epochs_spl >= 1")
            if self.epochs_esp + self.epochs_spl != self.epochs_total:
                raise ContractError(
                    f"epochs_esp + epochs_spl ({self.epochs_esp}+{self.epochs_spl}) must equal epochs_total ({self.epochs_total})"
                )
        elif self.epochs_total < 1:
            raise ContractError("epochs_total must be at least 1")
        if not 0.0 < self.hem_keep_fraction <= 1.0:
            raise ContractError("hem_keep_fraction must lie in (0, 1]")
        if self.batch_size < 1:
            raise ContractError("batch_size must be at least 1")
        if not 0.0 < self.log_lambda_cap < 1.0:
            raise ContractError("log_lambda_cap must lie in (0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        d["xi"] = {"start_value": self.xi.start_value, "e1": self.xi.e1, "e2": self.xi.e2}
        d["lam"] = {"start_value": self.lam.start_value, "e1": self.lam.e1, "e2": self.lam.e2}
        return d


@dataclass
class TrainLogRecord:
    epoch: int
    mode: str
    phase: str
    mean_loss: float
    mean_v: dict
    zero_weight_objects: int
    weighted_objects: int
    schedule_value: float | None
    lr: float
    hem_pool: int | None = None
    hem_selected: int | None = None
    min_weighted_conf: float | None = None
    max_unweighted_conf: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    params: DetectorParams
    optimizer: OptimizerState
    log: list[TrainLogRecord]


class _SceneData:
    """Per-scene training targets plus object metadata."""

    def __init__(self, scene: Scene, grid: AnchorGrid, config: TrainConfig):
        self.scene = scene
        assignment = assign_anchors(grid, scene.gt_boxes, config.core_fraction, config.ignore_fraction)
        self.targets = LossTargets(assignment, scene.gt_corners, grid, config.n_fixed)
        self.difficulty = np.array([o.difficulty for o in scene.objects], dtype=int)
        self.object_ids = np.array([o.object_id for o in scene.objects], dtype=int)
        self.active = self.targets.counts > 0
        cx, cy = grid.flat_centers[:, 0], grid.flat_centers[:, 1]
        self.inside = [np.flatnonzero(b.contains(cx, cy)) for b in scene.gt_boxes]

    @property
    def n_objects(self) -> int:
        return len(self.difficulty)

    def confidences(self, maps) -> np.ndarray:
        conf = maps.conf.ravel()
        return np.array([conf[idx].max() if len(idx) else 0.0 for idx in self.inside])


def compute_batch_weights(mode: Mode, maps_list, scene_data, schedule_value, config: TrainConfig):
    """Per-scene weight vectors from frozen-model outputs.

    BC: root of the extracted object confidence above the threshold ``xi``.
    BH/BLine/BLog: loss-based closed forms of the per-object sample loss at
    age ``lambda``. Objects without positive anchors get weight 0.
    """
    out = []
    kind = mode.regularizer
    for maps, sd in zip(maps_list, scene_data):
        if sd.n_objects == 0:
            out.append(np.zeros(0))
            continue
        if kind is RegularizerKind.CONFIDENCE_ROOT:
            v = confidence_weights(sd.confidences(maps), schedule_value, config.m)
        elif kind is not None:
            losses = baseline_sample_losses(maps, sd.targets)
            lam = schedule_value
            if kind is RegularizerKind.LOGARITHMIC:
                lam = min(lam, config.log_lambda_cap)
            v = loss_based_weights(kind, np.where(sd.active, losses, 0.0), lam)
        else:
            raise ContractError(f"mode {mode.value} has no minimizer function")
        out.append(np.where(sd.active, v, 0.0))
    return out


def hem_select(losses: np.ndarray, object_ids: np.ndarray, keep_fraction: float) -> np.ndarray:
    """Boolean mask of the ``ceil(keep_fraction * n)`` highest-loss objects;
    ties go to the smaller object id."""
    n = len(losses)
    k = math.ceil(keep_fraction * n)
    order = np.lexsort((object_ids, -losses))
    mask = np.zeros(n, dtype=bool)
    mask[order[:k]] = True
    return mask


class _EpochStats:
    def __init__(self):
        self.loss_sum = 0.0
        self.batches = 0
        self.v_sum = np.zeros(5)
        self.v_cnt = np.zeros(5)
        self.zero = 0
        self.weighted = 0
        self.min_weighted_conf = math.inf
        self.max_unweighted_conf = -math.inf

    def add_weights(self, sd: _SceneData, v: np.ndarray, confs=None):
        act = sd.active
        np.add.at(self.v_sum, sd.difficulty[act], v[act])
        np.add.at(self.v_cnt, sd.difficulty[act], 1)
        self.zero += int(np.sum(v[act] == 0))
        self.weighted += int(np.sum(v[act] > 0))
        if confs is not None and act.any():
            c, w = confs[act], v[act]
            if (w > 0).any():
                self.min_weighted_conf = min(self.min_weighted_conf, float(c[w > 0].min()))
            if (w == 0).any():
                self.max_unweighted_conf = max(self.max_unweighted_conf, float(c[w == 0].max()))

    def mean_v(self) -> dict:
        return {str(k): (float(self.v_sum[k] / self.v_cnt[k]) if self.v_cnt[k] else None) for k in range(1, 5)}


def _finite_or_none(x):
    return None if x is None or not math.isfinite(x) else float(x)


def train(
    config: TrainConfig,
    scenes: list[Scene],
    grid: AnchorGrid,
    run_dir=None,
    init: DetectorParams | None = None,
) -> TrainResult:
    """Train a detector under ``config.mode``; deterministic given ``config.seed``.

    With ``run_dir``, one JSON line per epoch is appended to
    ``train_log.jsonl`` and checkpoints are written at the phase boundary
    (``checkpoint_esp.json``) and at the end (``checkpoint_final.json``).
    """
    if not scenes:
        raise ContractError("training set is empty")
    tune_allocator()
    mode = config.mode
    feature_dim = scenes[0].features.shape[-1]
    params = init.copy() if init is not None else init_params(feature_dim, config.hidden, config.seed, config.init_std)
    state = OptimizerState(lr=config.lr, decay=config.lr_decay)
    shuffle_rng = np.random.default_rng([config.seed, 1])

    run_dir = Path(run_dir) if run_dir is not None else None
    log_path = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        log_path = run_dir / "train_log.jsonl"
        log_path.write_text("")

    all_data = [_SceneData(s, grid, config) for s in scenes]
    easy_data = None
    if mode is Mode.ES or (mode.uses_esp and config.epochs_esp > 0):
        easy_data = [_SceneData(s, grid, config) for s in easy_subset(scenes)]

    if mode.uses_esp:
        phases = [("esp", config.epochs_esp, easy_data), ("spl", config.epochs_spl, all_data)]
    elif mode is Mode.ES:
        phases = [("plain", config.epochs_total, easy_data)]
    else:
        phases = [("plain", config.epochs_total, all_data)]

    records: list[TrainLogRecord] = []
    epoch = 0
    for phase, n_epochs, data in phases:
        if n_epochs == 0:
            continue
        if phase == "spl" and config.reset_optimizer_at_phase2:
            state = OptimizerState(lr=config.lr, decay=config.lr_decay)
        for k in range(n_epochs):
            rec = _run_epoch(config, phase, k, n_epochs, epoch, data, params, state, grid, shuffle_rng)
            records.append(rec)
            if log_path is not None:
                with open(log_path, "a") as fh:
                    fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
            end_epoch(state)
            epoch += 1
        if phase == "esp" and run_dir is not None:
            save_checkpoint(run_dir / "checkpoint_esp.json", params, state, epoch, {"phase": "esp"})
    if run_dir is not None:
        save_checkpoint(run_dir / "checkpoint_final.json", params, state, epoch, {"phase": "final"})
    return TrainResult(params, state, records)


def _run_epoch(config, phase, k, n_epochs, epoch, data, params, state, grid, shuffle_rng) -> TrainLogRecord:
    mode = config.mode
    stats = _EpochStats()
    schedule_value = None
    hem_pool = hem_selected = None
    fixed_weights = None

    weighting = phase == "spl" and not config.force_unit_weights
    if weighting:
        ep = k / n_epochs
        if mode is Mode.SPL_ESP_BC:
            schedule_value = xi_schedule(config.xi, ep)
        else:
            schedule_value = lambda_schedule(config.lam, ep, literal=config.literal_lambda)
    elif mode is Mode.HEM:
        fixed_weights, hem_pool, hem_selected = _hem_weights(config, data, params, grid)

    def weight_fn(maps_list, batch):
        if weighting:
            ws = compute_batch_weights(mode, maps_list, batch, schedule_value, config)
        elif fixed_weights is not None:
            ws = [fixed_weights[id(sd)] for sd in batch]
        else:
            ws = [np.ones(sd.n_objects) for sd in batch]
        for sd, w, maps in zip(batch, ws, maps_list):
            confs = sd.confidences(maps) if mode is Mode.SPL_ESP_BC and weighting else None
            stats.add_weights(sd, w, confs)
        return ws

    order = shuffle_rng.permutation(len(data))
    for start in range(0, len(order), config.batch_size):
        batch = [data[i] for i in order[start:start + config.batch_size]]
        res = batch_loss_and_grad(
            params,
            [sd.scene for sd in batch],
            [sd.targets for sd in batch],
            None,
            grid,
            config.alpha,
            weight_fn=lambda maps_list, batch=batch: weight_fn(maps_list, batch),
        )
        if not math.isfinite(res.loss):
            record = {"epoch": epoch, "phase": phase, "batch_start": start, "loss": res.loss, "lr": state.lr}
            raise TrainingDivergenceError(f"non-finite loss at epoch {epoch}", record)
        adam_step(state, params, res.grads)
        stats.loss_sum += res.loss
        stats.batches += 1

    return TrainLogRecord(
        epoch=epoch,
        mode=mode.value,
        phase=phase,
        mean_loss=stats.loss_sum / max(stats.batches, 1),
        mean_v=stats.mean_v(),
        zero_weight_objects=stats.zero,
        weighted_objects=stats.weighted,
        schedule_value=schedule_value,
        lr=state.lr,
        hem_pool=hem_pool,
        hem_selected=hem_selected,
        min_weighted_conf=_finite_or_none(stats.min_weighted_conf),
        max_unweighted_conf=_finite_or_none(stats.max_unweighted_conf),
    )


def object_sample_losses(params: DetectorParams, data, grid: AnchorGrid, chunk: int = 64):
    """Per-object sample losses of every scene under frozen ``params``."""
    out = []
    for start in range(0, len(data), chunk):
        part = data[start:start + chunk]
        maps_list = forward_batch(params, [sd.scene for sd in part], grid)
        out.extend(baseline_sample_losses(maps, sd.targets) for maps, sd in zip(maps_list, part))
    return out


def _hem_weights(config, data, params, grid):
    losses = object_sample_losses(params, data, grid)
    flat_loss, flat_ids, owners = [], [], []
    for si, (sd, ls) in enumerate(zip(data, losses)):
        for j in range(sd.n_objects):
            if sd.active[j]:
                flat_loss.append(ls[j])
                flat_ids.append(sd.object_ids[j])
                owners.append((si, j))
    weights = {id(sd): np.zeros(sd.n_objects) for sd in data}
    if not flat_loss:
        return weights, 0, 0
    keep = hem_select(np.array(flat_loss), np.array(flat_ids), config.hem_keep_fraction)
    for (si, j), kept in zip(owners, keep):
        if kept:
            weights[id(data[si])][j] = 1.0
    return weights, len(flat_loss), int(keep.sum())


def config_with(config: TrainConfig, **changes) -> TrainConfig:
    return replace(config, **changes)
