"""Per-anchor two-layer detector with analytic gradients, Adam, checkpoints.

Every anchor's feature vector goes through ``softplus(x W1 + b1) W2 + b2``.
Output 0 is the confidence logit (squashed by the logistic function); outputs
1..4 become left/top/right/bottom box distances ``stride * softplus(raw)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .assignment import AnchorGrid, PredictionMaps
from .errors import ContractError, TrainingDivergenceError
from .losses import DEFAULT_ALPHA, LossTargets, loss_and_grad

CHECKPOINT_FORMAT = "splesp-checkpoint"
CHECKPOINT_VERSION = 1
PARAM_NAMES = ("W1", "b1", "W2", "b2")
N_OUTPUTS = 5


def softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _softplus_and_slope(x):
    """``softplus(x)`` and its derivative ``logistic(x) = 1 - exp(-softplus(x))``."""
    e = np.abs(x)
    np.negative(e, out=e)
    np.exp(e, out=e)
    value = np.log1p(e)
    value += np.maximum(x, 0.0)
    slope = np.negative(value)
    np.expm1(slope, out=slope)
    np.negative(slope, out=slope)
    return value, slope


@dataclass
class DetectorParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @property
    def feature_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def hidden(self) -> int:
        return self.W1.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def copy(self) -> "DetectorParams":
        return DetectorParams(*(getattr(self, k).copy() for k in PARAM_NAMES))

    def flat(self) -> np.ndarray:
        return np.concatenate([getattr(self, k).ravel() for k in PARAM_NAMES])

    def with_flat(self, vec: np.ndarray) -> "DetectorParams":
        out, pos = [], 0
        for k in PARAM_NAMES:
            a = getattr(self, k)
            out.append(vec[pos:pos + a.size].reshape(a.shape).copy())
            pos += a.size
        return DetectorParams(*out)


def init_params(feature_dim: int = 8, hidden: int = 16, seed=0, std: float = 0.1) -> DetectorParams:
    """Normal(0, std^2) initialization; the default ``std`` gives variance 0.01."""
    rng = np.random.default_rng(seed)
    return DetectorParams(
        W1=rng.normal(0.0, std, (feature_dim, hidden)),
        b1=rng.normal(0.0, std, hidden),
        W2=rng.normal(0.0, std, (hidden, N_OUTPUTS)),
        b2=rng.normal(0.0, std, N_OUTPUTS),
    )


def zero_params(feature_dim: int = 8, hidden: int = 16) -> DetectorParams:
    return DetectorParams(
        np.zeros((feature_dim, hidden)), np.zeros(hidden), np.zeros((hidden, N_OUTPUTS)), np.zeros(N_OUTPUTS)
    )


def _features_of(scene_or_features):
    return getattr(scene_or_features, "features", scene_or_features)


def _run(params: DetectorParams, x: np.ndarray, stride: float):
    if x.shape[-1] != params.feature_dim:
        raise ContractError(f"features have dimension {x.shape[-1]}, detector expects {params.feature_dim}")
    pre = x @ params.W1 + params.b1
    hid, hid_slope = _softplus_and_slope(pre)
    out = hid @ params.W2 + params.b2
    conf = expit(out[:, 0])
    sp, sp_slope = _softplus_and_slope(out[:, 1:])
    return hid, hid_slope, conf, stride * sp, stride * sp_slope


def forward(params: DetectorParams, scene, grid: AnchorGrid) -> PredictionMaps:
    """Prediction maps for one scene (or a raw ``(H, W, d)`` feature grid)."""
    feats = _features_of(scene)
    if feats.shape[:2] != grid.shape:
        raise ContractError(f"feature grid {feats.shape[:2]} does not match anchor grid {grid.shape}")
    _, _, conf, reg, _ = _run(params, feats.reshape(-1, feats.shape[-1]), grid.stride)
    return PredictionMaps(conf.reshape(grid.shape), reg.reshape(grid.shape + (4,)))


def forward_batch(params: DetectorParams, scenes, grid: AnchorGrid) -> list[PredictionMaps]:
    if not scenes:
        return []
    x = np.concatenate([_features_of(s).reshape(-1, params.feature_dim) for s in scenes])
    _, _, conf, reg, _ = _run(params, x, grid.stride)
    a = grid.size
    return [
        PredictionMaps(conf[k * a:(k + 1) * a].reshape(grid.shape), reg[k * a:(k + 1) * a].reshape(grid.shape + (4,)))
        for k in range(len(scenes))
    ]


@dataclass
class BatchResult:
    loss: float
    grads: dict[str, np.ndarray]
    breakdowns: list
    maps: list[PredictionMaps]


def batch_loss_and_grad(
    params: DetectorParams,
    scenes,
    targets: list[LossTargets],
    weights: list,
    grid: AnchorGrid,
    alpha: float = DEFAULT_ALPHA,
    weight_fn=None,
) -> BatchResult:
    """Mean weighted loss over a batch of scenes and its parameter gradient.

    ``weight_fn(maps_list)``, when given, is called on the outputs of the
    current (frozen) parameters to produce the per-scene weight vectors,
    replacing ``weights``; the gradient step then treats them as constants.
    """
    if len(scenes) != len(targets):
        raise ContractError("scenes and targets differ in length")
    b = len(scenes)
    a = grid.size
    x = np.concatenate([_features_of(s).reshape(-1, params.feature_dim) for s in scenes])
    hid, hid_slope, conf, reg, reg_slope = _run(params, x, grid.stride)
    maps = [
        PredictionMaps(conf[k * a:(k + 1) * a].reshape(grid.shape), reg[k * a:(k + 1) * a].reshape(grid.shape + (4,)))
        for k in range(b)
    ]
    if weight_fn is not None:
        weights = weight_fn(maps)
    d_conf = np.empty_like(conf)
    d_reg = np.empty_like(reg)
    total = 0.0
    breakdowns = []
    for k in range(b):
        bd, dc, dr = loss_and_grad(maps[k], targets[k], weights[k], alpha)
        breakdowns.append(bd)
        total += bd.total
        d_conf[k * a:(k + 1) * a] = dc.ravel()
        d_reg[k * a:(k + 1) * a] = dr.reshape(-1, 4)
    scale = 1.0 / b
    d_out = np.empty((len(x), N_OUTPUTS))
    d_out[:, 0] = d_conf * conf * (1.0 - conf) * scale
    d_out[:, 1:] = d_reg * reg_slope * scale
    d_pre = (d_out @ params.W2.T) * hid_slope
    grads = {
        "W1": x.T @ d_pre,
        "b1": d_pre.sum(axis=0),
        "W2": hid.T @ d_out,
        "b2": d_out.sum(axis=0),
    }
    return BatchResult(total * scale, grads, breakdowns, maps)


def backward(
    params: DetectorParams,
    scene,
    targets: LossTargets,
    v=None,
    grid: AnchorGrid | None = None,
    alpha: float = DEFAULT_ALPHA,
) -> tuple[float, dict[str, np.ndarray]]:
    """Weighted loss of one scene and its exact gradient w.r.t. the parameters."""
    grid = grid or targets.grid
    res = batch_loss_and_grad(params, [scene], [targets], [v], grid, alpha)
    return res.loss, res.grads


def scene_loss(params, scene, targets: LossTargets, v=None, alpha: float = DEFAULT_ALPHA) -> float:
    maps = forward(params, scene, targets.grid)
    return loss_and_grad(maps, targets, v, alpha, need_grad=False)[0].total


@dataclass
class OptimizerState:
    lr: float = 1e-3
    decay: float = 0.95
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr > 0:
            raise ContractError(f"learning rate must be positive, got {self.lr}")


def adam_step(state: OptimizerState, params: DetectorParams, grads: dict[str, np.ndarray]) -> None:
    """One bias-corrected Adam update, applied to ``params`` and ``state`` in place."""
    for k in PARAM_NAMES:
        if not np.all(np.isfinite(grads[k])):
            raise TrainingDivergenceError(f"non-finite gradient for {k} at step {state.step + 1}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for k in PARAM_NAMES:
        g = grads[k]
        p = getattr(params, k)
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * (g * g)
        p -= state.lr * (state.m[k] / bc1) / (np.sqrt(state.v[k] / bc2) + state.eps)


def end_epoch(state: OptimizerState) -> None:
    """Multiply the learning rate by the per-epoch decay factor."""
    state.lr *= state.decay


# -- checkpoints -------------------------------------------------------------

def _encode(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(x) for x in a.ravel()]}


def _decode(d: dict) -> np.ndarray:
    return np.array(d["data"], dtype=np.float64).reshape(d["shape"])


def checkpoint_dict(params: DetectorParams, state: OptimizerState | None, epoch: int, extra=None) -> dict:
    opt = None
    if state is not None:
        opt = {
            "lr": state.lr, "decay": state.decay, "beta1": state.beta1, "beta2": state.beta2,
            "eps": state.eps, "step": state.step,
            "m": {k: _encode(a) for k, a in sorted(state.m.items())},
            "v": {k: _encode(a) for k, a in sorted(state.v.items())},
        }
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "epoch": epoch,
        "params": {k: _encode(a) for k, a in params.arrays().items()},
        "optimizer": opt,
        "extra": extra or {},
    }


def save_checkpoint(path, params: DetectorParams, state: OptimizerState | None, epoch: int, extra=None) -> None:
    """JSON checkpoint. Floats are written with shortest round-trip repr, so
    loading restores every value bit for bit."""
    Path(path).write_text(json.dumps(checkpoint_dict(params, state, epoch, extra), sort_keys=True))


def load_checkpoint(path) -> tuple[DetectorParams, OptimizerState | None, int, dict]:
    d = json.loads(Path(path).read_text())
    if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
        raise ContractError(f"{path}: unsupported checkpoint format")
    params = DetectorParams(*(_decode(d["params"][k]) for k in PARAM_NAMES))
    state = None
    if d["optimizer"] is not None:
        o = d["optimizer"]
        state = OptimizerState(
            lr=o["lr"], decay=o["decay"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"], step=o["step"],
            m={k: _decode(a) for k, a in o["m"].items()},
            v={k: _decode(a) for k, a in o["v"].items()},
        )
    return params, state, d["epoch"], d.get("extra", {})

