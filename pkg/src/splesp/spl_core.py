"""Self-paced minimizer functions, a brute-force optimality oracle, and the
threshold schedules driving them.

Loss-based minimizers return the closed-form argmin over ``v in [0, 1]`` of
``v * l + g(v, lam)`` for the classical explicit regularizers. The
confidence-based minimizer has no explicit regularizer; it maps a predicted
object confidence straight to a weight.

All boundaries are strict: ``l < lam`` and ``conf > xi`` select the active
branch, ties fall to zero weight.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterDomainError

DEFAULT_ROOT_ORDER = 3
DEFAULT_ORACLE_GRID = 100_001  # step 1e-5 on [0, 1]


class RegularizerKind(enum.Enum):
    HARD = "hard"
    LINEAR = "linear"
    LOGARITHMIC = "logarithmic"
    CONFIDENCE_ROOT = "confidence_root"


LOSS_BASED_KINDS = (RegularizerKind.HARD, RegularizerKind.LINEAR, RegularizerKind.LOGARITHMIC)


class Direction(enum.Enum):
    DECREASING = "decreasing"  # confidence threshold, shrinks to 0
    INCREASING = "increasing"  # age parameter, grows to 1


@dataclass(frozen=True)
class ScheduleParams:
    start_value: float
    e1: float = 0.1
    e2: float = 0.9
    direction: Direction = Direction.DECREASING

    def __post_init__(self):
        if not (0.0 <= self.e1 < self.e2 <= 1.0):
            raise ParameterDomainError(f"need 0 <= e1 < e2 <= 1, got e1={self.e1}, e2={self.e2}")
        if not (0.0 < self.start_value < 1.0):
            raise ParameterDomainError(f"start value must lie in (0, 1), got {self.start_value}")


def xi_params(xi0: float = 0.8, e1: float = 0.1, e2: float = 0.9) -> ScheduleParams:
    return ScheduleParams(xi0, e1, e2, Direction.DECREASING)


def lambda_params(lambda0: float = 0.2, e1: float = 0.1, e2: float = 0.9) -> ScheduleParams:
    return ScheduleParams(lambda0, e1, e2, Direction.INCREASING)


def _check_lambda(kind: RegularizerKind, lam: float) -> None:
    if kind is RegularizerKind.LOGARITHMIC:
        if not (0.0 < lam < 1.0):
            raise ParameterDomainError(f"logarithmic regularizer needs lambda in (0, 1), got {lam}")
    elif kind in (RegularizerKind.HARD, RegularizerKind.LINEAR):
        if not lam > 0.0:
            raise ParameterDomainError(f"{kind.value} regularizer needs lambda > 0, got {lam}")
    else:
        raise ParameterDomainError(f"{kind.value} is not a loss-based regularizer")


def minimize_weight_loss_based(kind: RegularizerKind, sample_loss: float, lam: float) -> float:
    """Closed-form optimal weight for a loss-based explicit regularizer."""
    _check_lambda(kind, lam)
    if sample_loss < 0.0:
        raise ParameterDomainError(f"sample loss must be non-negative, got {sample_loss}")
    if kind is RegularizerKind.LOGARITHMIC and sample_loss >= 1.0:
        raise ParameterDomainError(f"logarithmic regularizer needs loss in [0, 1), got {sample_loss}")
    if not sample_loss < lam:
        return 0.0
    if kind is RegularizerKind.HARD:
        return 1.0
    if kind is RegularizerKind.LINEAR:
        return 1.0 - sample_loss / lam
    zeta = 1.0 - lam
    return math.log(sample_loss + zeta) / math.log(zeta)


def loss_based_weights(kind: RegularizerKind, losses, lam: float) -> np.ndarray:
    """Vectorized :func:`minimize_weight_loss_based` over an array of losses."""
    _check_lambda(kind, lam)
    losses = np.asarray(losses, dtype=float)
    if np.any(losses < 0.0):
        raise ParameterDomainError("sample losses must be non-negative")
    active = losses < lam
    if kind is RegularizerKind.HARD:
        return active.astype(float)
    if kind is RegularizerKind.LINEAR:
        return np.where(active, 1.0 - losses / lam, 0.0)
    if np.any(losses >= 1.0):
        raise ParameterDomainError("logarithmic regularizer needs losses in [0, 1)")
    zeta = 1.0 - lam
    return np.where(active, np.log(np.where(active, losses, 0.0) + zeta) / math.log(zeta), 0.0)


def minimize_weight_confidence_based(conf: float, xi: float, m: int = DEFAULT_ROOT_ORDER) -> float:
    """Weight from predicted object confidence: ``conf ** (1/m)`` above ``xi``, else 0."""
    if not (0.0 <= conf <= 1.0):
        raise ParameterDomainError(f"confidence must lie in [0, 1], got {conf}")
    if not (0.0 <= xi <= 1.0):
        raise ParameterDomainError(f"xi must lie in [0, 1], got {xi}")
    if int(m) != m or m < 1:
        raise ParameterDomainError(f"root order must be a positive integer, got {m}")
    return conf ** (1.0 / m) if conf > xi else 0.0


def confidence_weights(confs, xi: float, m: int = DEFAULT_ROOT_ORDER) -> np.ndarray:
    """Vectorized :func:`minimize_weight_confidence_based`."""
    confs = np.asarray(confs, dtype=float)
    if confs.size and (confs.min() < 0.0 or confs.max() > 1.0):
        raise ParameterDomainError("confidences must lie in [0, 1]")
    if int(m) != m or m < 1:
        raise ParameterDomainError(f"root order must be a positive integer, got {m}")
    return np.where(confs > xi, confs ** (1.0 / m), 0.0)


def regularizer_value(kind: RegularizerKind, v, lam: float):
    """Explicit regularizer ``g(v, lam)``; broadcasts over ``v``."""
    _check_lambda(kind, lam)
    v = np.asarray(v, dtype=float)
    if kind is RegularizerKind.HARD:
        return -lam * v
    if kind is RegularizerKind.LINEAR:
        return 0.5 * lam * (v * v - 2.0 * v)
    zeta = 1.0 - lam
    return zeta * v - zeta ** v / math.log(zeta)


def oracle_argmin_weight(
    kind: RegularizerKind, sample_loss: float, lam: float, grid_points: int = DEFAULT_ORACLE_GRID
) -> float:
    """Grid point minimizing ``v * l + g(v, lam)`` over a uniform grid on [0, 1].

    Exhaustive search, for validating the closed forms only. Ties resolve to
    the smallest ``v``.
    """
    if grid_points < 1000:
        raise ParameterDomainError(f"oracle grid needs at least 1000 points, got {grid_points}")
    grid = np.linspace(0.0, 1.0, grid_points)
    objective = grid * sample_loss + regularizer_value(kind, grid, lam)
    return float(grid[int(np.argmin(objective))])


def xi_schedule(params: ScheduleParams, ep: float) -> float:
    """Confidence threshold at training progress ``ep``: hold, linear decay, zero."""
    if params.direction is not Direction.DECREASING:
        raise ParameterDomainError("xi schedule needs a decreasing ScheduleParams")
    if not (0.0 <= ep <= 1.0):
        raise ParameterDomainError(f"training progress must lie in [0, 1], got {ep}")
    if ep < params.e1:
        return params.start_value
    if ep < params.e2:
        return params.start_value * ((params.e2 - ep) / (params.e2 - params.e1))
    return 0.0


def lambda_schedule(params: ScheduleParams, ep: float, literal: bool = False) -> float:
    """Age parameter at training progress ``ep``: hold, linear rise to 1, one.

    ``literal=True`` reproduces the printed middle branch
    ``(1 - l0) / (e2 - e1) * (e2 - ep) + 1``, which jumps to ``2 - l0`` at
    ``e1`` and then decreases. Kept only for auditing.
    """
    if params.direction is not Direction.INCREASING:
        raise ParameterDomainError("lambda schedule needs an increasing ScheduleParams")
    if not (0.0 <= ep <= 1.0):
        raise ParameterDomainError(f"training progress must lie in [0, 1], got {ep}")
    lam0, e1, e2 = params.start_value, params.e1, params.e2
    if ep < e1:
        return lam0
    if ep < e2:
        if literal:
            return (1.0 - lam0) / (e2 - e1) * (e2 - ep) + 1.0
        return lam0 + (1.0 - lam0) * (ep - e1) / (e2 - e1)
    return 1.0


# -- closed-form verification -------------------------------------------------

CLOSED_FORMS = {kind: (lambda l, lam, kind=kind: minimize_weight_loss_based(kind, l, lam)) for kind in LOSS_BASED_KINDS}


@dataclass
class MinimizerCheck:
    kind: RegularizerKind
    cases: int
    max_argmin_deviation: float
    max_objective_excess: float
    passed: bool


def default_verification_grid() -> tuple[np.ndarray, np.ndarray]:
    """Losses ``0.01..0.99`` and ages ``0.1..0.9``, rounded to the nearest double."""
    return np.round(np.arange(1, 100) * 0.01, 2), np.round(np.arange(1, 10) * 0.1, 1)


def verify_minimizers(
    closed_forms: dict | None = None,
    losses=None,
    lambdas=None,
    grid_points: int = DEFAULT_ORACLE_GRID,
    slack: float = 1e-9,
    tolerance: float = 2e-5,
) -> list[MinimizerCheck]:
    """Check closed-form weights against exhaustive search on a ``v`` grid.

    For every (loss, lambda) pair in the valid domain, the closed-form
    ``v*`` must satisfy ``v* l + g(v*) <= v l + g(v) + slack`` at every grid
    point and lie within ``tolerance`` of the grid argmin. ``closed_forms``
    maps a kind to ``f(loss, lam) -> v`` and defaults to the library's own.
    """
    forms = dict(CLOSED_FORMS)
    if closed_forms:
        forms.update(closed_forms)
    default_l, default_lam = default_verification_grid()
    losses = default_l if losses is None else np.asarray(losses, dtype=float)
    lambdas = default_lam if lambdas is None else np.asarray(lambdas, dtype=float)
    grid = np.linspace(0.0, 1.0, grid_points)
    out = []
    for kind in LOSS_BASED_KINDS:
        dev = excess = 0.0
        cases = 0
        for lam in lambdas:
            if kind is RegularizerKind.LOGARITHMIC and not 0.0 < lam < 1.0:
                continue
            ls = losses[losses < 1.0] if kind is RegularizerKind.LOGARITHMIC else losses
            reg = regularizer_value(kind, grid, lam)
            for l in ls:
                objective = grid * l + reg
                best = int(np.argmin(objective))
                v = float(forms[kind](float(l), float(lam)))
                at_v = v * l + float(regularizer_value(kind, v, lam))
                dev = max(dev, abs(v - grid[best]))
                excess = max(excess, at_v - float(objective[best]))
                cases += 1
        dev, excess = float(dev), float(excess)
        out.append(MinimizerCheck(kind, cases, dev, excess, bool(dev <= tolerance and excess <= slack)))
    return out
