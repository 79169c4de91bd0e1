"""Focal loss, salience-sensitive focal loss and their derivatives.

focal(p_t) = -alpha_fl * (1 - p_t)**gamma * log(p_t)

The salience-sensitive variant multiplies that by alpha_ss when the
ground-truth sign nearest to the candidate box is salient, else by 1.
"Nearest" is centre-to-centre Euclidean distance with ties going to the
lexicographically smallest annotation id; an image without annotations
gives weight 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import DomainError, EmptyBatch
from .geometry import Box, centers

CLAMP_EPS = 1e-7


class LossMode(str, Enum):
    FL = "FL"
    SSFL = "SSFL"


@dataclass(frozen=True)
class FocalParams:
    alpha_fl: float = 0.25
    gamma: float = 2.0
    clamp_eps: float = CLAMP_EPS

    def __post_init__(self):
        if not (math.isfinite(self.alpha_fl) and self.alpha_fl > 0):
            raise ValueError(f"alpha_fl must be finite and > 0, got {self.alpha_fl!r}")
        if not (math.isfinite(self.gamma) and self.gamma >= 0):
            raise ValueError(f"gamma must be finite and >= 0, got {self.gamma!r}")
        if not (0 < self.clamp_eps < 1):
            raise ValueError(f"clamp_eps must lie in (0, 1), got {self.clamp_eps!r}")


@dataclass(frozen=True)
class SalienceParams:
    alpha_ss: float = 4.0
    background_weight: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.alpha_ss) and self.alpha_ss >= 1):
            raise ValueError(f"alpha_ss must be finite and >= 1, got {self.alpha_ss!r}")
        if self.background_weight != 1.0:
            raise ValueError("background_weight is fixed at 1")


def _as_prob(p, eps: float) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError("probability must be finite")
    if np.any(arr > 1.0):
        raise DomainError("probability must not exceed 1")
    return np.maximum(arr, eps)


def _out(arr: np.ndarray, like):
    return float(arr) if np.ndim(like) == 0 else arr


def focal_loss(p, fp: FocalParams = FocalParams()):
    """Focal loss of the ground-truth-class probability; scalar or array."""
    pt = _as_prob(p, fp.clamp_eps)
    loss = -fp.alpha_fl * (1.0 - pt) ** fp.gamma * np.log(pt)
    if not np.all(np.isfinite(loss)):
        raise DomainError("non-finite focal loss")
    # -0.0 at p_t = 1
    return _out(loss + 0.0, p)


def focal_loss_grad(p, fp: FocalParams = FocalParams()):
    """d focal_loss / d p_t (derivative taken at the clamped value)."""
    pt = _as_prob(p, fp.clamp_eps)
    one_minus = 1.0 - pt
    if fp.gamma == 0:
        focus_term = np.zeros_like(pt)
    else:
        interior = pt < 1.0
        # (1-p)^(gamma-1) * log p -> 0 as p -> 1 for any gamma > 0
        safe = np.where(interior, one_minus, 1.0)
        focus_term = np.where(
            interior, fp.alpha_fl * fp.gamma * safe ** (fp.gamma - 1.0) * np.log(pt), 0.0
        )
    grad = focus_term - fp.alpha_fl * one_minus ** fp.gamma / pt
    if not np.all(np.isfinite(grad)):
        raise DomainError("non-finite focal loss gradient")
    return _out(grad, p)


def _sq_center_dist(a: Box, b: Box) -> float:
    (ax, ay), (bx, by) = a.center, b.center
    return (ax - bx) * (ax - bx) + (ay - by) * (ay - by)


def nearest_annotation(d: Box, gts: Sequence):
    """Annotation whose box centre is closest to ``d``'s centre, or None."""
    best = None
    best_key = None
    for g in gts:
        key = (_sq_center_dist(d, g.box), g.id)
        if best_key is None or key < best_key:
            best, best_key = g, key
    return best


def salience_weight(d: Box, gts: Sequence, sp: SalienceParams = SalienceParams()) -> float:
    nearest = nearest_annotation(d, gts)
    if nearest is None:
        return sp.background_weight
    return sp.alpha_ss if nearest.salient else 1.0


def salience_weights(boxes: np.ndarray, gts: Sequence, sp: SalienceParams = SalienceParams()) -> np.ndarray:
    """Vectorised :func:`salience_weight` over an (N, 4) box array."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if not gts:
        return np.full(len(boxes), sp.background_weight)
    ordered = sorted(gts, key=lambda g: g.id)
    gt_c = centers(np.array([g.box.to_list() for g in ordered]))
    c = centers(boxes)
    dx = c[:, None, 0] - gt_c[None, :, 0]
    dy = c[:, None, 1] - gt_c[None, :, 1]
    nearest = np.argmin(dx * dx + dy * dy, axis=1)
    salient = np.array([g.salient for g in ordered], dtype=bool)
    return np.where(salient[nearest], sp.alpha_ss, 1.0)


def ssfl(p, d: Box, gts: Sequence, fp: FocalParams = FocalParams(), sp: SalienceParams = SalienceParams()) -> float:
    return salience_weight(d, gts, sp) * focal_loss(p, fp)


def weighted_focal(pt: np.ndarray, weights: np.ndarray, fp: FocalParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-candidate weighted losses and their d/dp_t, for array inputs.

    Same formulas as :func:`focal_loss` / :func:`focal_loss_grad`, sharing
    the log and power terms between the two.
    """
    pt = _as_prob(pt, fp.clamp_eps)
    one_minus = 1.0 - pt
    log_pt = np.log(pt)
    focus = one_minus ** fp.gamma
    loss = -fp.alpha_fl * focus * log_pt
    grad = -fp.alpha_fl * focus / pt
    if fp.gamma != 0:
        if pt.max() < 1.0:
            grad = grad + fp.alpha_fl * fp.gamma * one_minus ** (fp.gamma - 1.0) * log_pt
        else:
            grad = np.asarray(focal_loss_grad(pt, fp))
    if not (np.isfinite(loss.sum()) and np.isfinite(grad.sum())):
        raise DomainError("non-finite focal loss or gradient")
    return weights * loss, weights * grad


def batch_loss(
    candidates: Sequence[tuple[float, Box]],
    gts: Sequence,
    fp: FocalParams = FocalParams(),
    sp: SalienceParams = SalienceParams(),
    mode: LossMode | str = LossMode.SSFL,
) -> tuple[float, list[float]]:
    """Mean loss over candidates and each candidate's gradient w.r.t. its p_t."""
    mode = LossMode(mode)
    n = len(candidates)
    if n == 0:
        raise EmptyBatch("batch_loss needs at least one candidate")
    total = 0.0
    grads = []
    for p, box in candidates:
        w = salience_weight(box, gts, sp) if mode is LossMode.SSFL else 1.0
        total += w * focal_loss(p, fp)
        grads.append(w * focal_loss_grad(p, fp) / n)
    return total / n, grads
