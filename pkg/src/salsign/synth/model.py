"""Linear-logit anchor scorer trained by full-batch gradient descent.

score(anchor) = logistic(w . [appearance, x_norm, y_norm] + b)

The classification objective is the mean focal (or salience-sensitive focal)
loss over every anchor of every training scene. The global gradient is
clipped to a maximum L2 norm and the learning rate decays at fixed epoch
milestones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ConfigError, DivergedLoss, NoPositives
from ..geometry import iou_matrix
from ..losses import FocalParams, LossMode, SalienceParams, salience_weights, weighted_focal
from ..matching import HIT_IOU, MAX_DETS, Detection, cap_detections
from .scenes import AnchorGrid, SyntheticScene


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 10.0
    epochs: int = 200
    grad_clip_norm: float = 5.0
    lr_decay_factor: float = 0.5
    lr_milestones: tuple[int, ...] = (100, 150)
    seed: int = 0
    loss_mode: LossMode = LossMode.SSFL
    focal: FocalParams = field(default_factory=FocalParams)
    salience: SalienceParams = field(default_factory=SalienceParams)

    def __post_init__(self):
        object.__setattr__(self, "loss_mode", LossMode(self.loss_mode))
        object.__setattr__(self, "lr_milestones", tuple(int(m) for m in self.lr_milestones))
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ConfigError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not (math.isfinite(self.grad_clip_norm) and self.grad_clip_norm > 0):
            raise ConfigError("grad_clip_norm must be > 0")
        if not (0 < self.lr_decay_factor <= 1):
            raise ConfigError("lr_decay_factor must lie in (0, 1]")
        if self.seed < 0:
            raise ConfigError("seed must be unsigned")

    def lr_at(self, epoch: int) -> float:
        lr = self.learning_rate
        for m in self.lr_milestones:
            if epoch >= m:
                lr *= self.lr_decay_factor
        return lr


@dataclass
class ModelWeights:
    weights: np.ndarray  # (appearance_dim + 2,)
    bias: float = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if not (np.all(np.isfinite(self.weights)) and math.isfinite(self.bias)):
            raise ValueError("model weights must be finite")

    @classmethod
    def zeros(cls, appearance_dim: int) -> "ModelWeights":
        return cls(np.zeros(appearance_dim + 2), 0.0)

    def to_dict(self) -> dict:
        return {"bias": float(self.bias), "weights": [float(v) for v in self.weights]}

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelWeights":
        return cls(np.array(raw["weights"], dtype=np.float64), float(raw["bias"]))


@dataclass
class TrainResult:
    model: ModelWeights
    loss_trace: list[float]
    grad_norms: list[float]  # post-clip global norm, one per epoch


def logistic(z):
    z = np.asarray(z, dtype=np.float64)
    # exp(-z) overflows to inf for z << 0, giving the correct limit 0
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


def design_matrix(features: np.ndarray, grid: AnchorGrid) -> np.ndarray:
    """Appearance columns followed by normalised anchor-centre x and y."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.shape[0] != len(grid):
        raise ConfigError(f"feature table has {feats.shape[0]} rows, grid has {len(grid)} anchors")
    return np.hstack([feats, grid.positions()])


def assign_labels(grid: AnchorGrid, gts: Sequence, sp: SalienceParams = SalienceParams(),
                  iou_threshold: float = HIT_IOU) -> tuple[np.ndarray, np.ndarray]:
    """(positive mask, salience weight) for every anchor."""
    anchors = grid.boxes
    if not gts:
        return np.zeros(len(anchors), dtype=bool), np.full(len(anchors), sp.background_weight)
    ious = iou_matrix(anchors, np.array([g.box.to_list() for g in gts]))
    positive = ious.max(axis=1) >= iou_threshold
    return positive, salience_weights(anchors, gts, sp)


@dataclass
class TrainingSet:
    """Stacked design matrix and labels over all anchors of all scenes.

    ``xt`` is stored transposed (columns are anchors) for fast mat-vecs.
    """

    xt: np.ndarray
    positive: np.ndarray
    salience: np.ndarray

    def __post_init__(self):
        self.xt = np.ascontiguousarray(self.xt, dtype=np.float64)
        self.positive = np.asarray(self.positive, dtype=bool)
        self.salience = np.asarray(self.salience, dtype=np.float64)
        self.pos_idx = np.flatnonzero(self.positive)

    def __len__(self):
        return self.xt.shape[1]

    @classmethod
    def build(cls, scenes: Sequence[SyntheticScene], grid: AnchorGrid,
              sp: SalienceParams = SalienceParams()) -> "TrainingSet":
        xs, pos, sal = [], [], []
        for scene in scenes:
            xs.append(design_matrix(scene.features, grid).T)
            p, s = assign_labels(grid, scene.record.annotations, sp)
            pos.append(p)
            sal.append(s)
        return cls(np.hstack(xs), np.concatenate(pos), np.concatenate(sal))


def loss_and_grad(theta: np.ndarray, ts: TrainingSet, tc: TrainConfig) -> tuple[float, np.ndarray]:
    """Mean loss and its gradient w.r.t. ``theta = [weights..., bias]``."""
    z = theta[:-1] @ ts.xt + theta[-1]
    p = logistic(z)
    q = 1.0 - p
    pt = q.copy()
    pt[ts.pos_idx] = p[ts.pos_idx]
    w = ts.salience if tc.loss_mode is LossMode.SSFL else np.ones_like(pt)
    losses, dl_dpt = weighted_focal(pt, w, tc.focal)
    n = len(pt)
    loss = float(np.sum(losses) / n)
    # d p_t / d z is p(1-p) for positives, -p(1-p) for negatives
    dpt_dz = -(p * q)
    dpt_dz[ts.pos_idx] = -dpt_dz[ts.pos_idx]
    if pt.min() <= tc.focal.clamp_eps:
        dpt_dz[pt <= tc.focal.clamp_eps] = 0.0
    gz = dl_dpt * dpt_dz / n
    grad = np.empty_like(theta)
    grad[:-1] = ts.xt @ gz
    grad[-1] = np.sum(gz)
    return loss, grad


def clip_by_norm(grad: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.sqrt(np.sum(grad * grad)))
    if norm > max_norm:
        grad = grad * (max_norm / norm)
    return grad


def train(scenes: Sequence[SyntheticScene] | TrainingSet, grid: AnchorGrid, tc: TrainConfig) -> TrainResult:
    ts = scenes if isinstance(scenes, TrainingSet) else TrainingSet.build(scenes, grid, tc.salience)
    if not np.any(ts.positive):
        raise NoPositives("training set has no positive anchors")
    theta = np.zeros(ts.xt.shape[0] + 1)
    trace, norms = [], []
    for epoch in range(tc.epochs):
        loss, grad = loss_and_grad(theta, ts, tc)
        if not math.isfinite(loss):
            raise DivergedLoss(epoch, loss)
        grad = clip_by_norm(grad, tc.grad_clip_norm)
        trace.append(loss)
        norms.append(float(np.sqrt(np.sum(grad * grad))))
        theta = theta - tc.lr_at(epoch) * grad
        if not np.all(np.isfinite(theta)):
            raise DivergedLoss(epoch, float("nan"))
    return TrainResult(ModelWeights(theta[:-1].copy(), float(theta[-1])), trace, norms)


def score_anchors(model: ModelWeights, scene: SyntheticScene, grid: AnchorGrid) -> np.ndarray:
    return logistic(design_matrix(scene.features, grid) @ model.weights + model.bias)


def predict(model: ModelWeights, scene: SyntheticScene, grid: AnchorGrid,
            max_dets: int = MAX_DETS) -> list[Detection]:
    scores = score_anchors(model, scene, grid)
    # only the top max_dets can survive the cap; stable order keeps ties by anchor index
    order = np.argsort(-scores, kind="stable")[:max_dets]
    dets = [Detection(scene.image_id, grid.box(int(i)), float(scores[i])) for i in order]
    return cap_detections(dets, max_dets)
