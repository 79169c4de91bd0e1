"""Run configuration: one YAML file, validated up front, with dotted overrides."""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticError

from .errors import ConfigError, ParseError
from .evaluation import DEFAULT_THRESHOLDS
from .losses import FocalParams, LossMode, SalienceParams
from .synth.model import TrainConfig
from .synth.scenes import AnchorGrid, SceneGenConfig


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SceneSection(_Section):
    width: int = 128
    height: int = 96
    corridor: tuple[float, float, float, float] = (80.0, 0.0, 128.0, 96.0)
    signs_min: int = 2
    signs_max: int = 6
    salient_fraction: float = 0.5
    size_min: float = 16.0
    size_max: float = 24.0
    appearance_dim: int = 8
    appearance_noise_sigma: float = 0.7
    clutter_rate: float = 3.0
    clutter_strength: float = 1.0
    prototype_scale: float = 4.0


class GridSection(_Section):
    stride: int = 4
    sizes: tuple[int, ...] = (16, 20, 24)


class TrainSection(_Section):
    learning_rate: float = 10.0
    epochs: int = 200
    grad_clip_norm: float = 5.0
    lr_decay_factor: float = 0.5
    lr_milestones: tuple[int, ...] = (100, 150)
    loss_mode: Literal["FL", "SSFL"] = "SSFL"


class FocalSection(_Section):
    alpha_fl: float = 0.25
    gamma: float = 2.0
    clamp_eps: float = 1e-7


class SalienceSection(_Section):
    alpha_ss: float = 4.0


class EvalSection(_Section):
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    iou_threshold: float = 0.5
    max_dets: int = 100


class GenSection(_Section):
    n_scenes: int = 500
    start: int = 0


class ExperimentSection(_Section):
    n_train: int = 500
    n_test: int = 100
    baseline_mode: Literal["FL", "SSFL"] = "FL"
    treatment_mode: Literal["FL", "SSFL"] = "SSFL"


class PathsSection(_Section):
    dataset: Optional[str] = None
    features: Optional[str] = None
    weights: Optional[str] = None
    detections: Optional[str] = None


class RunConfig(_Section):
    seed: int = Field(0, ge=0)
    scene: SceneSection = SceneSection()
    grid: GridSection = GridSection()
    train: TrainSection = TrainSection()
    focal: FocalSection = FocalSection()
    salience: SalienceSection = SalienceSection()
    eval: EvalSection = EvalSection()
    gen: GenSection = GenSection()
    experiment: ExperimentSection = ExperimentSection()
    paths: PathsSection = PathsSection()

    # --- conversion into the modules' own (invariant-checked) types ---

    def scene_config(self) -> SceneGenConfig:
        return SceneGenConfig(seed=self.seed, **self.scene.model_dump())

    def anchor_grid(self) -> AnchorGrid:
        return AnchorGrid(self.scene.width, self.scene.height, self.grid.stride, self.grid.sizes)

    def focal_params(self) -> FocalParams:
        return FocalParams(**self.focal.model_dump())

    def salience_params(self) -> SalienceParams:
        return SalienceParams(alpha_ss=self.salience.alpha_ss)

    def train_config(self, loss_mode: str | None = None) -> TrainConfig:
        fields = self.train.model_dump()
        if loss_mode is not None:
            fields["loss_mode"] = loss_mode
        fields["loss_mode"] = LossMode(fields["loss_mode"])
        return TrainConfig(seed=self.seed, focal=self.focal_params(),
                           salience=self.salience_params(), **fields)

    def check(self) -> "RunConfig":
        """Build every module-level object once so bad values fail before any work."""
        try:
            self.scene_config()
            self.anchor_grid()
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        ts = self.eval.thresholds
        if any(not (0.0 <= t <= 1.0) for t in ts) or any(b <= a for a, b in zip(ts, ts[1:])):
            raise ConfigError("eval.thresholds must be strictly ascending values in [0, 1]")
        if not (0.0 < self.eval.iou_threshold <= 1.0):
            raise ConfigError("eval.iou_threshold must lie in (0, 1]")
        if self.eval.max_dets < 1 or self.gen.n_scenes < 1 or self.gen.start < 0:
            raise ConfigError("max_dets and n_scenes must be >= 1, start >= 0")
        if self.experiment.n_train < 1 or self.experiment.n_test < 1:
            raise ConfigError("experiment.n_train and n_test must be >= 1")
        return self

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=True, default_flow_style=None)


def _parse_scalar(text: str):
    return yaml.safe_load(text)


def apply_override(raw: dict, assignment: str) -> dict:
    """Apply one ``section.key=value`` override (value parsed as YAML)."""
    if "=" not in assignment:
        raise ConfigError(f"override must look like key=value, got {assignment!r}")
    key, value = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = raw
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override inside non-mapping key {key!r}")
    node[parts[-1]] = _parse_scalar(value)
    return raw


def load_config(path=None, overrides=(), seed: int | None = None) -> RunConfig:
    raw: dict = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ParseError(f"{path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    for item in overrides:
        apply_override(raw, item)
    if seed is not None:
        raw["seed"] = seed
    try:
        cfg = RunConfig.model_validate(raw)
    except PydanticError as exc:
        raise ConfigError(_summarize(exc)) from None
    return cfg.check()


def _summarize(exc: PydanticError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        lines.append(f"{loc}: {err['msg']}")
    return "invalid config: " + "; ".join(lines)
