"""Synthetic benchmark: seeded scenes, a linear anchor scorer, and the FL/SSFL comparison."""

from .experiment import ExperimentReport, run_experiment
from .model import ModelWeights, TrainConfig, assign_labels, predict, train
from .scenes import AnchorGrid, FeatureStore, SceneGenConfig, SyntheticScene, gen_dataset, gen_scene

__all__ = [
    "AnchorGrid", "ExperimentReport", "FeatureStore", "ModelWeights", "SceneGenConfig",
    "SyntheticScene", "TrainConfig", "assign_labels", "gen_dataset", "gen_scene", "predict",
    "run_experiment", "train",
]
