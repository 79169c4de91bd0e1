"""Two-arm comparison: the same detector trained with FL and with SSFL."""

from __future__ import annotations

from dataclasses import dataclass, replace

from ..dataset import group_annotations
from ..errors import ConfigError
from ..evaluation import DEFAULT_THRESHOLDS, PRCurve, auc, pr_sweep
from ..losses import LossMode
from ..matching import MAX_DETS
from .model import TrainConfig, TrainingSet, predict, train
from .scenes import AnchorGrid, SceneGenConfig, gen_dataset, scenes_from


@dataclass
class ExperimentReport:
    curve_fl: PRCurve
    curve_ssfl: PRCurve
    loss_trace_fl: list[float]
    loss_trace_ssfl: list[float]

    @property
    def auc_salient_fl(self) -> float:
        return auc(self.curve_fl, "salient")

    @property
    def auc_salient_ssfl(self) -> float:
        return auc(self.curve_ssfl, "salient")

    @property
    def auc_delta(self) -> float:
        """SSFL minus FL salient-recall AUC."""
        return self.auc_salient_ssfl - self.auc_salient_fl

    def to_dict(self) -> dict:
        fl, ss = self.curve_fl, self.curve_ssfl
        thresholds = sorted({p.threshold for p in fl.points} | {p.threshold for p in ss.points})
        fl_m = {p.threshold: p.margin for p in fl.points}
        ss_m = {p.threshold: p.margin for p in ss.points}
        return {
            "auc_all": {"fl": auc(fl, "all"), "ssfl": auc(ss, "all")},
            "auc_salient": {"fl": self.auc_salient_fl, "ssfl": self.auc_salient_ssfl},
            "auc_salient_delta": self.auc_delta,
            "mean_margin": {"fl": fl.mean_margin(), "ssfl": ss.mean_margin()},
            "margin_series": [
                {"threshold": t, "fl": fl_m.get(t), "ssfl": ss_m.get(t)} for t in thresholds
            ],
            "final_loss": {"fl": self.loss_trace_fl[-1], "ssfl": self.loss_trace_ssfl[-1]},
        }


def _check_arms(a: TrainConfig, b: TrainConfig) -> None:
    if replace(a, loss_mode=b.loss_mode, salience=b.salience) != b:
        raise ConfigError("the two arms may differ only in loss_mode and salience parameters")


def run_experiment(
    gen_cfg: SceneGenConfig,
    grid: AnchorGrid,
    train_cfg_fl: TrainConfig,
    train_cfg_ssfl: TrainConfig,
    n_train: int,
    n_test: int,
    thresholds=DEFAULT_THRESHOLDS,
    max_dets: int = MAX_DETS,
) -> ExperimentReport:
    """Generate train/test worlds, train both arms, sweep both on the test set.

    Test scenes use indices after the training ones, so the sets never share
    an image.
    """
    _check_arms(train_cfg_fl, train_cfg_ssfl)
    train_ds, train_feats = gen_dataset(gen_cfg, n_train, grid)
    test_ds, test_feats = gen_dataset(gen_cfg, n_test, grid, start=n_train)
    train_scenes = scenes_from(train_ds, train_feats)
    test_scenes = scenes_from(test_ds, test_feats)
    gts = group_annotations(test_ds)

    curves, traces = [], []
    sets: dict = {}
    for tc in (train_cfg_fl, train_cfg_ssfl):
        if tc.salience not in sets:
            sets[tc.salience] = TrainingSet.build(train_scenes, grid, tc.salience)
        ts = sets[tc.salience]
        result = train(ts, grid, tc)
        dets = {s.image_id: predict(result.model, s, grid, max_dets) for s in test_scenes}
        meta = {"dataset": f"synth-seed{gen_cfg.seed}", "loss_mode": tc.loss_mode.value,
                "model": f"linear-{tc.loss_mode.value.lower()}"}
        curves.append(pr_sweep(dets, gts, thresholds, max_dets=max_dets, metadata=meta))
        traces.append(result.loss_trace)
    return ExperimentReport(curves[0], curves[1], traces[0], traces[1])


def default_arms(base: TrainConfig) -> tuple[TrainConfig, TrainConfig]:
    return replace(base, loss_mode=LossMode.FL), replace(base, loss_mode=LossMode.SSFL)
