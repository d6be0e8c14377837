"""Scikit-learn style front end: ``MotionPredictor().fit(scenarios).predict(scenarios)``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .batch import Batch, collate
from .config import RunConfig
from .decoder import build_model
from .geometry import from_frame
from .intentions import generate_intention_points, grid_intention_points
from .metrics import MetricReport, evaluate
from .scenario import Scenario
from .training import train
from .validation import check_scenarios
from .vectorize import ModelInputs, build_inputs


@dataclass
class TargetPrediction:
    """Final-layer forecast for one target, in world coordinates."""

    scenario_id: str
    agent_id: str
    probabilities: np.ndarray  # [K]
    trajectories: np.ndarray  # [K, T, 2] GMM centers
    control_trajectories: np.ndarray  # [K, T, 2]
    gmm: np.ndarray  # [K, T, 5] in the target frame
    controls: np.ndarray  # [K, T, 2]
    intention_points: np.ndarray  # [K, 2]
    origin: tuple[float, float, float]

    def as_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "agent_id": self.agent_id,
            "origin": list(self.origin),
            "mode_probs": self.probabilities.tolist(),
            "gmm_trajectories": self.trajectories.tolist(),
            "control_trajectories": self.control_trajectories.tolist(),
            "gmm": self.gmm.tolist(),
            "controls": self.controls.tolist(),
            "intention_points": self.intention_points.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TargetPrediction":
        try:
            return cls(
                scenario_id=d["scenario_id"],
                agent_id=d["agent_id"],
                probabilities=np.asarray(d["mode_probs"], dtype=float),
                trajectories=np.asarray(d["gmm_trajectories"], dtype=float),
                control_trajectories=np.asarray(d["control_trajectories"], dtype=float),
                gmm=np.asarray(d["gmm"], dtype=float),
                controls=np.asarray(d["controls"], dtype=float),
                intention_points=np.asarray(d["intention_points"], dtype=float),
                origin=tuple(float(v) for v in d["origin"]),
            )
        except KeyError as exc:
            raise ValueError(f"prediction record is missing {exc.args[0]!r}") from None


def intention_points_for(s: Scenario, agent_id: str, cfg: RunConfig) -> np.ndarray:
    """Agent-frame anchors: lane-graph points, or the fixed grid when that ablation is on."""
    if cfg.use_scene_compliant_points:
        return generate_intention_points(s, agent_id, cfg.k, cfg.d_max, cfg.max_lanes).points
    return grid_intention_points(cfg.k, cfg.grid_extent)


def prepare(scenarios, cfg: RunConfig) -> tuple[list[ModelInputs], Batch]:
    """Vectorize every target of every scenario and collate into one padded batch."""
    inputs, points = [], []
    for s in scenarios:
        if s.history_len != cfg.history_len or s.future_len != cfg.future_len:
            raise ValueError(
                f"scenario {s.id!r} has history/future {s.history_len}/{s.future_len}, "
                f"config expects {cfg.history_len}/{cfg.future_len}"
            )
        if abs(s.timestep - cfg.dt) > 1e-9:
            raise ValueError(f"scenario {s.id!r} timestep {s.timestep} differs from config dt {cfg.dt}")
        for agent_id in s.targets:
            inputs.append(build_inputs(s, agent_id, cfg.map_points_per_polyline, cfg.max_polylines))
            points.append(intention_points_for(s, agent_id, cfg))
    return inputs, collate(inputs, points, cfg.dtype)


class MotionPredictor(BaseEstimator):
    """Multimodal trajectory forecaster.

    Parameters
    ----------
    config : RunConfig, optional
        Architecture, loss weights, ablation switches and training settings.
        Defaults to ``RunConfig()``.
    random_state : int, optional
        Overrides ``config.seed`` for weight initialization and batch order.
    """

    def __init__(self, config=None, random_state=None):
        self.config = config
        self.random_state = random_state

    def _effective_config(self) -> RunConfig:
        cfg = self.config if self.config is not None else RunConfig()
        if not isinstance(cfg, RunConfig):
            raise TypeError(f"config must be a RunConfig, got {type(cfg).__name__}")
        if self.random_state is not None:
            cfg = cfg.replace(seed=int(self.random_state))
        return cfg

    @classmethod
    def from_model(cls, model, cfg: RunConfig) -> "MotionPredictor":
        """Wrap an already trained model (e.g. from a checkpoint)."""
        est = cls(config=cfg)
        est.config_ = cfg
        est.model_ = model
        return est

    def fit(self, X, y=None, callback=None):
        """Train on the targets of scenarios ``X``; ground truth comes from their future steps."""
        scenarios = check_scenarios(X)
        cfg = self._effective_config()
        _, data = prepare(scenarios, cfg)
        self.config_ = cfg
        self.model_ = build_model(cfg)
        self.curve_ = train(self.model_, data, cfg, callback=callback)
        self.n_targets_ = len(data)
        return self

    def _forward(self, data: Batch):
        cfg = self.config_
        outs = []
        with torch.no_grad():
            for start in range(0, len(data), cfg.batch_size):
                index = torch.arange(start, min(start + cfg.batch_size, len(data)))
                outs.append(self.model_(data.select(index)))
        return outs

    def predict(self, X, inputs_hook=None) -> list[TargetPrediction]:
        """Final-layer predictions for every target of ``X``, in world coordinates.

        ``inputs_hook``, when given, maps the list of :class:`ModelInputs` to a
        new list before collation (used for input perturbation studies).
        """
        check_is_fitted(self, "model_")
        scenarios = check_scenarios(X)
        cfg = self.config_
        inputs, data = prepare(scenarios, cfg)
        if inputs_hook is not None:
            inputs = inputs_hook(inputs)
            points = [p.numpy() for p in data.intention_points]
            data = collate(inputs, points, cfg.dtype)
        preds = []
        row = 0
        for out in self._forward(data):
            final = out.final
            for b in range(final.mode_probs.shape[0]):
                x = inputs[row]
                pose = x.origin
                gmm = final.gmm[b].double().numpy()
                ctrl_traj = final.traj_control[b].double().numpy()
                preds.append(
                    TargetPrediction(
                        scenario_id=x.scenario_id,
                        agent_id=x.target_id,
                        probabilities=final.mode_probs[b].double().numpy(),
                        trajectories=from_frame(gmm[..., :2], pose[:2], pose[2]),
                        control_trajectories=from_frame(ctrl_traj, pose[:2], pose[2]),
                        gmm=gmm,
                        controls=final.controls[b].double().numpy(),
                        intention_points=from_frame(
                            data.intention_points[row].double().numpy(), pose[:2], pose[2]
                        ),
                        origin=pose,
                    )
                )
                row += 1
        return preds

    def evaluate(self, X, predictions=None) -> MetricReport:
        scenarios = check_scenarios(X)
        preds = predictions if predictions is not None else self.predict(scenarios)
        cfg = self.config_
        return evaluate(preds, scenarios, cfg.top_n, cfg.nms_radius, cfg.miss_threshold)

    def score(self, X, y=None) -> float:
        """Negative minADE over the NMS picks (higher is better)."""
        return -self.evaluate(X).min_ade
