"""Reproducible train-and-evaluate runs: the 2x2 ablation grid and the guidance-weight sweep."""

from __future__ import annotations

import json
import logging
from importlib import resources

from .config import RunConfig
from .estimator import MotionPredictor
from .metrics import constant_velocity, displacement_metrics, target_ground_truth
from .worlds import generate_dataset

log = logging.getLogger(__name__)

# (use_scene_compliant_points, use_control_guidance) per table row
GRID = (
    ("full", True, True),
    ("no_guidance", True, False),
    ("no_points", False, True),
    ("no_points_no_guidance", False, False),
)
TABLE_COLUMNS = ("soft_map_simplified", "min_ade", "min_fde", "miss_rate", "cross_boundary_rate")


def toy_config(**overrides) -> RunConfig:
    """Desk-scale settings bundled with the package (``toy.json``)."""
    data = json.loads(resources.files(__package__).joinpath("toy.json").read_text())
    data.update(overrides)
    return RunConfig.from_dict(data)


def toy_datasets(train_count=200, test_count=50, template="fourway", seed=0):
    """Seeded training scenes and a disjoint held-out set."""
    train = generate_dataset(template, train_count, seed=seed)
    test = generate_dataset(template, test_count, seed=seed + 10_000)
    return train, test


def train_and_evaluate(cfg: RunConfig, train, test) -> dict:
    est = MotionPredictor(cfg).fit(train)
    report = est.evaluate(test)
    return {"run_config": cfg.to_dict(), "curve": est.curve_, "report": report.to_dict()}


def constant_velocity_min_ade(scenarios) -> float:
    values = []
    for s in scenarios:
        for agent in s.targets:
            gt, mask = target_ground_truth(s, agent)
            res = displacement_metrics(constant_velocity(s, agent)[None], gt, mask)
            if res is not None:
                values.append(res[0])
    return sum(values) / len(values) if values else 0.0


def ablation_grid(cfg: RunConfig, train, test, runner=train_and_evaluate) -> list[dict]:
    """Train all four {scene-compliant points} x {control guidance} variants."""
    rows = []
    for name, points, guidance in GRID:
        variant = cfg.replace(use_scene_compliant_points=points, use_control_guidance=guidance)
        log.info("ablation variant %s", name)
        result = runner(variant, train, test)
        rows.append({"variant": name, "scene_compliant_points": points, "control_guidance": guidance,
                     **{c: result["report"][c] for c in TABLE_COLUMNS}})
    return rows


def guidance_sweep(cfg: RunConfig, weights, train, test, runner=train_and_evaluate) -> list[dict]:
    """Full model trained once per guidance weight."""
    rows = []
    for w in weights:
        variant = cfg.replace(lambda_guidance=float(w), use_scene_compliant_points=True,
                              use_control_guidance=True)
        log.info("guidance weight %s", w)
        result = runner(variant, train, test)
        rows.append({"variant": f"lambda_guidance={float(w)}", "lambda_guidance": float(w),
                     **{c: result["report"][c] for c in TABLE_COLUMNS}})
    return rows
