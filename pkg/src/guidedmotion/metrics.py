"""Forecast metrics: displacement errors, miss and overlap rates, simplified
average precision, endpoint NMS, and the boundary-crossing rate."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .geometry import polyline_segments, polylines_cross
from .scenario import BOUNDARY_KINDS, Scenario


@dataclass
class MetricReport:
    min_ade: float
    min_fde: float
    miss_rate: float
    overlap_rate: float
    cross_boundary_rate: float
    map_simplified: float
    soft_map_simplified: float
    num_targets: int

    def to_dict(self) -> dict:
        return asdict(self)


def nms_select(trajs, probs, n: int, radius: float = 2.5) -> list[int]:
    """Greedy endpoint suppression, backfilled in probability order.

    Repeatedly take the most probable unsuppressed mode and suppress every mode
    whose endpoint lies within ``radius`` of it (distance <= radius). If fewer
    than ``n`` picks survive, the rest are filled with the most probable
    unpicked modes. Probability ties go to the lower index.
    """
    trajs = np.asarray(trajs, dtype=float)
    probs = np.asarray(probs, dtype=float)
    k = len(probs)
    if not 1 <= n <= k:
        raise ValueError(f"need 1 <= n <= K, got n={n}, K={k}")
    order = np.lexsort((np.arange(k), -probs))
    ends = trajs[:, -1, :]
    suppressed = np.zeros(k, dtype=bool)
    picks: list[int] = []
    if radius > 0:
        for i in order:
            if len(picks) == n:
                break
            if suppressed[i]:
                continue
            picks.append(int(i))
            suppressed |= np.hypot(*(ends - ends[i]).T) <= radius
    else:
        picks = [int(i) for i in order[:n]]
    if len(picks) < n:
        chosen = set(picks)
        picks += [int(i) for i in order if i not in chosen][: n - len(picks)]
    return picks


def displacement_metrics(selected, gt, mask=None, miss_threshold: float = 2.0):
    """``(min_ade, min_fde, miss)`` of ``selected [n, T, 2]`` against ``gt [T, 2]``.

    Returns None when no ground-truth step is valid.
    """
    selected = np.asarray(selected, dtype=float)
    gt = np.asarray(gt, dtype=float)
    mask = np.ones(len(gt), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        return None
    err = np.hypot(*(selected[:, mask] - gt[mask]).transpose(2, 0, 1))
    ade = float(err.mean(axis=1).min())
    fde = float(err[:, -1].min())
    return ade, fde, bool(fde > miss_threshold)


def average_precision(hits) -> tuple[float, float]:
    """Simplified AP and soft AP of a hit list sorted by descending confidence.

    AP averages precision@r over the hit ranks; the soft variant is the
    reciprocal rank of the first hit, so hits after the first cost nothing.
    """
    hits = np.asarray(hits, dtype=bool)
    if not hits.any():
        return 0.0, 0.0
    ranks = np.flatnonzero(hits) + 1
    precision = np.arange(1, len(ranks) + 1) / ranks
    return float(precision.mean()), float(1.0 / ranks[0])


def boundary_segments(s: Scenario) -> np.ndarray:
    """All segments of uncrossable polylines, ``[S, 2, 2]`` (cached on the scenario)."""
    cached = s.__dict__.get("_boundary_segments")
    if cached is None:
        cached = polyline_segments([p.xy for p in s.polylines if p.kind in BOUNDARY_KINDS])
        s.__dict__["_boundary_segments"] = cached
    return cached


def crossing_flags(trajs, s: Scenario) -> np.ndarray:
    """Per-trajectory flag: does any step of it intersect a boundary segment? (world frame)"""
    return polylines_cross(np.asarray(trajs, dtype=float), boundary_segments(s))


def cross_boundary_rate(trajs, s: Scenario) -> float:
    flags = crossing_flags(trajs, s)
    return float(flags.mean()) if len(flags) else 0.0


def overlaps(traj, s: Scenario, target_id: str) -> bool:
    """Whether ``traj`` (world frame, future steps) comes within the half-width sum
    of any other agent's ground truth at the same step."""
    traj = np.asarray(traj, dtype=float)
    h = s.history_len + 1
    me = s.track(target_id)
    for track in s.tracks:
        if track.id == target_id:
            continue
        arr = track.array[h : h + len(traj)]
        valid = arr[:, 5] > 0.5
        if not valid.any():
            continue
        dist = np.hypot(*(traj[: len(arr)][valid] - arr[valid, :2]).T)
        if np.any(dist < 0.5 * (me.width + track.width)):
            return True
    return False


def target_ground_truth(s: Scenario, target_id: str) -> tuple[np.ndarray, np.ndarray]:
    arr = s.track(target_id).array[s.history_len + 1 :]
    return arr[:, :2], arr[:, 5] > 0.5


def constant_velocity(s: Scenario, target_id: str) -> np.ndarray:
    """Baseline forecast ``[T, 2]``: keep the current velocity."""
    arr = s.track(target_id).array
    cur = arr[s.history_len]
    steps = np.arange(1, s.future_len + 1)[:, None] * s.timestep
    return cur[None, :2] + steps * cur[None, 3:5]


def evaluate(predictions, scenarios, top_n: int = 6, nms_radius: float = 2.5,
             miss_threshold: float = 2.0) -> MetricReport:
    """Aggregate metrics over per-target predictions (see ``TargetPrediction``).

    Displacement, miss, overlap and AP use the ``top_n`` NMS picks; the
    boundary-crossing rate counts every one of the K predictions, pooled over
    targets.
    """
    by_id = {s.id: s for s in scenarios}
    ades, fdes, misses, overlap_flags, aps, soft_aps = [], [], [], [], [], []
    crossings = total = 0
    for pred in predictions:
        s = by_id[pred.scenario_id]
        trajs = np.asarray(pred.trajectories, dtype=float)
        probs = np.asarray(pred.probabilities, dtype=float)
        flags = crossing_flags(trajs, s)
        crossings += int(flags.sum())
        total += len(flags)
        gt, mask = target_ground_truth(s, pred.agent_id)
        picks = nms_select(trajs, probs, min(top_n, len(probs)), nms_radius)
        res = displacement_metrics(trajs[picks], gt, mask, miss_threshold)
        if res is None:
            continue
        ade, fde, miss = res
        ades.append(ade)
        fdes.append(fde)
        misses.append(miss)
        overlap_flags.append(overlaps(trajs[picks[0]], s, pred.agent_id))
        last = np.flatnonzero(mask)[-1]
        hit = [bool(math.hypot(*(trajs[i, last] - gt[last])) <= miss_threshold) for i in picks]
        ap, soft = average_precision(hit)
        aps.append(ap)
        soft_aps.append(soft)

    def mean(values):
        return float(np.mean(values)) if values else 0.0

    return MetricReport(
        min_ade=mean(ades),
        min_fde=mean(fdes),
        miss_rate=mean(misses),
        overlap_rate=mean(overlap_flags),
        cross_boundary_rate=crossings / total if total else 0.0,
        map_simplified=mean(aps),
        soft_map_simplified=mean(soft_aps),
        num_targets=len(ades),
    )
