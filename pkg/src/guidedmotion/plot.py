"""Static SVG rendering of a scene with predicted modes."""

from __future__ import annotations

import numpy as np

from .metrics import target_ground_truth
from .scenario import Scenario

MAX_MODES = 64


def _fmt(v: float) -> str:
    text = f"{v:.2f}"
    return "0.00" if text == "-0.00" else text


def _path(points, to_px) -> str:
    return " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in (to_px(p) for p in points))


def _prob_color(p: float) -> str:
    """Low probability pale blue, high probability saturated orange."""
    p = float(np.clip(p, 0.0, 1.0))
    lo, hi = np.array([158, 202, 225]), np.array([230, 85, 13])
    r, g, b = np.rint(lo + p * (hi - lo)).astype(int)
    return f"#{r:02x}{g:02x}{b:02x}"


def render_svg(s: Scenario, predictions=(), size: int = 800, margin: float = 5.0) -> str:
    """Map polylines (boundaries red), up to 64 modes per target colored by
    relative probability, and each target's ground-truth future dashed."""
    layers = [np.asarray(p.xy, dtype=float) for p in s.polylines]
    mode_sets = []
    for pred in predictions:
        trajs = np.asarray(pred.trajectories, dtype=float)
        probs = np.asarray(pred.probabilities, dtype=float)
        order = np.lexsort((np.arange(len(probs)), -probs))[:MAX_MODES]
        mode_sets.append((trajs[order], probs[order]))
    gts = []
    for agent in s.targets:
        gt, mask = target_ground_truth(s, agent)
        gts.append(gt[mask])

    pts = [a for a in layers if len(a)] + [t.reshape(-1, 2) for t, _ in mode_sets] + [g for g in gts if len(g)]
    allp = np.concatenate(pts) if pts else np.zeros((1, 2))
    lo, hi = allp.min(axis=0) - margin, allp.max(axis=0) + margin
    scale = size / max(float((hi - lo).max()), 1e-6)
    height = int(np.ceil((hi[1] - lo[1]) * scale))
    width = int(np.ceil((hi[0] - lo[0]) * scale))

    def to_px(p):
        # flip y so north is up
        return (p[0] - lo[0]) * scale, (hi[1] - p[1]) * scale

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>']
    for poly, arr in zip(s.polylines, layers):
        if len(arr) < 2:
            continue
        color, w = ("#d62728", 2.0) if poly.is_boundary else ("#bbbbbb", 1.0)
        out.append(f'<polyline points="{_path(arr, to_px)}" fill="none" stroke="{color}" '
                   f'stroke-width="{w}"/>')
    for trajs, probs in mode_sets:
        top = probs.max() if len(probs) and probs.max() > 0 else 1.0
        # draw the most probable last so it sits on top
        for traj, p in list(zip(trajs, probs))[::-1]:
            out.append(f'<polyline points="{_path(traj, to_px)}" fill="none" '
                       f'stroke="{_prob_color(p / top)}" stroke-width="1.5" opacity="0.9"/>')
    for gt in gts:
        if len(gt) >= 2:
            out.append(f'<polyline points="{_path(gt, to_px)}" fill="none" stroke="black" '
                       f'stroke-width="2" stroke-dasharray="6,4"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
