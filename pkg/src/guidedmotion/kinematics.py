"""Clamped-control Euler rollout of (acceleration, yaw rate) commands and its inverse.

The rollout is written against the array namespace of its inputs, so the same
code path serves numpy (data generation, metrics) and torch (the decoder's
control head, where gradients flow through the clamp and the cumulative sums).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class KinematicLimits:
    a_min: float = -10.0
    a_max: float = 10.0
    yaw_min: float = -1.5
    yaw_max: float = 1.5
    dt: float = 0.1

    def __post_init__(self):
        if not self.a_min < self.a_max:
            raise ValueError(f"a_min ({self.a_min}) must be below a_max ({self.a_max})")
        if not self.yaw_min < self.yaw_max:
            raise ValueError(f"yaw_min ({self.yaw_min}) must be below yaw_max ({self.yaw_max})")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")


@dataclass(frozen=True)
class KinematicState:
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    speed: float = 0.0


@dataclass(frozen=True)
class ControlSequence:
    accel: np.ndarray
    yaw_rate: np.ndarray

    def __post_init__(self):
        accel = np.asarray(self.accel, dtype=float)
        yaw = np.asarray(self.yaw_rate, dtype=float)
        if accel.shape != yaw.shape or accel.ndim != 1:
            raise ValueError(
                f"accel and yaw_rate must be equal-length 1-D, got {accel.shape} and {yaw.shape}"
            )
        if not (np.isfinite(accel).all() and np.isfinite(yaw).all()):
            raise ValueError("control sequence contains non-finite values")
        object.__setattr__(self, "accel", accel)
        object.__setattr__(self, "yaw_rate", yaw)

    def __len__(self) -> int:
        return len(self.accel)

    def clamped(self, lim: KinematicLimits) -> "ControlSequence":
        return ControlSequence(
            np.clip(self.accel, lim.a_min, lim.a_max),
            np.clip(self.yaw_rate, lim.yaw_min, lim.yaw_max),
        )


def _xp(arr):
    if type(arr).__module__.startswith("torch"):
        import torch

        return torch
    return np


def integrate_states(accel, yaw_rate, x0, y0, heading0, speed0, lim: KinematicLimits):
    """Full state sequence ``(x, y, heading, speed)``, each ``[..., T]``.

    ``accel`` and ``yaw_rate`` have shape ``[..., T]``; the initial state
    components broadcast against ``[...]``. Works for numpy arrays and torch
    tensors alike.
    """
    xp = _xp(accel)
    dt = lim.dt
    a = xp.clip(accel, lim.a_min, lim.a_max)
    w = xp.clip(yaw_rate, lim.yaw_min, lim.yaw_max)
    speed = speed0[..., None] + xp.cumsum(a * dt, -1)
    heading = heading0[..., None] + xp.cumsum(w * dt, -1)
    x = x0[..., None] + xp.cumsum(speed * xp.cos(heading) * dt, -1)
    y = y0[..., None] + xp.cumsum(speed * xp.sin(heading) * dt, -1)
    return x, y, heading, speed


def integrate(accel, yaw_rate, x0, y0, heading0, speed0, lim: KinematicLimits):
    """Batched rollout returning positions ``[..., T, 2]``."""
    x, y, _, _ = integrate_states(accel, yaw_rate, x0, y0, heading0, speed0, lim)
    return _xp(accel).stack([x, y], -1)


def rollout(init: KinematicState, ctrl: ControlSequence, lim: KinematicLimits) -> np.ndarray:
    """Roll a control sequence forward; returns the ``[T, 2]`` positions for t = 1..T."""
    scalar = lambda v: np.asarray(v, dtype=float)  # noqa: E731
    return integrate(
        ctrl.accel,
        ctrl.yaw_rate,
        scalar(init.x),
        scalar(init.y),
        scalar(init.heading),
        scalar(init.speed),
        lim,
    )


def fit_controls(
    init: KinematicState, traj, lim: KinematicLimits
) -> tuple[ControlSequence, float]:
    """Greedy per-step inversion of :func:`rollout`.

    Speeds and headings are read off consecutive displacements, differenced
    into controls and clamped to ``lim``. The residual is the largest position
    error of the re-rolled trajectory, so a value above zero flags a target the
    limits cannot reach. Reversing motion is not recoverable: speeds come back
    non-negative.
    """
    traj = np.asarray(traj, dtype=float).reshape(-1, 2)
    dt = lim.dt
    prev = np.vstack([[init.x, init.y], traj])
    delta = np.diff(prev, axis=0)
    dist = np.hypot(delta[:, 0], delta[:, 1])

    speeds = dist / dt
    headings = np.empty(len(traj))
    last = init.heading
    for t in range(len(traj)):
        if dist[t] > 1e-12:
            raw = np.arctan2(delta[t, 1], delta[t, 0])
            # unwrap relative to the previous heading
            last = last + (np.pi - np.mod(np.pi - (raw - last), 2 * np.pi))
        headings[t] = last

    accel = np.diff(np.concatenate([[init.speed], speeds])) / dt
    yaw_rate = np.diff(np.concatenate([[init.heading], headings])) / dt
    ctrl = ControlSequence(accel, yaw_rate).clamped(lim)
    replay = rollout(init, ctrl, lim)
    residual = float(np.max(np.hypot(*(replay - traj).T))) if len(traj) else 0.0
    return ctrl, residual
