"""Input checks shared by the estimators and metric functions."""

from __future__ import annotations

from collections.abc import Iterable

import numpy as np
from sklearn.utils import check_array

from .scenario import Scenario


def check_scenarios(X) -> list[Scenario]:
    """Accept one scenario or an iterable of them; always return a non-empty list."""
    if isinstance(X, Scenario):
        return [X]
    if not isinstance(X, Iterable) or isinstance(X, (str, bytes)):
        raise TypeError(f"expected a Scenario or an iterable of Scenarios, got {type(X).__name__}")
    scenarios = list(X)
    if not scenarios:
        raise ValueError("expected at least one scenario")
    for i, s in enumerate(scenarios):
        if not isinstance(s, Scenario):
            raise TypeError(f"item {i} is {type(s).__name__}, not Scenario")
    return scenarios


def check_trajectories(trajs, name: str = "trajs", ndim: int = 3) -> np.ndarray:
    """Finite float array of shape ``[..., T, 2]`` with ``ndim`` dimensions."""
    arr = check_array(trajs, ensure_2d=False, allow_nd=True, dtype=np.float64,
                      input_name=name, ensure_min_samples=1)
    if arr.ndim != ndim or arr.shape[-1] != 2:
        raise ValueError(f"{name} must have shape {'[K, ' if ndim == 3 else '['}T, 2], got {arr.shape}")
    return arr


def check_mask(mask, length: int, name: str = "mask") -> np.ndarray:
    if mask is None:
        return np.ones(length, dtype=bool)
    m = np.asarray(mask, dtype=bool)
    if m.shape != (length,):
        raise ValueError(f"{name} must have shape ({length},), got {m.shape}")
    return m
