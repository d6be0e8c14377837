"""Padding a list of per-target inputs into one batch of torch tensors."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
import torch

from .vectorize import ModelInputs

DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class Batch:
    agents: torch.Tensor  # [B, A, H, 8]
    agent_mask: torch.Tensor  # [B, A, H]
    agent_valid: torch.Tensor  # [B, A]
    map: torch.Tensor  # [B, L, P, 7]
    map_mask: torch.Tensor  # [B, L]
    relative: torch.Tensor  # [B, L, H, 4]
    agent_positions: torch.Tensor  # [B, A, 2]
    polyline_centers: torch.Tensor  # [B, L, 2]
    intention_points: torch.Tensor  # [B, K, 2]
    target_speed: torch.Tensor  # [B]
    future: torch.Tensor  # [B, A, F, 4]
    future_mask: torch.Tensor  # [B, A, F]

    def __len__(self) -> int:
        return self.agents.shape[0]

    def select(self, index) -> "Batch":
        return Batch(**{f.name: getattr(self, f.name)[index] for f in fields(self)})


def _pad(arrays, length: int, axis: int = 0):
    out = []
    for a in arrays:
        pad = [(0, 0)] * a.ndim
        pad[axis] = (0, length - a.shape[axis])
        out.append(np.pad(a, pad))
    return np.stack(out)


def collate(inputs: list[ModelInputs], intention_points, dtype="float64") -> Batch:
    """Stack per-target inputs, zero-padding agents and polylines to the batch maximum.

    ``intention_points`` holds one ``[K, 2]`` agent-frame array per input.
    """
    if not inputs:
        raise ValueError("cannot collate an empty list of inputs")
    if len(intention_points) != len(inputs):
        raise ValueError(
            f"got {len(intention_points)} intention point sets for {len(inputs)} inputs"
        )
    dt = DTYPES[dtype] if isinstance(dtype, str) else dtype
    A = max(x.agents.shape[0] for x in inputs)
    L = max(x.map.shape[0] for x in inputs)

    def t(a, boolean=False):
        return torch.as_tensor(np.asarray(a), dtype=torch.bool if boolean else dt)

    agent_mask = _pad([x.agent_mask for x in inputs], A)
    return Batch(
        agents=t(_pad([x.agents for x in inputs], A)),
        agent_mask=t(agent_mask, True),
        agent_valid=t(agent_mask.any(axis=-1), True),
        map=t(_pad([x.map for x in inputs], L)),
        map_mask=t(_pad([x.map_mask for x in inputs], L), True),
        relative=t(_pad([x.relative for x in inputs], L)),
        agent_positions=t(_pad([x.agent_positions for x in inputs], A)),
        polyline_centers=t(_pad([x.polyline_centers for x in inputs], L)),
        intention_points=t(np.stack([np.asarray(p, dtype=float) for p in intention_points])),
        target_speed=t([x.target_speed for x in inputs]),
        future=t(_pad([x.future for x in inputs], A)),
        future_mask=t(_pad([x.future_mask for x in inputs], A), True),
    )
