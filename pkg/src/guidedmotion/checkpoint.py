"""Text checkpoints: a JSON object mapping parameter names to shape and values."""

from __future__ import annotations

import json
from pathlib import Path

import torch

from .batch import DTYPES
from .config import RunConfig, version_string
from .decoder import build_model


class CheckpointError(ValueError):
    pass


def state_to_json(model) -> dict:
    params = {}
    for name, tensor in model.state_dict().items():
        t = tensor.detach().to(torch.float64)
        params[name] = {"shape": list(t.shape), "values": t.flatten().tolist()}
    return params


def save_checkpoint(path, model, cfg: RunConfig, extra: dict | None = None) -> None:
    payload = {
        "version": version_string(),
        "run_config": cfg.to_dict(),
        "parameters": state_to_json(model),
    }
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n")


def load_checkpoint(path):
    """Rebuild the model stored at ``path``; returns ``(model, RunConfig)``."""
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc})") from None
    for key in ("run_config", "parameters"):
        if key not in payload:
            raise CheckpointError(f"{path}: missing '{key}'")
    cfg = RunConfig.from_dict(payload["run_config"])
    model = build_model(cfg)
    expected = model.state_dict()
    stored = payload["parameters"]
    if set(stored) != set(expected):
        missing = sorted(set(expected) - set(stored))
        unexpected = sorted(set(stored) - set(expected))
        raise CheckpointError(f"{path}: parameter names differ (missing {missing}, unexpected {unexpected})")
    dtype = DTYPES[cfg.dtype]
    state = {}
    for name, ref in expected.items():
        entry = stored[name]
        if list(entry["shape"]) != list(ref.shape):
            raise CheckpointError(f"{path}: {name} has shape {entry['shape']}, expected {list(ref.shape)}")
        state[name] = torch.tensor(entry["values"], dtype=torch.float64).reshape(ref.shape).to(dtype)
    model.load_state_dict(state)
    model.eval()
    return model, cfg
