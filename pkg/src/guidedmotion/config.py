"""Run configuration: architecture, loss weights, ablation switches and training knobs."""

from __future__ import annotations

import dataclasses
import json
import subprocess
from dataclasses import dataclass, fields
from pathlib import Path

from .kinematics import KinematicLimits

from ._version import __version__ as _BASE_VERSION


class ConfigSchemaError(ValueError):
    """A config file or override does not match the RunConfig schema."""


@dataclass
class RunConfig:
    # architecture
    d1: int = 64
    d: int = 128
    heads: int = 4
    k: int = 64
    knn_k: int = 16
    num_dynamic_polylines: int = 32
    num_mcg_layers: int = 2
    num_local_attn_layers: int = 4
    num_decoder_layers: int = 6
    # inputs
    history_len: int = 10
    future_len: int = 30
    map_points_per_polyline: int = 20
    max_polylines: int = 128
    # intention points
    d_max: float = 85.0
    max_lanes: int = 256
    grid_extent: float = 40.0
    # kinematic limits
    a_min: float = -10.0
    a_max: float = 10.0
    yaw_min: float = -1.5
    yaw_max: float = 1.5
    dt: float = 0.1
    # loss weights
    lambda_dense: float = 1.0
    lambda_gmm: float = 1.0
    lambda_cls: float = 1.0
    lambda_control: float = 1.0
    lambda_guidance: float = 0.1
    guidance_stop_control_grad: bool = False
    # ablations
    use_scene_compliant_points: bool = True
    use_control_guidance: bool = True
    use_msg: bool = True
    # training
    seed: int = 0
    epochs: int = 50
    batch_size: int = 20
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    optimizer: str = "gd"
    dtype: str = "float64"
    # evaluation
    nms_radius: float = 2.5
    miss_threshold: float = 2.0
    top_n: int = 6

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            kind = f.type if isinstance(f.type, str) else f.type.__name__
            if kind == "bool":
                ok = isinstance(value, bool)
            elif kind == "int":
                ok = isinstance(value, int) and not isinstance(value, bool)
            elif kind == "float":
                ok = isinstance(value, (int, float)) and not isinstance(value, bool)
                if ok:
                    object.__setattr__(self, f.name, float(value))
            else:
                ok = isinstance(value, str)
            if not ok:
                raise ConfigSchemaError(f"{f.name}: expected {kind}, got {value!r}")
        positive = (
            "d1", "d", "heads", "k", "knn_k", "num_dynamic_polylines", "num_local_attn_layers",
            "num_decoder_layers", "history_len", "future_len", "max_polylines", "max_lanes",
            "epochs", "batch_size", "top_n",
        )
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigSchemaError(f"{name}: must be >= 1, got {getattr(self, name)}")
        if self.map_points_per_polyline < 2:
            raise ConfigSchemaError("map_points_per_polyline: must be >= 2")
        if self.num_mcg_layers < 0:
            raise ConfigSchemaError("num_mcg_layers: must be >= 0")
        for name in ("d1", "d"):
            if getattr(self, name) % self.heads:
                raise ConfigSchemaError(f"{name}: must be divisible by heads ({self.heads})")
            if getattr(self, name) % 4:
                raise ConfigSchemaError(f"{name}: must be divisible by 4 for positional encoding")
        if self.num_dynamic_polylines > self.max_polylines:
            raise ConfigSchemaError("num_dynamic_polylines: must not exceed max_polylines")
        for name in ("lambda_dense", "lambda_gmm", "lambda_cls", "lambda_control", "lambda_guidance",
                     "weight_decay", "nms_radius"):
            if getattr(self, name) < 0:
                raise ConfigSchemaError(f"{name}: must be >= 0")
        if not self.learning_rate > 0:
            raise ConfigSchemaError("learning_rate: must be positive")
        if not self.d_max > 0 or not self.grid_extent > 0 or not self.miss_threshold > 0:
            raise ConfigSchemaError("d_max, grid_extent and miss_threshold must be positive")
        if self.optimizer not in ("gd", "adamw"):
            raise ConfigSchemaError(f"optimizer: expected 'gd' or 'adamw', got {self.optimizer!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigSchemaError(f"dtype: expected 'float32' or 'float64', got {self.dtype!r}")
        try:
            self.limits
        except ValueError as exc:
            raise ConfigSchemaError(f"kinematic limits: {exc}") from None

    @property
    def limits(self) -> KinematicLimits:
        return KinematicLimits(self.a_min, self.a_max, self.yaw_min, self.yaw_max, self.dt)

    @property
    def loss_weights(self) -> tuple[float, float, float, float, float]:
        """Effective weights; switching control guidance off zeroes the last two."""
        if self.use_control_guidance:
            control, guidance = self.lambda_control, self.lambda_guidance
        else:
            control = guidance = 0.0
        return (self.lambda_dense, self.lambda_gmm, self.lambda_cls, control, guidance)

    # sklearn-style parameter access, so estimators can address config__<name>
    def get_params(self, deep: bool = True) -> dict:
        return dataclasses.asdict(self)

    def set_params(self, **params) -> "RunConfig":
        """Update in place (validated as a whole first), as sklearn's nested set_params expects."""
        updated = self.replace(**params)
        for name in params:
            setattr(self, name, getattr(updated, name))
        return self

    def replace(self, **changes) -> "RunConfig":
        unknown = set(changes) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigSchemaError(f"unknown config keys: {sorted(unknown)}")
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigSchemaError(f"config must be a JSON object, got {type(data).__name__}")
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigSchemaError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigSchemaError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigSchemaError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data)


def version_string() -> str:
    """``<package version>`` plus ``git describe`` output when inside a checkout."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--tags"],
            capture_output=True, text=True, timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
        described = out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        described = ""
    return f"{_BASE_VERSION}+{described}" if described else _BASE_VERSION
