"""Multimodal trajectory prediction with map-compliant anchors and control guidance."""

from ._version import __version__
from .config import ConfigSchemaError, RunConfig
from .kinematics import ControlSequence, KinematicLimits, KinematicState, fit_controls, rollout
from .scenario import Scenario, load_scenario, save_scenario

__all__ = [
    "__version__",
    "ConfigSchemaError",
    "ControlSequence",
    "KinematicLimits",
    "KinematicState",
    "RunConfig",
    "Scenario",
    "fit_controls",
    "load_scenario",
    "rollout",
    "save_scenario",
]
