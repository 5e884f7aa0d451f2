"""Two-node system model and its multirate simulation."""

from .feedforward import FeedforwardSpec, apply_feedforward
from .model import LOOP_IDS, LoopConfig, MidpointModel, NodeModel, SystemModel, build_system
from .simulate import SimOutput, UnlockEvent, UnlockWarning, simulate, slip_count, step_schedule

__all__ = [
    "FeedforwardSpec", "apply_feedforward", "LOOP_IDS", "LoopConfig", "MidpointModel", "NodeModel",
    "SystemModel", "build_system", "SimOutput", "UnlockEvent", "UnlockWarning", "simulate", "slip_count",
    "step_schedule",
]
