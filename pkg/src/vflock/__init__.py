"""V-formation flocking games: adaptive-horizon MPC controller, three
attacker games, and a statistical-model-checking harness for estimating the
controller's win probability."""

from .flock import (
    ControlAction,
    Disturbance,
    DynamicsBounds,
    FlockState,
    VGeometry,
    clamp_action,
    make_v_formation,
    remove_birds,
    sample_random_state,
    step_flock,
)
from .fitness import (
    FitnessBreakdown,
    FitnessParams,
    clear_view,
    fitness,
    is_v_formation,
    upwash_benefit,
    velocity_matching,
)

__version__ = "0.1.0"

__all__ = [
    "ControlAction",
    "Disturbance",
    "DynamicsBounds",
    "FlockState",
    "VGeometry",
    "clamp_action",
    "make_v_formation",
    "remove_birds",
    "sample_random_state",
    "step_flock",
    "FitnessBreakdown",
    "FitnessParams",
    "clear_view",
    "fitness",
    "is_v_formation",
    "upwash_benefit",
    "velocity_matching",
    "__version__",
]
