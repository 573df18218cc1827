"""Flock state, MDP transition dynamics, and initial-state generators.

The flock is a set of B birds, each carrying a 2-D position and a 2-D
velocity.  One environment step applies a per-bird acceleration (the
controller's half of the joint action) and a per-bird displacement (the
attacker's half), updating the velocity first and then the position:

    v' = v + a   (speed capped at v_max, direction preserved)
    x' = x + v' + d

All operations are pure functions of their inputs plus an explicit RNG
handle; nothing here holds global mutable state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Relative slack on norm constraints so re-clamping an already clamped
# vector is a bitwise no-op (keeps clamping idempotent under rounding).
CLAMP_SLACK = 1e-9

DEFAULT_POSITION_BOX = ((0.0, 3.0), (0.0, 3.0))
DEFAULT_SPEED_RANGE = (0.5, 1.0)


def _as_bird_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{name} must have shape (B, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass(eq=False)
class FlockState:
    """Positions and velocities of B birds; the state of the flock MDP."""

    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        self.positions = _as_bird_array(self.positions, "positions")
        self.velocities = _as_bird_array(self.velocities, "velocities")
        if len(self.positions) != len(self.velocities):
            raise ValueError(
                f"positions ({len(self.positions)}) and velocities "
                f"({len(self.velocities)}) disagree on bird count"
            )
        if len(self.positions) == 0:
            raise ValueError("a flock needs at least one bird")

    @property
    def bird_count(self) -> int:
        return len(self.positions)

    def copy(self) -> "FlockState":
        return FlockState(self.positions.copy(), self.velocities.copy())

    def __eq__(self, other) -> bool:
        if not isinstance(other, FlockState):
            return NotImplemented
        return np.array_equal(self.positions, other.positions) and np.array_equal(
            self.velocities, other.velocities
        )


@dataclass(eq=False)
class ControlAction:
    """Per-bird 2-D accelerations; the controller's half of the joint action."""

    accelerations: np.ndarray

    def __post_init__(self):
        self.accelerations = _as_bird_array(self.accelerations, "accelerations")

    @classmethod
    def zero(cls, bird_count: int) -> "ControlAction":
        return cls(np.zeros((bird_count, 2)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ControlAction):
            return NotImplemented
        return np.array_equal(self.accelerations, other.accelerations)


@dataclass(eq=False)
class Disturbance:
    """Per-bird 2-D position displacements; the attacker's half of the action."""

    displacements: np.ndarray

    def __post_init__(self):
        self.displacements = _as_bird_array(self.displacements, "displacements")

    @classmethod
    def zero(cls, bird_count: int) -> "Disturbance":
        return cls(np.zeros((bird_count, 2)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Disturbance):
            return NotImplemented
        return np.array_equal(self.displacements, other.displacements)


@dataclass(frozen=True)
class DynamicsBounds:
    """Physical limits: speed cap v_max and acceleration fraction rho."""

    v_max: float = 2.0
    rho: float = 0.9

    def __post_init__(self):
        if not (math.isfinite(self.v_max) and self.v_max > 0):
            raise ValueError(f"v_max must be positive and finite, got {self.v_max}")
        if not (0.0 < self.rho < 1.0):
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")


@dataclass(frozen=True)
class VGeometry:
    """Construction parameters for a V-formation.

    The gap default places every trailing bird one wing span laterally and
    one upwash peak length longitudinally behind its predecessor, which is
    where the fitness module's upwash model peaks.
    """

    wing_span: float = 1.0
    wing_angle: float = math.pi / 4
    gap: float = math.sqrt(2.0)
    leader_velocity: tuple[float, float] = (1.0, 0.0)

    def __post_init__(self):
        if not (math.isfinite(self.wing_span) and self.wing_span > 0):
            raise ValueError("wing_span must be positive")
        if not (0.0 < self.wing_angle < math.pi / 2):
            raise ValueError("wing_angle must lie in (0, pi/2)")
        if not (math.isfinite(self.gap) and self.gap > 0):
            raise ValueError("gap must be positive")
        v = np.asarray(self.leader_velocity, dtype=float)
        if v.shape != (2,) or not np.all(np.isfinite(v)):
            raise ValueError("leader_velocity must be a finite 2-vector")


def rescale_to_limits(vectors: np.ndarray, limits) -> np.ndarray:
    """Rescale rows of ``vectors`` whose norm exceeds ``limits``.

    Direction-preserving; rows already within their limit are returned
    bit-for-bit unchanged.  ``limits`` broadcasts against the leading axes
    of ``vectors``.
    """
    vectors = np.asarray(vectors, dtype=float)
    limits = np.asarray(limits, dtype=float)
    norms = np.linalg.norm(vectors, axis=-1)
    over = norms > limits * (1.0 + CLAMP_SLACK)
    if not np.any(over):
        return vectors.copy()
    scale = np.ones(np.broadcast(norms, limits).shape)
    np.divide(np.broadcast_to(limits, scale.shape), norms, out=scale, where=over)
    return vectors * scale[..., None]


def clamp_acceleration_arrays(
    accelerations: np.ndarray, velocities: np.ndarray, rho: float
) -> np.ndarray:
    """Clamp each acceleration to magnitude rho * ||v|| of the matching bird.

    Batched: both arrays may carry arbitrary leading axes over the (B, 2)
    bird layout.
    """
    limits = rho * np.linalg.norm(velocities, axis=-1)
    return rescale_to_limits(accelerations, limits)


def step_arrays(
    positions: np.ndarray,
    velocities: np.ndarray,
    accelerations: np.ndarray,
    displacements: np.ndarray,
    v_max: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Apply one transition on raw arrays (batched over leading axes)."""
    new_vel = rescale_to_limits(velocities + accelerations, v_max)
    new_pos = positions + new_vel + displacements
    return new_pos, new_vel


def clamp_action(
    action: ControlAction, state: FlockState, bounds: DynamicsBounds
) -> ControlAction:
    """Enforce the per-bird acceleration bound ||a_i|| <= rho * ||v_i||."""
    if len(action.accelerations) != state.bird_count:
        raise ValueError(
            f"action is for {len(action.accelerations)} birds, "
            f"state has {state.bird_count}"
        )
    return ControlAction(
        clamp_acceleration_arrays(action.accelerations, state.velocities, bounds.rho)
    )


def step_flock(
    state: FlockState,
    action: ControlAction,
    disturbance: Disturbance,
    bounds: DynamicsBounds,
) -> FlockState:
    """Advance the flock one step under the joint (acceleration, displacement).

    The velocity update lands first, the speed is capped at v_max by
    direction-preserving rescale, and the new velocity moves the position
    within the same step.  Deterministic: equal inputs give equal outputs.
    """
    b = state.bird_count
    if len(action.accelerations) != b:
        raise ValueError(f"action is for {len(action.accelerations)} birds, state has {b}")
    if len(disturbance.displacements) != b:
        raise ValueError(
            f"disturbance is for {len(disturbance.displacements)} birds, state has {b}"
        )
    new_pos, new_vel = step_arrays(
        state.positions,
        state.velocities,
        action.accelerations,
        disturbance.displacements,
        bounds.v_max,
    )
    return FlockState(new_pos, new_vel)


def wing_lengths(bird_count: int) -> tuple[int, int]:
    """Bird counts of the two wings: floor((B-1)/2) first, ceil second."""
    first = (bird_count - 1) // 2
    return first, bird_count - 1 - first


def make_v_formation(bird_count: int, geom: VGeometry | None = None) -> FlockState:
    """Build a symmetric V: one leader plus two trailing wings.

    Bird order matches the conventional numbering where the leader sits in
    the middle of the index range: indices 0..len1-1 run down the first
    wing from its tip, index len1 is the leader, and len1+1..B-1 run out
    the second wing to its tip.  All birds share the leader velocity.
    """
    if bird_count < 1:
        raise ValueError(f"bird_count must be >= 1, got {bird_count}")
    geom = geom or VGeometry()
    lead_v = np.asarray(geom.leader_velocity, dtype=float)
    speed = np.linalg.norm(lead_v)
    heading = lead_v / speed if speed > 0 else np.array([1.0, 0.0])
    backward = -heading
    cos_a, sin_a = math.cos(geom.wing_angle), math.sin(geom.wing_angle)
    # Rotate the backward axis by +/- wing_angle to get the two wing rays.
    wing_one = np.array(
        [backward[0] * cos_a - backward[1] * sin_a, backward[0] * sin_a + backward[1] * cos_a]
    )
    wing_two = np.array(
        [backward[0] * cos_a + backward[1] * sin_a, -backward[0] * sin_a + backward[1] * cos_a]
    )
    len_one, len_two = wing_lengths(bird_count)
    positions = []
    for depth in range(len_one, 0, -1):
        positions.append(depth * geom.gap * wing_one)
    positions.append(np.zeros(2))
    for depth in range(1, len_two + 1):
        positions.append(depth * geom.gap * wing_two)
    velocities = np.tile(lead_v, (bird_count, 1))
    return FlockState(np.array(positions), velocities)


def sample_random_state(
    bird_count: int,
    position_box=DEFAULT_POSITION_BOX,
    speed_range=DEFAULT_SPEED_RANGE,
    rng: np.random.Generator | None = None,
) -> FlockState:
    """Draw a uniformly random flock state.

    Positions are i.i.d. uniform in the axis-aligned box; velocity
    directions are uniform on [0, 2*pi) with speeds uniform in
    ``speed_range``.
    """
    if bird_count < 1:
        raise ValueError(f"bird_count must be >= 1, got {bird_count}")
    (x_lo, x_hi), (y_lo, y_hi) = position_box
    if not (x_hi > x_lo and y_hi > y_lo):
        raise ValueError(f"position_box {position_box} is empty or degenerate")
    s_lo, s_hi = speed_range
    if s_hi < s_lo or s_lo < 0:
        raise ValueError(f"speed_range {speed_range} is empty or negative")
    rng = rng if rng is not None else np.random.default_rng()
    positions = rng.uniform((x_lo, y_lo), (x_hi, y_hi), size=(bird_count, 2))
    angles = rng.uniform(0.0, 2.0 * math.pi, size=bird_count)
    speeds = rng.uniform(s_lo, s_hi, size=bird_count)
    velocities = speeds[:, None] * np.column_stack([np.cos(angles), np.sin(angles)])
    return FlockState(positions, velocities)


def remove_birds(state: FlockState, indices) -> FlockState:
    """Delete the birds at the given 0-based indices, compacting the arrays.

    Remaining birds keep their positions, velocities, and relative order.
    """
    idx = sorted(set(int(i) for i in indices))
    if len(idx) != len(list(indices)):
        raise ValueError(f"indices {sorted(indices)} contain duplicates")
    for i in idx:
        if not (0 <= i < state.bird_count):
            raise ValueError(f"bird index {i} out of range for flock of {state.bird_count}")
    if len(idx) >= state.bird_count:
        raise ValueError("cannot remove every bird from the flock")
    keep = np.setdiff1d(np.arange(state.bird_count), idx)
    return FlockState(state.positions[keep], state.velocities[keep])
