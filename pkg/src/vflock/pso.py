"""Particle-swarm minimizer used as the inner optimizer of the controller.

Classic global-best PSO: particles carry a position and velocity in the
search box, are pulled toward their personal best and the swarm best with
uniformly random per-component gains, and the incumbent best value never
increases.  Non-finite objective values are treated as +inf so a wild
candidate can never poison the swarm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PsoParams:
    """Swarm size, stopping rule, and the three velocity-update gains."""

    particle_count: int = 40
    max_iterations: int = 60
    stall_iterations: int = 15
    inertia: float = 0.7
    self_adjustment: float = 1.49
    social_adjustment: float = 1.49
    value_tolerance: float = 1e-6

    def __post_init__(self):
        if self.particle_count < 2:
            raise ValueError(f"particle_count must be >= 2, got {self.particle_count}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.stall_iterations < 1:
            raise ValueError(f"stall_iterations must be >= 1, got {self.stall_iterations}")
        for name in ("inertia", "self_adjustment", "social_adjustment"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not (math.isfinite(self.value_tolerance) and self.value_tolerance > 0):
            raise ValueError("value_tolerance must be positive and finite")


@dataclass
class Particle:
    """One swarm member: current point, velocity, and personal best."""

    position: np.ndarray
    velocity: np.ndarray
    best_position: np.ndarray
    best_value: float


@dataclass(frozen=True)
class PsoResult:
    position: np.ndarray
    value: float
    evaluations: int


def _velocity_update(
    positions: np.ndarray,
    velocities: np.ndarray,
    best_positions: np.ndarray,
    global_best: np.ndarray,
    u_self: np.ndarray,
    u_social: np.ndarray,
    params: PsoParams,
) -> np.ndarray:
    """The swarm velocity rule: inertia plus the two random attraction pulls."""
    return (
        params.inertia * velocities
        + params.self_adjustment * u_self * (best_positions - positions)
        + params.social_adjustment * u_social * (global_best - positions)
    )


def _as_bounds(bounds, dimension: int) -> np.ndarray:
    arr = np.asarray(bounds, dtype=float)
    if arr.shape == (2,):
        arr = np.tile(arr, (dimension, 1))
    if arr.shape != (dimension, 2):
        raise ValueError(f"bounds must have shape ({dimension}, 2) or (2,), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("bounds must be finite")
    if np.any(arr[:, 1] < arr[:, 0]):
        raise ValueError("each bound must satisfy low <= high")
    return arr


def update_particle(
    particle: Particle,
    global_best: np.ndarray,
    bounds,
    objective,
    params: PsoParams,
    rng: np.random.Generator,
) -> Particle:
    """Advance a single particle one iteration.

    Draws the self pull u1 and then the social pull u2 component-wise
    uniform on (0, 1), applies the velocity rule, moves the particle, clips
    it into the box, and replaces the personal best only on strict
    improvement.
    """
    dim = len(particle.position)
    box = _as_bounds(bounds, dim)
    u_self = rng.uniform(size=dim)
    u_social = rng.uniform(size=dim)
    velocity = _velocity_update(
        particle.position,
        particle.velocity,
        particle.best_position,
        np.asarray(global_best, dtype=float),
        u_self,
        u_social,
        params,
    )
    position = np.clip(particle.position + velocity, box[:, 0], box[:, 1])
    value = float(objective(position))
    if not math.isfinite(value):
        value = math.inf
    if value < particle.best_value:
        return Particle(position, velocity, position.copy(), value)
    return Particle(position, velocity, particle.best_position, particle.best_value)


def pso_minimize(
    objective,
    dimension: int,
    bounds,
    params: PsoParams,
    rng: np.random.Generator,
    batch: bool = False,
) -> PsoResult:
    """Minimize ``objective`` over a box with a global-best particle swarm.

    The swarm starts uniformly random in the box with velocities uniform in
    [-range, range] per dimension, and stops at ``max_iterations`` or after
    ``stall_iterations`` consecutive iterations without the global best
    improving by ``value_tolerance``.  With ``batch=True`` the objective is
    called once per iteration with the full (particle_count, dimension)
    matrix and must return a vector of values, which is how the controller
    scores hundreds of candidate action sequences per call.  The reported
    best never exceeds the best value of the initial swarm, and ties keep
    the first particle encountered.
    """
    if dimension < 1:
        raise ValueError(f"dimension must be >= 1, got {dimension}")
    box = _as_bounds(bounds, dimension)
    low, high = box[:, 0], box[:, 1]
    span = high - low
    p = params.particle_count

    def evaluate(points: np.ndarray) -> np.ndarray:
        if batch:
            values = np.asarray(objective(points), dtype=float).reshape(len(points))
        else:
            values = np.array([float(objective(row)) for row in points])
        return np.where(np.isfinite(values), values, np.inf)

    positions = rng.uniform(low, high, size=(p, dimension))
    velocities = rng.uniform(-span, span, size=(p, dimension))
    values = evaluate(positions)
    evaluations = p

    best_positions = positions.copy()
    best_values = values.copy()
    leader = int(np.argmin(best_values))
    global_best = best_positions[leader].copy()
    global_value = float(best_values[leader])

    stall = 0
    for _ in range(params.max_iterations):
        u_self = rng.uniform(size=(p, dimension))
        u_social = rng.uniform(size=(p, dimension))
        velocities = _velocity_update(
            positions, velocities, best_positions, global_best, u_self, u_social, params
        )
        positions = np.clip(positions + velocities, low, high)
        values = evaluate(positions)
        evaluations += p

        improved = values < best_values
        best_positions[improved] = positions[improved]
        best_values[improved] = values[improved]
        candidate = int(np.argmin(best_values))
        if best_values[candidate] < global_value:
            gain = global_value - float(best_values[candidate])
            global_best = best_positions[candidate].copy()
            global_value = float(best_values[candidate])
            stall = 0 if gain > params.value_tolerance else stall + 1
        else:
            stall += 1
        if stall >= params.stall_iterations:
            break

    return PsoResult(position=global_best, value=global_value, evaluations=evaluations)
