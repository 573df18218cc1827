"""Adaptive-horizon MPC: level thresholds, horizon growth, swarm-backed
action selection.

Each call plans over a growing lookahead horizon: a particle swarm searches
the space of h-step action sequences for the one whose best intermediate
state improves the fitness level by at least the current threshold.  If no
horizon up to the maximum clears the threshold, the best sequence found at
the maximum horizon is used anyway.  Only the first action of the winning
sequence is ever applied; the level bookkeeping is then advanced from the
fitness of the state that actually materializes, which in a game includes
the adversary's simultaneous move.

The same machinery drives both players: the controller minimizes fitness
and predicts with zero disturbances, while an advanced attacker maximizes
fitness, predicts with zero accelerations, and has its displacements capped
in magnitude and count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .fitness import FitnessParams, fitness_batch
from .flock import DynamicsBounds, FlockState, clamp_acceleration_arrays, rescale_to_limits
from .pso import PsoParams, pso_minimize

MODE_MINIMIZE = "minimize"
MODE_MAXIMIZE = "maximize"

THRESHOLD_RULES = ("algorithm1", "prose")


class LevelBudgetExhausted(Exception):
    """Raised when a new threshold is requested past the level budget."""


@dataclass(frozen=True)
class LevelState:
    """Bookkeeping of the level descent: current level, threshold, indices."""

    level_value: float
    threshold: float
    level_index: int
    horizon: int = 1
    steps_used: int = 0

    def __post_init__(self):
        if self.level_value < 0 or not math.isfinite(self.level_value):
            raise ValueError(f"level_value must be finite and >= 0, got {self.level_value}")
        if self.threshold < 0 or not math.isfinite(self.threshold):
            raise ValueError(f"threshold must be finite and >= 0, got {self.threshold}")
        if self.level_index < 1:
            raise ValueError(f"level_index must be >= 1, got {self.level_index}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")


@dataclass(frozen=True)
class AmpcConfig:
    """Knobs of the adaptive controller (or attacker, in maximize mode).

    The swarm size is never taken from the ``pso`` template; it is
    recomputed as 2 * beta * B * h for every horizon in use.  In maximize
    mode the level ladder climbs toward ``fitness_cap`` instead of
    descending toward ``phi``.
    """

    phi: float = 1e-3
    h_max: int = 5
    m: int = 40
    beta: int = 10
    pso: PsoParams = field(default_factory=PsoParams)
    mode: str = MODE_MINIMIZE
    fitness_cap: float = 10.0
    threshold_rule: str = "algorithm1"

    def __post_init__(self):
        if not (math.isfinite(self.phi) and self.phi > 0):
            raise ValueError(f"phi must be positive and finite, got {self.phi}")
        if self.h_max < 1:
            raise ValueError(f"h_max must be >= 1, got {self.h_max}")
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if self.beta < 1:
            raise ValueError(f"beta must be >= 1, got {self.beta}")
        if self.mode not in (MODE_MINIMIZE, MODE_MAXIMIZE):
            raise ValueError(f"mode must be minimize or maximize, got {self.mode!r}")
        if not (math.isfinite(self.fitness_cap) and self.fitness_cap > 0):
            raise ValueError(f"fitness_cap must be positive, got {self.fitness_cap}")
        if self.threshold_rule not in THRESHOLD_RULES:
            raise ValueError(f"threshold_rule must be one of {THRESHOLD_RULES}")


@dataclass(frozen=True)
class PredictionModel:
    """What a player assumes about the world while planning.

    The controller predicts with zero disturbances and bounded
    accelerations; the attacker predicts with zero accelerations and its
    displacements capped at magnitude M on at most R birds per step.
    """

    kind: str
    bounds: DynamicsBounds
    displacement_budget: tuple[int, float] | None = None

    def __post_init__(self):
        if self.kind not in ("controller", "attacker"):
            raise ValueError(f"kind must be controller or attacker, got {self.kind!r}")
        if self.kind == "attacker":
            if self.displacement_budget is None:
                raise ValueError("attacker model needs a (count, magnitude) budget")
            count, magnitude = self.displacement_budget
            if count < 1 or magnitude < 0:
                raise ValueError(f"bad displacement budget {self.displacement_budget}")


@dataclass(frozen=True)
class AmpcDiagnostics:
    """Per-step record of what the planner tried and decided."""

    horizon_used: int
    best_step: int
    predicted_fitness: float
    level_value: float
    threshold: float
    level_index: int
    particle_count: int
    evaluations: int
    improvement_branch: bool
    short_circuit: bool = False
    budget_exhausted: bool = False


@dataclass(frozen=True)
class AmpcDecision:
    """The action to apply now plus the planner's post-decision state.

    ``plan`` holds the raw best action sequence found (h, B, 2); its prefix
    up to the dip step can be executed verbatim while no adversary is
    moving, since the planner's model then matches the true dynamics
    exactly.
    """

    action: np.ndarray
    levels: LevelState
    diagnostics: AmpcDiagnostics
    plan: np.ndarray | None = None


def _project_top_r(displacements: np.ndarray, count: int) -> np.ndarray:
    """Zero all but the ``count`` largest-magnitude per-bird displacements.

    Ties keep the lower bird index (stable sort), so the projection is
    deterministic.
    """
    b = displacements.shape[-2]
    if count >= b:
        return displacements
    norms = np.linalg.norm(displacements, axis=-1)
    order = np.argsort(-norms, axis=-1, kind="stable")
    mask = np.zeros(norms.shape, dtype=bool)
    np.put_along_axis(mask, order[..., :count], True, axis=-1)
    return np.where(mask[..., None], displacements, 0.0)


def constrain_actions(
    model: PredictionModel, velocities: np.ndarray, actions: np.ndarray
) -> np.ndarray:
    """Clamp raw per-bird action vectors to what the model's player may do."""
    if model.kind == "controller":
        return clamp_acceleration_arrays(actions, velocities, model.bounds.rho)
    count, magnitude = model.displacement_budget
    capped = rescale_to_limits(actions, magnitude)
    return _project_top_r(capped, count)


def _predict_step(
    model: PredictionModel,
    positions: np.ndarray,
    velocities: np.ndarray,
    actions: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """One step of the player's assumed dynamics (actions already clamped)."""
    if model.kind == "controller":
        new_vel = rescale_to_limits(velocities + actions, model.bounds.v_max)
        return positions + new_vel, new_vel
    return positions + velocities + actions, velocities


def horizon_fitness_arrays(
    model: PredictionModel,
    positions: np.ndarray,
    velocities: np.ndarray,
    sequences: np.ndarray,
    params: FitnessParams,
) -> tuple[np.ndarray, np.ndarray]:
    """Best fitness within the horizon for a batch of action sequences.

    ``sequences`` has shape (..., h, B, 2); returns the minimum fitness over
    the h prefix states and the 1-based step index where it occurs.
    """
    h = sequences.shape[-3]
    lead = sequences.shape[:-3]
    pos = np.broadcast_to(positions, lead + positions.shape[-2:]).copy()
    vel = np.broadcast_to(velocities, lead + velocities.shape[-2:]).copy()
    best = np.full(lead, np.inf)
    best_step = np.zeros(lead, dtype=np.int64)
    for tau in range(h):
        acts = constrain_actions(model, vel, sequences[..., tau, :, :])
        pos, vel = _predict_step(model, pos, vel, acts)
        values = fitness_batch(pos, vel, params)
        better = values < best
        best = np.where(better, values, best)
        best_step = np.where(better, tau + 1, best_step)
    return best, best_step


def horizon_fitness(
    model: PredictionModel,
    state: FlockState,
    action_sequence,
    params: FitnessParams,
) -> tuple[float, int]:
    """Simulate the sequence under the model; return (min fitness, argmin step)."""
    seq = np.asarray(action_sequence, dtype=float)
    if seq.ndim != 3 or seq.shape[1:] != (state.bird_count, 2):
        raise ValueError(
            f"action_sequence must have shape (h, {state.bird_count}, 2), got {seq.shape}"
        )
    values, steps = horizon_fitness_arrays(
        model, state.positions, state.velocities, seq[None], params
    )
    return float(values[0]), int(steps[0])


def init_levels(initial_fitness: float, config: AmpcConfig) -> LevelState | None:
    """Build the starting level ladder, or None when the goal already holds.

    The initial threshold divides the fitness range to be covered into m
    equal parts; in maximize mode the range runs up to ``fitness_cap``.
    """
    if config.mode == MODE_MINIMIZE:
        if initial_fitness <= config.phi:
            return None
        delta = (initial_fitness - config.phi) / config.m
    else:
        if initial_fitness >= config.fitness_cap:
            return None
        delta = (config.fitness_cap - initial_fitness) / config.m
    return LevelState(
        level_value=initial_fitness, threshold=delta, level_index=1, horizon=1, steps_used=0
    )


def next_threshold(level_value: float, level_index: int, config: AmpcConfig) -> float:
    """Threshold required to accept the next level after reaching this one.

    The pseudocode form value/(m - i) and the prose form drawn on the
    previous level coincide after the index shift, so both threshold rules
    compute the same number.
    """
    if level_index >= config.m:
        raise LevelBudgetExhausted(
            f"level index {level_index} has exhausted the budget m={config.m}"
        )
    if config.mode == MODE_MINIMIZE:
        return level_value / (config.m - level_index)
    return max(0.0, (config.fitness_cap - level_value) / (config.m - level_index))


def advance_level(levels: LevelState, actual_fitness: float, config: AmpcConfig) -> LevelState:
    """Commit a macro step: the reached level is the realized state's fitness."""
    threshold = next_threshold(actual_fitness, levels.level_index, config)
    return LevelState(
        level_value=actual_fitness,
        threshold=threshold,
        level_index=levels.level_index + 1,
        horizon=1,
        steps_used=levels.steps_used,
    )


def _idle_decision(
    bird_count: int, levels: LevelState, *, short_circuit: bool, budget_exhausted: bool
) -> AmpcDecision:
    diag = AmpcDiagnostics(
        horizon_used=0,
        best_step=0,
        predicted_fitness=levels.level_value,
        level_value=levels.level_value,
        threshold=levels.threshold,
        level_index=levels.level_index,
        particle_count=0,
        evaluations=0,
        improvement_branch=False,
        short_circuit=short_circuit,
        budget_exhausted=budget_exhausted,
    )
    return AmpcDecision(action=np.zeros((bird_count, 2)), levels=levels, diagnostics=diag)


def ampc_next_action(
    state: FlockState,
    levels: LevelState,
    model: PredictionModel,
    config: AmpcConfig,
    fitness_params: FitnessParams,
    rng: np.random.Generator,
) -> AmpcDecision:
    """Pick the action to apply now, growing the horizon as needed.

    For each horizon h from the current one up to h_max, a swarm of
    2 * beta * B * h particles searches sequences of h per-bird action
    vectors for the best fitness reachable within h steps.  The first
    horizon whose best beats the current level by more than the threshold
    wins; failing that, the best sequence at h_max is used.  Only the first
    action is returned, clamped to the player's constraint; the caller
    advances the level ladder once the true next state is known.
    """
    b = state.bird_count
    minimize = config.mode == MODE_MINIMIZE
    current = float(fitness_batch(state.positions, state.velocities, fitness_params))
    if minimize and current < config.phi:
        return _idle_decision(b, levels, short_circuit=True, budget_exhausted=False)
    if not minimize and current >= config.fitness_cap:
        return _idle_decision(b, levels, short_circuit=True, budget_exhausted=False)
    if levels.level_index >= config.m:
        return _idle_decision(b, levels, short_circuit=False, budget_exhausted=True)

    if model.kind == "controller":
        reach = model.bounds.rho * model.bounds.v_max
    else:
        reach = model.displacement_budget[1]
    evaluations = 0

    for h in range(levels.horizon, config.h_max + 1):
        dim = 2 * b * h
        particles = 2 * config.beta * b * h
        swarm = replace(config.pso, particle_count=particles)

        def objective(flat: np.ndarray) -> np.ndarray:
            seqs = flat.reshape(len(flat), h, b, 2)
            values, _ = horizon_fitness_arrays(
                model, state.positions, state.velocities, seqs, fitness_params
            )
            return values if minimize else -values

        result = pso_minimize(objective, dim, (-reach, reach), swarm, rng, batch=True)
        evaluations += result.evaluations
        predicted = result.value if minimize else -result.value
        gain = levels.level_value - predicted if minimize else predicted - levels.level_value
        accepted = gain > levels.threshold
        if accepted or h == config.h_max:
            sequence = result.position.reshape(h, b, 2)
            _, steps = horizon_fitness_arrays(
                model, state.positions, state.velocities, sequence[None], fitness_params
            )
            first = constrain_actions(model, state.velocities, sequence[0])
            new_levels = LevelState(
                level_value=levels.level_value,
                threshold=levels.threshold,
                level_index=levels.level_index,
                horizon=1,
                steps_used=levels.steps_used + 1,
            )
            diag = AmpcDiagnostics(
                horizon_used=h,
                best_step=int(steps[0]),
                predicted_fitness=predicted,
                level_value=levels.level_value,
                threshold=levels.threshold,
                level_index=levels.level_index,
                particle_count=particles,
                evaluations=evaluations,
                improvement_branch=accepted,
            )
            return AmpcDecision(action=first, levels=new_levels, diagnostics=diag, plan=sequence)
    raise AssertionError("unreachable: the h_max fallback always returns")
