"""The three controller-attacker games over the flock MDP.

Every game pits the adaptive controller (accelerations) against one
attacker (displacements) and is judged by reachability: the controller wins
a run as soon as the flock fitness drops below the threshold phi within the
step budget.

* Remove-birds game: the attacker deletes R birds from a V-formation at
  t = 0 and never moves again.
* Random-displacement game: for the first ``attack_steps`` steps the
  attacker displaces R uniformly chosen birds by uniformly random vectors
  of magnitude at most M.
* Adaptive-displacement game: same schedule, but the displacements come
  from the same adaptive-horizon planner the controller uses, run in
  fitness-maximize mode.

Play is parallel: both players compute their move from the same current
state, and the joint action determines the next state.  A single run is
sequential and deterministic given its seed; independent runs are
embarrassingly parallel.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from .ampc import (
    MODE_MAXIMIZE,
    AmpcConfig,
    PredictionModel,
    advance_level,
    ampc_next_action,
    constrain_actions,
    init_levels,
)
from .fitness import FitnessParams, fitness
from .flock import (
    ControlAction,
    Disturbance,
    DynamicsBounds,
    FlockState,
    VGeometry,
    make_v_formation,
    remove_birds,
    step_flock,
)
from .pso import PsoParams


@dataclass(frozen=True)
class RemoveBirdsAttack:
    """One-shot removal of birds, named in the 1-based wing numbering
    (1..B with the leader in the middle of the range)."""

    birds: tuple[int, ...] | None = None
    count: int = 1
    selection: str = "explicit"  # explicit | random | worst

    def __post_init__(self):
        if self.selection not in ("explicit", "random", "worst"):
            raise ValueError(f"selection must be explicit, random, or worst: {self.selection!r}")
        if self.selection == "explicit":
            if not self.birds:
                raise ValueError("explicit removal needs a non-empty birds tuple")
            if len(set(self.birds)) != len(self.birds):
                raise ValueError(f"birds {self.birds} contain duplicates")
        elif self.count < 1:
            raise ValueError(f"removal count must be >= 1, got {self.count}")

    @property
    def removal_count(self) -> int:
        return len(self.birds) if self.selection == "explicit" else self.count


@dataclass(frozen=True)
class RandomDisplacementAttack:
    """Uniformly random displacement of R birds per step while attacking."""

    count: int = 1
    magnitude: float = 1.0
    attack_steps: int = 20

    def __post_init__(self):
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")
        if self.magnitude < 0 or not math.isfinite(self.magnitude):
            raise ValueError(f"magnitude must be finite and >= 0, got {self.magnitude}")
        if self.attack_steps < 0:
            raise ValueError(f"attack_steps must be >= 0, got {self.attack_steps}")


@dataclass(frozen=True)
class AmpcDisplacementAttack:
    """Adversarially planned displacement of R birds per step while attacking."""

    count: int = 1
    magnitude: float = 1.0
    attack_steps: int = 20
    ampc: AmpcConfig | None = None

    def __post_init__(self):
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")
        if self.magnitude < 0 or not math.isfinite(self.magnitude):
            raise ValueError(f"magnitude must be finite and >= 0, got {self.magnitude}")
        if self.attack_steps < 0:
            raise ValueError(f"attack_steps must be >= 0, got {self.attack_steps}")


Attack = Union[RemoveBirdsAttack, RandomDisplacementAttack, AmpcDisplacementAttack]

GAME_NAMES = {
    RemoveBirdsAttack: "rbg",
    RandomDisplacementAttack: "rdg",
    AmpcDisplacementAttack: "ampc",
}


@dataclass
class GameConfig:
    """Full parameterization of one game execution."""

    attack: Attack
    bird_count: int = 7
    phi: float = 1e-3
    h_max: int = 5
    m: int = 40
    max_steps: int = 40
    beta: int = 10
    pso: PsoParams = field(default_factory=PsoParams)
    controller: AmpcConfig | None = None
    fitness: FitnessParams = field(default_factory=FitnessParams)
    bounds: DynamicsBounds = field(default_factory=DynamicsBounds)
    geometry: VGeometry = field(default_factory=VGeometry)
    seed: int = 0

    def __post_init__(self):
        if self.bird_count < 1:
            raise ValueError(f"bird_count must be >= 1, got {self.bird_count}")
        if not (math.isfinite(self.phi) and self.phi > 0):
            raise ValueError(f"phi must be positive and finite, got {self.phi}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.controller is None:
            self.controller = AmpcConfig(
                phi=self.phi, h_max=self.h_max, m=self.m, beta=self.beta, pso=self.pso
            )
        attack = self.attack
        if isinstance(attack, RemoveBirdsAttack):
            if attack.removal_count >= self.bird_count:
                raise ValueError(
                    f"cannot remove {attack.removal_count} of {self.bird_count} birds"
                )
            if attack.selection == "explicit":
                for bird in attack.birds:
                    if not (1 <= bird <= self.bird_count):
                        raise ValueError(
                            f"bird number {bird} out of range 1..{self.bird_count}"
                        )
        elif isinstance(attack, (RandomDisplacementAttack, AmpcDisplacementAttack)):
            if attack.count >= self.bird_count:
                raise ValueError(
                    f"displacement count {attack.count} must be < bird_count {self.bird_count}"
                )
            if attack.attack_steps > self.max_steps:
                raise ValueError(
                    f"attack_steps {attack.attack_steps} exceeds max_steps {self.max_steps}"
                )
            if isinstance(attack, AmpcDisplacementAttack) and attack.ampc is None:
                self.attack = replace(
                    attack,
                    ampc=AmpcConfig(
                        phi=self.phi,
                        h_max=self.h_max,
                        m=self.m,
                        beta=self.beta,
                        pso=self.pso,
                        mode=MODE_MAXIMIZE,
                    ),
                )
        else:
            raise TypeError(f"unknown attack type {type(attack).__name__}")

    @property
    def game_name(self) -> str:
        return GAME_NAMES[type(self.attack)]


@dataclass
class RunRecord:
    """Outcome of one game execution.

    The fitness trajectory lists J for every judged state in step order:
    the remove-birds game records the post-removal state at t = 0 and each
    state after, while the displacement games record the states after each
    joint step (t >= 1; the pristine starting formation is not judged).
    ``won`` holds exactly when some recorded J fell below phi.
    """

    won: bool
    steps_to_v: int | None
    avg_horizon: float | None
    fitness_trajectory: list[float]
    seed: int
    wall_time: float
    trace: list[dict] | None = None


def play_parallel_step(
    state: FlockState,
    controller_action: ControlAction,
    attacker_disturbance: Disturbance,
    bounds: DynamicsBounds,
) -> FlockState:
    """Apply the jointly chosen (acceleration, displacement) action."""
    return step_flock(state, controller_action, attacker_disturbance, bounds)


class _ControllerPlayer:
    """Adaptive controller with a lazily initialized level ladder.

    Games that start inside the goal region have no fitness range to
    divide into levels yet; the ladder is built from the first state the
    attacker manages to push out of the goal region.

    While an adversary is actively moving, the controller re-plans every
    step and applies only the first action of each plan.  Once the
    adversary is inert its model matches the true dynamics exactly, so the
    accepted plan is executed through its dip step (one macro step spanning
    best_step environment transitions) and the level ladder advances from
    the state the macro step actually reaches.
    """

    def __init__(self, config: AmpcConfig, bounds: DynamicsBounds, params: FitnessParams, rng):
        self.config = config
        self.model = PredictionModel("controller", bounds)
        self.params = params
        self.rng = rng
        self.levels = None
        self.horizons: list[int] = []
        self._macro = None
        self._just_planned = False
        self._queue: list[np.ndarray] = []

    def act(self, state: FlockState, current_fitness: float, opposed: bool) -> np.ndarray:
        self._just_planned = False
        if self._queue:
            return constrain_actions(self.model, state.velocities, self._queue.pop(0))
        if self.levels is None:
            self.levels = init_levels(current_fitness, self.config)
            if self.levels is None:
                self._macro = None
                return np.zeros((state.bird_count, 2))
        decision = ampc_next_action(
            state, self.levels, self.model, self.config, self.params, self.rng
        )
        self.levels = decision.levels
        diag = decision.diagnostics
        if diag.short_circuit or diag.budget_exhausted:
            self._macro = None
            return decision.action
        self.horizons.append(diag.best_step)
        self._macro = diag
        self._just_planned = True
        if not opposed and diag.best_step > 1:
            self._queue = list(decision.plan[1 : diag.best_step])
        return decision.action

    def observe(self, actual_fitness: float, trace_sink: dict | None = None) -> None:
        if trace_sink is not None and self._macro is not None and self._just_planned:
            trace_sink.update(
                controller_best_step=self._macro.best_step,
                controller_horizon=self._macro.horizon_used,
                predicted_fitness=self._macro.predicted_fitness,
                level_value=self._macro.level_value,
                threshold=self._macro.threshold,
                improvement_branch=self._macro.improvement_branch,
            )
        if self._queue:
            return  # macro step still in flight; the level advances at its dip
        if self._macro is not None:
            self.levels = advance_level(self.levels, actual_fitness, self.config)
            self._macro = None


class _AmpcAttackerPlayer:
    """Fitness-maximizing attacker driven by the same adaptive planner."""

    def __init__(self, attack: AmpcDisplacementAttack, bounds, params: FitnessParams, rng):
        self.config = attack.ampc
        self.model = PredictionModel(
            "attacker", bounds, displacement_budget=(attack.count, attack.magnitude)
        )
        self.params = params
        self.rng = rng
        self.levels = None
        self._acted = False

    def act(self, state: FlockState, current_fitness: float) -> np.ndarray:
        if self.levels is None:
            self.levels = init_levels(current_fitness, self.config)
            if self.levels is None:
                self._acted = False
                return np.zeros((state.bird_count, 2))
        decision = ampc_next_action(
            state, self.levels, self.model, self.config, self.params, self.rng
        )
        self.levels = decision.levels
        diag = decision.diagnostics
        self._acted = not (diag.short_circuit or diag.budget_exhausted)
        return decision.action

    def observe(self, actual_fitness: float) -> None:
        if self._acted:
            self.levels = advance_level(self.levels, actual_fitness, self.config)
            self._acted = False


def _random_displacement(attack: RandomDisplacementAttack, bird_count: int, rng) -> np.ndarray:
    """R distinct victims, magnitudes ~ U[0, M], directions ~ U[0, 2*pi)."""
    victims = rng.choice(bird_count, size=attack.count, replace=False)
    magnitudes = rng.uniform(0.0, attack.magnitude, size=attack.count)
    angles = rng.uniform(0.0, 2.0 * math.pi, size=attack.count)
    out = np.zeros((bird_count, 2))
    out[victims, 0] = magnitudes * np.cos(angles)
    out[victims, 1] = magnitudes * np.sin(angles)
    return out


def _pick_removal(config: GameConfig, start: FlockState, rng) -> list[int]:
    attack = config.attack
    if attack.selection == "explicit":
        return sorted(bird - 1 for bird in attack.birds)
    if attack.selection == "random":
        return sorted(int(i) for i in rng.choice(config.bird_count, attack.count, replace=False))
    # Worst case: exhaustively score every removal subset, keep the one
    # that leaves the remnant with the highest fitness.
    worst, worst_j = None, -math.inf
    for combo in itertools.combinations(range(config.bird_count), attack.count):
        j = fitness(remove_birds(start, combo), config.fitness).j
        if j > worst_j:
            worst, worst_j = combo, j
    return list(worst)


def _trace_meta(config: GameConfig, removed: list[int] | None) -> dict:
    return {
        "type": "meta",
        "game": config.game_name,
        "bird_count": config.bird_count,
        "phi": config.phi,
        "seed": config.seed,
        "wing_span": config.fitness.wing_span,
        "view_cone_angle": config.fitness.view_cone_angle,
        "removed_birds": None if removed is None else [i + 1 for i in removed],
    }


def _trace_step(t: int, state: FlockState, action, disturbance, breakdown) -> dict:
    return {
        "type": "step",
        "t": t,
        "positions": state.positions.tolist(),
        "velocities": state.velocities.tolist(),
        "action": None if action is None else np.asarray(action).tolist(),
        "disturbance": None if disturbance is None else np.asarray(disturbance).tolist(),
        "j": breakdown.j,
        "cv": breakdown.cv,
        "vm": breakdown.vm,
        "ub": breakdown.ub,
    }


def _spawn_rngs(config: GameConfig, rng: np.random.Generator | None):
    if rng is None:
        seq = np.random.SeedSequence(config.seed)
        children = seq.spawn(2)
        return np.random.default_rng(children[0]), np.random.default_rng(children[1])
    controller_rng, attacker_rng = rng.spawn(2)
    return controller_rng, attacker_rng


def run_rbg(
    config: GameConfig, rng: np.random.Generator | None = None, collect_trace: bool = False
) -> RunRecord:
    """Remove-birds game: one attacker move at t = 0, then pure recovery."""
    if not isinstance(config.attack, RemoveBirdsAttack):
        raise ValueError("run_rbg needs a RemoveBirdsAttack config")
    started = time.perf_counter()
    c_rng, a_rng = _spawn_rngs(config, rng)
    start = make_v_formation(config.bird_count, config.geometry)
    removed = _pick_removal(config, start, a_rng)
    state = remove_birds(start, removed)

    trace = [_trace_meta(config, removed)] if collect_trace else None
    controller = _ControllerPlayer(config.controller, config.bounds, config.fitness, c_rng)
    breakdown = fitness(state, config.fitness)
    trajectory = [breakdown.j]
    if collect_trace:
        trace.append(_trace_step(0, state, None, None, breakdown))

    won = breakdown.j < config.phi
    steps_to_v = 0 if won else None
    if not won:
        for t in range(1, config.max_steps + 1):
            action = controller.act(state, trajectory[-1], opposed=False)
            state = play_parallel_step(
                state,
                ControlAction(action),
                Disturbance.zero(state.bird_count),
                config.bounds,
            )
            breakdown = fitness(state, config.fitness)
            trajectory.append(breakdown.j)
            record = _trace_step(t, state, action, None, breakdown) if collect_trace else None
            controller.observe(breakdown.j, record)
            if collect_trace:
                trace.append(record)
            if breakdown.j < config.phi:
                won, steps_to_v = True, t
                break

    return RunRecord(
        won=won,
        steps_to_v=steps_to_v,
        avg_horizon=float(np.mean(controller.horizons)) if controller.horizons else None,
        fitness_trajectory=trajectory,
        seed=config.seed,
        wall_time=time.perf_counter() - started,
        trace=trace,
    )


def _run_displacement_game(
    config: GameConfig, attacker, attack_steps: int, collect_trace: bool
) -> RunRecord:
    started = time.perf_counter()
    state = make_v_formation(config.bird_count, config.geometry)
    trace = [_trace_meta(config, None)] if collect_trace else None
    controller_rng = attacker.controller_rng

    controller = _ControllerPlayer(
        config.controller, config.bounds, config.fitness, controller_rng
    )
    breakdown = fitness(state, config.fitness)
    if collect_trace:
        trace.append(_trace_step(0, state, None, None, breakdown))

    trajectory: list[float] = []
    won, steps_to_v = False, None
    current_j = breakdown.j
    for t in range(config.max_steps):
        opposed = t < attack_steps
        action = controller.act(state, current_j, opposed=opposed)
        if opposed:
            disturbance = attacker.act(state, current_j)
        else:
            disturbance = np.zeros((config.bird_count, 2))
        state = play_parallel_step(
            state, ControlAction(action), Disturbance(disturbance), config.bounds
        )
        breakdown = fitness(state, config.fitness)
        trajectory.append(breakdown.j)
        record = (
            _trace_step(t + 1, state, action, disturbance, breakdown) if collect_trace else None
        )
        controller.observe(breakdown.j, record)
        if t < attack_steps:
            attacker.observe(breakdown.j)
        if collect_trace:
            trace.append(record)
        current_j = breakdown.j
        if current_j < config.phi:
            won, steps_to_v = True, t + 1
            break

    return RunRecord(
        won=won,
        steps_to_v=steps_to_v,
        avg_horizon=float(np.mean(controller.horizons)) if controller.horizons else None,
        fitness_trajectory=trajectory,
        seed=config.seed,
        wall_time=time.perf_counter() - started,
        trace=trace,
    )


class _RandomAttackerAdapter:
    def __init__(self, attack: RandomDisplacementAttack, bird_count: int, c_rng, a_rng):
        self.attack = attack
        self.bird_count = bird_count
        self.controller_rng = c_rng
        self.rng = a_rng

    def act(self, state, current_fitness):
        return _random_displacement(self.attack, self.bird_count, self.rng)

    def observe(self, actual_fitness):
        pass


class _AmpcAttackerAdapter(_AmpcAttackerPlayer):
    def __init__(self, attack, config: GameConfig, c_rng, a_rng):
        super().__init__(attack, config.bounds, config.fitness, a_rng)
        self.controller_rng = c_rng


def run_rdg(
    config: GameConfig, rng: np.random.Generator | None = None, collect_trace: bool = False
) -> RunRecord:
    """Random-displacement game: naive attacker for the first attack_steps."""
    if not isinstance(config.attack, RandomDisplacementAttack):
        raise ValueError("run_rdg needs a RandomDisplacementAttack config")
    c_rng, a_rng = _spawn_rngs(config, rng)
    attacker = _RandomAttackerAdapter(config.attack, config.bird_count, c_rng, a_rng)
    return _run_displacement_game(config, attacker, config.attack.attack_steps, collect_trace)


def run_ampc_game(
    config: GameConfig, rng: np.random.Generator | None = None, collect_trace: bool = False
) -> RunRecord:
    """Adaptive-displacement game: the attacker plans with the same machinery."""
    if not isinstance(config.attack, AmpcDisplacementAttack):
        raise ValueError("run_ampc_game needs an AmpcDisplacementAttack config")
    c_rng, a_rng = _spawn_rngs(config, rng)
    attacker = _AmpcAttackerAdapter(config.attack, config, c_rng, a_rng)
    return _run_displacement_game(config, attacker, config.attack.attack_steps, collect_trace)


def run_game(
    config: GameConfig, rng: np.random.Generator | None = None, collect_trace: bool = False
) -> RunRecord:
    """Dispatch to the runner matching the configured attack."""
    if isinstance(config.attack, RemoveBirdsAttack):
        return run_rbg(config, rng, collect_trace)
    if isinstance(config.attack, RandomDisplacementAttack):
        return run_rdg(config, rng, collect_trace)
    return run_ampc_game(config, rng, collect_trace)
