"""Statistical model checking of game win probability.

The win probability is estimated by running N independent identically
distributed game executions and averaging the Bernoulli outcomes.  The
additive-error guarantee Pr[|estimate - truth| <= epsilon] >= 1 - delta
holds by the Chernoff-Hoeffding bound once N >= 4*ln(2/delta)/epsilon^2.

Per-run seeds are derived from the master seed with a splitmix64 step, so
the i-th run sees the same seed no matter how many workers execute the
batch or in which order they finish.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .games import RunRecord

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15


class SmcRunError(RuntimeError):
    """A game execution failed; carries the seed needed to reproduce it."""

    def __init__(self, run_index: int, seed: int, cause: BaseException):
        super().__init__(f"run {run_index} (seed {seed}) failed: {cause!r}")
        self.run_index = run_index
        self.seed = seed


def derive_seed(master_seed: int, run_index: int) -> int:
    """Seed of the run at ``run_index``: splitmix64 of the master seed.

    z = master + (index + 1) * 2^64 / golden-ratio, then two xor-shift
    multiplies; the standard splitmix64 output function.
    """
    if run_index < 0:
        raise ValueError(f"run_index must be >= 0, got {run_index}")
    z = (master_seed + (run_index + 1) * _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def required_samples(epsilon: float, delta: float) -> int:
    """Chernoff-Hoeffding sample count: ceil(4 * ln(2/delta) / epsilon^2)."""
    if not (0.0 < epsilon < 1.0):
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    return math.ceil(4.0 * math.log(2.0 / delta) / epsilon**2)


@dataclass(frozen=True)
class SmcPlan:
    """How many runs to execute, under which master seed, how parallel."""

    epsilon: float = 0.1
    delta: float = 0.01
    sample_count: int | None = None
    master_seed: int = 0
    parallelism: int = 1

    def __post_init__(self):
        if not (0.0 < self.epsilon < 1.0):
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not (0.0 < self.delta < 1.0):
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.sample_count is not None and self.sample_count < 1:
            raise ValueError(f"sample_count must be >= 1, got {self.sample_count}")
        if self.parallelism < 1:
            raise ValueError(f"parallelism must be >= 1, got {self.parallelism}")

    @property
    def samples(self) -> int:
        if self.sample_count is not None:
            return self.sample_count
        return required_samples(self.epsilon, self.delta)


@dataclass
class SmcReport:
    """Win-probability estimate plus averages over the winning runs."""

    estimate: float
    wins: int
    samples: int
    epsilon: float
    delta: float
    mean_steps_to_v: float | None
    mean_avg_horizon: float | None
    run_records: list[RunRecord] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        """JSON-ready form; timing fields and traces are excluded so equal
        plans serialize to byte-identical reports."""
        return {
            "estimate": self.estimate,
            "wins": self.wins,
            "samples": self.samples,
            "epsilon": self.epsilon,
            "delta": self.delta,
            "mean_steps_to_v": self.mean_steps_to_v,
            "mean_avg_horizon": self.mean_avg_horizon,
            "runs": [
                {
                    "seed": record.seed,
                    "won": record.won,
                    "steps_to_v": record.steps_to_v,
                    "avg_horizon": record.avg_horizon,
                    "fitness_trajectory": record.fitness_trajectory,
                }
                for record in self.run_records
            ],
        }


def _run_one(game_runner, run_index: int, seed: int) -> RunRecord:
    try:
        return game_runner(seed)
    except Exception as exc:
        raise SmcRunError(run_index, seed, exc) from exc


def estimate(game_runner, plan: SmcPlan) -> SmcReport:
    """Estimate the win probability of ``game_runner`` over the planned runs.

    ``game_runner`` maps a 64-bit seed to a RunRecord and must be a pure
    function of that seed.  Runs execute on up to ``plan.parallelism``
    workers; the report depends only on the runner and the plan, never on
    scheduling.  Any failing run aborts the whole estimate with the seed
    needed to reproduce it.
    """
    n = plan.samples
    seeds = [derive_seed(plan.master_seed, i) for i in range(n)]

    if plan.parallelism == 1:
        records = [_run_one(game_runner, i, seed) for i, seed in enumerate(seeds)]
    else:
        with ProcessPoolExecutor(max_workers=plan.parallelism) as pool:
            futures = [
                pool.submit(_run_one, game_runner, i, seed) for i, seed in enumerate(seeds)
            ]
            records = [f.result() for f in futures]

    wins = sum(1 for r in records if r.won)
    winning = [r for r in records if r.won]
    steps = [r.steps_to_v for r in winning if r.steps_to_v is not None]
    horizons = [r.avg_horizon for r in winning if r.avg_horizon is not None]
    return SmcReport(
        estimate=wins / n,
        wins=wins,
        samples=n,
        epsilon=plan.epsilon,
        delta=plan.delta,
        mean_steps_to_v=sum(steps) / len(steps) if steps else None,
        mean_avg_horizon=sum(horizons) / len(horizons) if horizons else None,
        run_records=records,
    )
