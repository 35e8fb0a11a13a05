import csv
import itertools
import logging
from functools import lru_cache
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from app.base.exceptions import CustomException, ExType
from app.base.utils.decorator import timing

from .environment import SignalEnv
from .models import (
    DECISION_SECONDS,
    PHASES,
    DemandProfile,
    EnvConfig,
    EpisodeResult,
    PlanStep,
)

logger = logging.getLogger(__name__)

GREEN_GRID = (12, 18, 24, 30, 36)
SEARCH_SEEDS = (0, 1, 2, 3, 4)

def validate_plan(plan: Sequence[PlanStep]) -> None:
    if not plan:
        raise CustomException(
            code=ExType.INVALID_PLAN, field="fixed_plan", detail="Plan is empty"
        )
    for step in plan:
        if step.duration <= 0 or step.duration % DECISION_SECONDS != 0:
            raise CustomException(
                code=ExType.INVALID_PLAN,
                field="fixed_plan",
                detail=f"Duration {step.duration} of {step.phase.value} "
                f"is not a positive multiple of {DECISION_SECONDS}",
            )
    missing = set(PHASES) - {step.phase for step in plan}
    if missing:
        names = ", ".join(sorted(phase.value for phase in missing))
        raise CustomException(
            code=ExType.INVALID_PLAN,
            field="fixed_plan",
            detail=f"Plan never serves: {names}",
        )


def canonical_cycle(plan: Sequence[PlanStep]) -> List[PlanStep]:
    """Rotate the cycle so it starts at the first step of the lowest phase."""
    start = min(range(len(plan)), key=lambda i: (plan[i].phase.action_index, i))
    return list(plan[start:]) + list(plan[:start])


def run_fixed_timing(env: SignalEnv, plan: Sequence[PlanStep]) -> EpisodeResult:
    validate_plan(plan)
    env.reset()
    for step in itertools.cycle(canonical_cycle(plan)):
        for _ in range(step.duration // DECISION_SECONDS):
            _, _, done = env.decision_step(step.phase)
            if done:
                return env.result()
    raise AssertionError("unreachable")


def plan_from_greens(greens: Sequence[int]) -> List[PlanStep]:
    return [
        PlanStep(phase=phase, duration=green) for phase, green in zip(PHASES, greens)
    ]


@timing
def search_fixed_plan(
    config: EnvConfig,
    greens: Sequence[int] = GREEN_GRID,
    seeds: Sequence[int] = SEARCH_SEEDS,
) -> Tuple[List[PlanStep], float, float]:
    """Grid search per-phase greens; returns (plan, mean return, mean queue)."""
    demand = config.demand()
    best: Tuple[List[PlanStep], float, float] = ([], -np.inf, 0.0)
    for combo in itertools.product(greens, repeat=len(PHASES)):
        plan = plan_from_greens(combo)
        results = [run_fixed_timing(SignalEnv(demand, seed), plan) for seed in seeds]
        mean_return = float(np.mean([r.episode_return for r in results]))
        mean_queue = float(np.mean([r.mean_queue for r in results]))
        logger.debug(f"plan {combo} mean return {mean_return:.2f}")
        if mean_return > best[1]:
            best = (plan, mean_return, mean_queue)
    logger.info(
        f"best fixed plan {[s.duration for s in best[0]]} "
        f"mean return {best[1]:.2f} mean queue {best[2]:.1f}"
    )
    return best


@lru_cache(maxsize=None)
def _searched_plan(
    config_json: str, greens: Tuple[int, ...], seeds: Tuple[int, ...]
) -> Tuple[PlanStep, ...]:
    config = EnvConfig.model_validate_json(config_json)
    return tuple(search_fixed_plan(config, greens, seeds)[0])


def fixed_plan_for(
    config: EnvConfig,
    greens: Sequence[int] = GREEN_GRID,
    seeds: Sequence[int] = SEARCH_SEEDS,
) -> List[PlanStep]:
    """The configured plan, else the grid-search optimum (searched once per config)."""
    if config.fixed_plan:
        return list(config.fixed_plan)
    return list(_searched_plan(config.model_dump_json(), tuple(greens), tuple(seeds)))


def fixed_timing_score(
    config: EnvConfig,
    seeds: Sequence[int] = SEARCH_SEEDS,
    greens: Sequence[int] = GREEN_GRID,
) -> float:
    """Mean return of the fixed-timing baseline over `seeds`."""
    plan = fixed_plan_for(config, greens, seeds)
    demand: DemandProfile = config.demand()
    returns = [
        run_fixed_timing(SignalEnv(demand, seed), plan).episode_return for seed in seeds
    ]
    return float(np.mean(returns))


def dump_trace(result: EpisodeResult, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "t", "queue", "reward", "phase"])
        for t, (queue, reward, phase) in enumerate(
            zip(result.queue_trajectory, result.step_rewards, result.phase_trajectory)
        ):
            step = t // DECISION_SECONDS
            writer.writerow([step, t, queue, f"{reward:.6f}", phase.value])
