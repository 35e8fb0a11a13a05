import csv
from pathlib import Path

import numpy as np
import pytest

from app.base.exceptions import CustomException, ExType
from app.sim.baseline import (
    canonical_cycle,
    dump_trace,
    fixed_plan_for,
    fixed_timing_score,
    plan_from_greens,
    run_fixed_timing,
    search_fixed_plan,
    validate_plan,
)
from app.sim.environment import (
    SignalEnv,
    arrival_rates,
    spawn_arrivals,
    split_observation,
    step_reward,
)
from app.sim.models import (
    LANES_PER_APPROACH,
    N_CELLS,
    OBSERVATION_SIZE,
    STOP_SLOT,
    Approach,
    DemandProfile,
    Movement,
    PhaseAction,
    PlanStep,
    Vehicle,
    lane_id,
)

from .config import init_config, quiet_env, tiny_env_config  # noqa

EAST_LEFT = lane_id(Approach.EAST, Movement.LEFT)
NORTH_THROUGH = lane_id(Approach.NORTH, Movement.THROUGH)
SAMPLE_PLAN = plan_from_greens([12, 30, 12, 30])


def test_arrival_rates_follow_the_demand_curve() -> None:
    demand = DemandProfile(peak_rate=0.12, horizon=3600)
    ew, ns = arrival_rates(0, demand)
    assert ew == 0.0
    assert ns == pytest.approx(0.12)

    ew, ns = arrival_rates(3600, demand)
    assert ew == pytest.approx(0.12)
    assert ns < 1e-12

    ew, ns = arrival_rates(1800, DemandProfile(peak_rate=5.0, horizon=3600))
    assert ew == 1.0 and ns == 1.0


def test_step_reward_is_centred_on_eighty_queued() -> None:
    assert step_reward(80) == 0.0
    assert step_reward(0) == 1.0
    assert step_reward(160) == -1.0


def test_episode_length_and_observation() -> None:
    env = SignalEnv(tiny_env_config().demand(), seed=3)
    state = env.reset()
    assert state.shape == (OBSERVATION_SIZE,)

    decisions = 0
    while not env.done:
        state, reward, done = env.decision_step(PhaseAction.NS_THROUGH)
        decisions += 1
    assert decisions == 10
    assert done

    occupancy, phase, duration = split_observation(state)
    assert occupancy.shape == (12, N_CELLS)
    assert phase.tolist() == [0.0, 0.0, 0.0, 1.0]
    assert duration == pytest.approx(1.0)

    result = env.result()
    assert len(result.step_rewards) == 60
    assert result.decision_count == 10
    assert result.episode_return == pytest.approx(sum(result.returns_per_decision))

    with pytest.raises(CustomException) as e:
        env.decision_step(0)
    assert e.value.code == ExType.EPISODE_FINISHED


def test_same_seed_same_episode() -> None:
    demand = tiny_env_config(peak_rate=0.2).demand()
    first = run_fixed_timing(SignalEnv(demand, 5), SAMPLE_PLAN)
    second = run_fixed_timing(SignalEnv(demand, 5), SAMPLE_PLAN)
    assert first.queue_trajectory == second.queue_trajectory
    assert first.episode_return == second.episode_return
    assert first.spawned > 0


def test_green_lane_discharges_at_saturation_flow() -> None:
    env = quiet_env()
    for slot in range(STOP_SLOT - 9, STOP_SLOT + 1):
        assert env.place_vehicle(
            Vehicle(lane_id=EAST_LEFT, slot=slot, movement=Movement.LEFT)
        )
    assert not env.place_vehicle(
        Vehicle(lane_id=EAST_LEFT, slot=STOP_SLOT, movement=Movement.LEFT)
    )

    env.decision_step(PhaseAction.EW_LEFT)
    # One departure every 2 s.
    assert env.departed == 3
    assert env.n_vehicles == 7


def test_red_lane_holds_its_queue() -> None:
    env = quiet_env()
    env.place_vehicle(
        Vehicle(lane_id=NORTH_THROUGH, slot=STOP_SLOT, movement=Movement.THROUGH)
    )
    _, reward, _ = env.decision_step(PhaseAction.EW_THROUGH)
    assert env.departed == 0
    assert env.count_queued() == 1
    assert reward == pytest.approx(6 * step_reward(1))

    occupancy, _, _ = split_observation(env.observe())
    assert occupancy[NORTH_THROUGH, 0] == 1.0


def test_detection_never_changes_arrivals() -> None:
    demand = tiny_env_config(peak_rate=0.3).demand()
    clean = SignalEnv(demand, 11)
    blind = SignalEnv(demand, 11, miss_ratio=1.0, detection_seed=4)
    for _ in range(5):
        clean.decision_step(PhaseAction.EW_THROUGH)
        blind.decision_step(PhaseAction.EW_THROUGH)

    assert np.array_equal(clean.observe(), blind.observe())
    assert blind.observe()[: 12 * N_CELLS].sum() > 0
    assert blind.observe(equipped_only=True)[: 12 * N_CELLS].sum() == 0


def test_plan_validation() -> None:
    bad_plans = [
        [],
        [PlanStep(phase=PhaseAction.EW_LEFT, duration=10)],
        [PlanStep(phase=phase, duration=12) for phase in list(PhaseAction)[:3]],
    ]
    for plan in bad_plans:
        with pytest.raises(CustomException) as e:
            validate_plan(plan)
        assert e.value.code == ExType.INVALID_PLAN
    validate_plan(SAMPLE_PLAN)


def test_canonical_cycle_starts_with_the_first_phase() -> None:
    plan = SAMPLE_PLAN[2:] + SAMPLE_PLAN[:2]
    assert canonical_cycle(plan) == SAMPLE_PLAN


def test_dump_trace(tmp_path: Path) -> None:
    result = run_fixed_timing(quiet_env(horizon=60), SAMPLE_PLAN)
    path = tmp_path / "trace" / "fixed.csv"
    dump_trace(result, path)
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["step", "t", "queue", "reward", "phase"]
    assert len(rows) == 61
    assert rows[1][4] == PhaseAction.EW_LEFT.value
    assert rows[-1][0] == "9"


def test_split_observation_checks_length() -> None:
    with pytest.raises(CustomException) as e:
        split_observation(np.zeros(10))
    assert e.value.code == ExType.DIMENSION_MISMATCH


def test_fixed_timing_score_uses_the_searched_plan() -> None:
    config = tiny_env_config(peak_rate=0.4, horizon=120)
    greens, seeds = (12, 24), (0, 1)
    plan, best_return, _ = search_fixed_plan(config, greens, seeds)

    assert fixed_plan_for(config, greens, seeds) == plan
    assert fixed_timing_score(config, seeds, greens) == pytest.approx(best_return)

    pinned = config.model_copy(update={"fixed_plan": SAMPLE_PLAN})
    assert fixed_plan_for(pinned, greens, seeds) == SAMPLE_PLAN
    demand = config.demand()
    runs = [run_fixed_timing(SignalEnv(demand, seed), SAMPLE_PLAN) for seed in seeds]
    expected = np.mean([result.episode_return for result in runs])
    assert fixed_timing_score(pinned, seeds, greens) == pytest.approx(expected)


def test_vehicles_are_conserved() -> None:
    env = SignalEnv(tiny_env_config(peak_rate=0.5, horizon=300).demand(), 3)
    rng = np.random.default_rng(3)
    done = False
    while not done:
        _, _, done = env.decision_step(int(rng.integers(4)))
        assert env.spawned - env.departed == env.n_vehicles
    assert env.departed > 0
    assert env.dropped >= 0


def test_zero_demand_scores_one_per_second_for_any_policy() -> None:
    env = quiet_env(horizon=3600)
    for seed in range(3):
        rng = np.random.default_rng(seed)
        env.reset()
        done = False
        while not done:
            _, _, done = env.decision_step(int(rng.integers(4)))
        assert env.result().episode_return == pytest.approx(3600.0)
        assert env.spawned == 0


@pytest.mark.slow
def test_expected_ew_arrivals_per_lane() -> None:
    demand = DemandProfile(peak_rate=0.12, horizon=3600)
    expected = 0.12 * 3600 * 2 / np.pi
    assert expected == pytest.approx(275.0, abs=0.5)

    rng = np.random.default_rng(0)
    east_west = [int(Approach.EAST), int(Approach.WEST)]
    per_lane = []
    for _ in range(100):
        arrivals = 0
        for t in range(demand.horizon):
            arrivals += sum(
                1
                for vehicle in spawn_arrivals(t, demand, rng)
                if vehicle.lane_id // LANES_PER_APPROACH in east_west
            )
        per_lane.append(arrivals / 6)
    # 100 episodes give a standard error near 0.7 vehicles per lane slot.
    assert np.mean(per_lane) == pytest.approx(expected, abs=3.0)
