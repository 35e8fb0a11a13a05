from pathlib import Path

import numpy as np
import pytest

from app.agent.dqn import (
    DQNAgent,
    huber,
    huber_grad,
    make_env_factory,
    schedule_value,
    train,
)
from app.agent.gradcheck import LossKind, check_q_network, finite_diff_check
from app.agent.network import (
    Activation,
    forward,
    init_params,
    load_params,
    save_params,
)
from app.agent.replay import ReplayBuffer, Transition, TransitionBatch
from app.base.exceptions import CustomException, ExType
from app.base.utils.rng import make_rng
from app.corruption.schemas import CorruptionSpec, ImputationSpec
from app.sim.models import OBSERVATION_SIZE

from .config import init_config, tiny_env_config, tiny_train_config  # noqa


def _transition(rng: np.random.Generator, action: int = 0, done: bool = False):
    return Transition(
        state=rng.random(OBSERVATION_SIZE),
        action=action,
        reward=float(rng.normal()),
        next_state=rng.random(OBSERVATION_SIZE),
        done=done,
    )


def test_forward_shapes() -> None:
    params = init_params(make_rng(0))
    assert params.arrays["W1"].shape == (OBSERVATION_SIZE, 256)
    assert params.arrays["W3"].shape == (48, 4)
    assert forward(params, np.zeros(OBSERVATION_SIZE)).shape == (4,)
    assert forward(params, np.zeros((5, OBSERVATION_SIZE))).shape == (5, 4)

    with pytest.raises(CustomException) as e:
        forward(params, np.zeros(OBSERVATION_SIZE - 1))
    assert e.value.code == ExType.DIMENSION_MISMATCH


def test_q_network_gradients_match_finite_differences() -> None:
    result = check_q_network(seed=0, batch=8, n_params=40)
    assert result.n_checked == 40
    assert result.max_rel_error < 1e-4
    assert set(result.per_array) == {
        "W1",
        "b1",
        "ln_gain",
        "ln_bias",
        "W2",
        "b2",
        "W3",
        "b3",
    }


@pytest.mark.parametrize("loss", [LossKind.MSE, LossKind.HUBER])
def test_linear_network_gradients_are_exact(loss: LossKind) -> None:
    rng = make_rng(3)
    params = init_params(rng, dims=(5, 4, 3, 2), activation=Activation.IDENTITY)
    states = rng.normal(size=(6, 5))
    actions = rng.integers(0, 2, size=6)
    targets = 3.0 * rng.normal(size=6)
    result = finite_diff_check(
        params, states, actions, targets, rng, n_params=1000, loss=loss
    )
    assert result.n_checked == sum(v.size for v in params.arrays.values())
    assert result.max_rel_error < 1e-5


def test_parameters_on_relu_kinks_are_replaced() -> None:
    rng = make_rng(5)
    params = init_params(rng, dims=(2, 2, 1), layer_norm=False)
    # Unit 0 sits exactly at zero for every input: its weights and bias are kinks.
    params.arrays["W1"] = np.array([[0.0, 0.3], [0.0, 0.4]])
    params.arrays["b1"] = np.array([0.0, 0.5])
    states = rng.uniform(0.1, 1.0, size=(4, 2))
    result = finite_diff_check(
        params, states, np.zeros(4, dtype=np.int64), rng.normal(size=4), rng, 9
    )
    assert result.n_kinks == 3
    assert result.n_checked == 6
    assert result.max_rel_error < 1e-6


def test_save_and_load_params(tmp_path: Path) -> None:
    params = init_params(make_rng(1), dims=(OBSERVATION_SIZE, 16, 8, 4))
    path = tmp_path / "params.bin"
    save_params(params, path, seed=1, config_hash="abc")

    loaded, header = load_params(path)
    assert loaded.equals(params)
    assert header["seed"] == 1
    assert header["config_hash"] == "abc"

    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CustomException) as e:
        load_params(path)
    assert e.value.code == ExType.DIMENSION_MISMATCH


def test_greedy_action_is_argmax() -> None:
    agent = DQNAgent(tiny_train_config(), seed=0)
    state = make_rng(2).random(OBSERVATION_SIZE)
    expected = int(np.argmax(agent.q_values(state)))
    assert all(agent.select_action(state, 0.0) == expected for _ in range(5))

    actions = {agent.select_action(state, 1.0) for _ in range(200)}
    assert actions == {0, 1, 2, 3}


def test_td_targets() -> None:
    rng = make_rng(4)
    agent = DQNAgent(tiny_train_config(gamma=0.9), seed=0)
    batch = TransitionBatch.from_transitions(
        [_transition(rng, done=True), _transition(rng, done=False)]
    )
    targets = agent.td_targets(batch)
    assert targets[0] == batch.rewards[0]

    next_q = forward(agent.online, batch.next_states[1])
    expected = batch.rewards[1] + 0.9 * next_q[np.argmax(next_q)]
    assert targets[1] == pytest.approx(expected)


def test_update_refreshes_target_periodically() -> None:
    rng = make_rng(5)
    agent = DQNAgent(tiny_train_config(target_update=2), seed=0)
    transitions = [_transition(rng, action=k % 4) for k in range(8)]

    loss = agent.update(transitions)
    assert loss > 0
    assert not agent.target.equals(agent.online)
    agent.update(transitions)
    assert agent.target.equals(agent.online)

    with pytest.raises(CustomException) as e:
        agent.update([])
    assert e.value.code == ExType.EMPTY_BATCH


def test_replay_buffer_is_a_ring() -> None:
    rng = make_rng(6)
    buffer = ReplayBuffer(capacity=3)
    with pytest.raises(CustomException) as e:
        buffer.sample(2, rng)
    assert e.value.code == ExType.EMPTY_BATCH

    for action in range(5):
        buffer.add(_transition(rng, action=action % 4))
    assert len(buffer) == 3
    assert sorted(buffer.actions.tolist()) == [0, 2, 3]

    batch = buffer.sample(10, rng)
    assert len(batch) == 3
    assert batch.states.dtype == np.float64

    with pytest.raises(CustomException) as e:
        buffer.add(Transition(np.zeros(3), 0, 0.0, np.zeros(3), False))
    assert e.value.code == ExType.DIMENSION_MISMATCH


def test_schedules_and_huber() -> None:
    assert schedule_value(1.0, 0.01, 0.0) == 1.0
    assert schedule_value(1.0, 0.01, 0.4) == pytest.approx(0.505)
    assert schedule_value(1.0, 0.01, 0.9) == 0.01

    residual = np.array([-3.0, -0.5, 0.0, 2.0])
    assert huber(residual).tolist() == [2.5, 0.125, 0.0, 1.5]
    assert huber_grad(residual).tolist() == [-1.0, -0.5, 0.0, 1.0]


def test_training_is_reproducible() -> None:
    factory = make_env_factory(tiny_env_config())
    config = tiny_train_config()
    runs = [
        train(factory, config, CorruptionSpec(), ImputationSpec(), seed=7)
        for _ in range(2)
    ]
    assert len(runs[0].episode_returns) == 2
    assert runs[0].episode_returns == runs[1].episode_returns
    assert runs[0].eval_returns == runs[1].eval_returns
    assert runs[0].losses == runs[1].losses
    assert len(runs[0].losses) == 20 - config.replay_start + 1
    assert runs[0].agent.online.is_finite()
