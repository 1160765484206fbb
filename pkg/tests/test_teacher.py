# -*- coding: utf-8 -*-

import math

import numpy as np
import pytest

from lowprec_distill import logger
from lowprec_distill.agents import evaluate_agent, teacher_agent
from lowprec_distill.envs import CatchEnv
from lowprec_distill.exceptions import ShapeError, UsageError
from lowprec_distill.schemas import TeacherPM
from lowprec_distill.teacher import (
    DDQNLearner,
    RMSProp,
    ReplayBuffer,
    TeacherNetwork,
    Transition,
    ddqn_target,
    epsilon_schedule,
    load_teacher,
    save_teacher,
    sync_target,
    td_loss_and_grads,
    td_step,
    train_teacher,
    value_iteration,
)


class _TableQ:
    """Q function over integer state ids stored in the first feature."""

    def __init__(self, table):
        self.table = np.asarray(table, dtype=np.float64)

    def predict(self, batch):
        return self.table[np.asarray(batch)[:, 0].astype(np.int64)]


def _chain_mdp():
    ## states 0, 1, 2; actions left, stay, right; stepping right out of 1 reaches the goal
    _next = np.array([[0, 0, 1], [0, 1, 2], [2, 2, 2]])
    _rewards = np.zeros((3, 3))
    _rewards[1, 2] = 1.0
    _terminal = np.zeros((3, 3), dtype=bool)
    _terminal[1, 2] = True
    _terminal[2, :] = True
    return _next, _rewards, _terminal


def test_ddqn_target_table():
    logger.info("Testing 'ddqn_target' on a hand-worked 2-state table...")

    _online = _TableQ([[2.0, 2.0, 0.0], [1.0, 3.0, 2.0]])
    _target = _TableQ([[4.0, 7.0, 1.0], [10.0, 0.0, 5.0]])

    ## online picks action 1 in state 1, target values it at 0
    assert ddqn_target(1.0, [1], False, _online, _target, 0.9) == 1.0
    ## online ties in state 0 resolve to action 0
    assert ddqn_target(1.0, [0], False, _online, _target, 0.9) == pytest.approx(4.6, abs=1e-15)
    assert ddqn_target(1.0, [0], True, _online, _target, 0.9) == 1.0
    assert ddqn_target(-1.0, [1], False, _online, _target, 0.0) == -1.0

    _batch = ddqn_target(
        np.array([1.0, 1.0, 0.5]), np.array([[1], [0], [0]]), np.array([False, False, True]), _online, _target, 0.9
    )
    np.testing.assert_allclose(_batch, [1.0, 4.6, 0.5], atol=1e-15)

    with pytest.raises(UsageError):
        ddqn_target(1.0, [0], False, _online, _target, 1.5)

    logger.success("Done: 'ddqn_target' table.\n")


def test_ddqn_target_bounded(rng):
    logger.info("Testing 'ddqn_target' never exceeds the max-target bound...")

    _online = _TableQ(rng.normal(size=(50, 3)))
    _target = _TableQ(rng.normal(size=(50, 3)))
    _s = np.arange(50)[:, np.newaxis]
    _r = rng.normal(size=50)
    _y = ddqn_target(_r, _s, np.zeros(50, dtype=bool), _online, _target, 0.99)

    assert np.all(_y <= _r + 0.99 * _target.table.max(axis=1) + 1e-12)
    assert np.all(_y >= _r + 0.99 * _target.table.min(axis=1) - 1e-12)

    logger.success("Done: 'ddqn_target' bound.\n")


def test_epsilon_schedule():
    logger.info("Testing 'epsilon_schedule'...")

    assert epsilon_schedule(0, 1.0, 0.1, 20_000) == 1.0
    assert epsilon_schedule(20_000, 1.0, 0.1, 20_000) == 0.1
    assert epsilon_schedule(50_000, 1.0, 0.1, 20_000) == 0.1
    assert epsilon_schedule(10_000, 1.0, 0.1, 20_000) == pytest.approx(0.55)

    with pytest.raises(UsageError):
        epsilon_schedule(-1)

    logger.success("Done: 'epsilon_schedule'.\n")


def test_rmsprop_examples():
    logger.info("Testing 'RMSProp' examples...")

    _params = {"p": np.array([1.0])}
    RMSProp(lr=0.1, decay=0.5, eps=0.0, centered=True).step(_params, {"p": np.array([2.0])})
    np.testing.assert_allclose(_params["p"], [0.8])

    _params = {"p": np.array([1.0])}
    RMSProp(lr=0.1, decay=0.5, eps=0.0, centered=False).step(_params, {"p": np.array([2.0])})
    np.testing.assert_allclose(_params["p"], [1.0 - 0.2 / np.sqrt(2.0)])

    _params = {"p": np.array([3.0, -1.0])}
    _opt = RMSProp()
    _opt.step(_params, {"p": np.zeros(2)})
    np.testing.assert_array_equal(_params["p"], [3.0, -1.0])

    with pytest.raises(UsageError):
        RMSProp(lr=0.0)
    with pytest.raises(UsageError):
        RMSProp(decay=1.0)

    logger.success("Done: 'RMSProp' examples.\n")


def test_replay_buffer():
    logger.info("Testing 'ReplayBuffer'...")

    _buffer = ReplayBuffer(capacity=3, obs_shape=(2,))
    with pytest.raises(UsageError):
        _buffer.sample(1, np.random.default_rng(0))

    for _i in range(5):
        _buffer.add(np.full(2, _i), _i % 3, float(_i), np.full(2, _i + 1), _i == 4)
    assert len(_buffer) == 3
    assert _buffer.cursor == 2
    assert _buffer.states[:, 0].tolist() == [3, 4, 2]
    assert _buffer.rewards.tolist() == [3.0, 4.0, 2.0]
    assert _buffer.dones.tolist() == [False, True, False]

    _batch = _buffer.sample(64, np.random.default_rng(1))
    assert _batch.s.shape == (64, 2)
    assert set(_batch.s[:, 0].tolist()) <= {2, 3, 4}
    np.testing.assert_array_equal(_batch.s_next, _batch.s + 1)

    with pytest.raises(UsageError):
        _buffer.add(np.zeros(2), 3, 0.0, np.zeros(2), False)
    with pytest.raises(UsageError):
        _buffer.add(np.zeros(2), 0, np.nan, np.zeros(2), False)
    with pytest.raises(UsageError):
        ReplayBuffer(capacity=0, obs_shape=(2,))

    logger.success("Done: 'ReplayBuffer'.\n")


def test_replay_buffer_uniform_sampling():
    logger.info("Testing 'ReplayBuffer' sampling frequencies...")

    _buffer = ReplayBuffer(capacity=100, obs_shape=(1,))
    ## Wrap the ring so the live items are not in insertion order:
    for _i in range(250):
        _buffer.add(np.full(1, _i % 256), _i % 3, 0.0, np.full(1, _i % 256), False)
    assert len(_buffer) == 100

    _draws = 10**6
    _counts = np.bincount(_buffer.sample_indices(_draws, np.random.default_rng(0)), minlength=100)
    assert _counts.shape == (100,)
    _sigma = math.sqrt(_draws * 0.01 * 0.99)
    assert np.all(np.abs(_counts - _draws // 100) <= 5 * _sigma)

    logger.success("Done: 'ReplayBuffer' sampling frequencies.\n")


def test_teacher_network_shapes():
    logger.info("Testing 'TeacherNetwork' shapes...")

    _net = TeacherNetwork((4, 24, 24), seed=0)
    assert _net.predict(np.zeros((4, 24, 24))).shape == (3,)
    assert _net.predict(np.zeros((5, 4, 24, 24))).shape == (5, 3)
    with pytest.raises(ShapeError):
        _net.predict(np.zeros((4, 12, 12)))

    _atari = TeacherNetwork.from_arch("atari", (4, 84, 84), hidden=16)
    assert _atari.params["conv0.w"].shape == (32, 4, 8, 8)
    assert _atari.predict(np.zeros((4, 84, 84))).shape == (3,)

    logger.success("Done: 'TeacherNetwork' shapes.\n")


def test_td_gradients_finite_differences(rng):
    logger.info("Testing TD gradients against finite differences...")

    _net = TeacherNetwork((4, 8, 8), conv_layers=((4, 3, 2),), hidden=8, seed=1)
    _target = _net.copy()
    for _name in _target.params:
        _target.params[_name] = _target.params[_name] + rng.normal(scale=0.05, size=_target.params[_name].shape)

    _batch = Transition(
        s=rng.random((6, 4, 8, 8)),
        a=rng.integers(3, size=6),
        r=rng.normal(size=6),
        s_next=rng.random((6, 4, 8, 8)),
        done=np.array([False, True, False, False, True, False]),
    )
    _, _grads = td_loss_and_grads(_batch, _net, _target, 0.9)

    _h = 1e-6
    for _name in ("conv0.w", "conv0.b", "dense.w", "dense.b", "out.w", "out.b"):
        _param = _net.params[_name].reshape(-1)
        for _idx in rng.choice(_param.size, size=min(6, _param.size), replace=False):
            _orig = _param[_idx]
            _param[_idx] = _orig + _h
            _plus, _ = td_loss_and_grads(_batch, _net, _target, 0.9)
            _param[_idx] = _orig - _h
            _minus, _ = td_loss_and_grads(_batch, _net, _target, 0.9)
            _param[_idx] = _orig
            assert _grads[_name].reshape(-1)[_idx] == pytest.approx((_plus - _minus) / (2 * _h), rel=1e-4, abs=1e-7)

    logger.success("Done: TD gradients.\n")


def test_sync_target_and_learner_tick():
    logger.info("Testing target sync and the learner tick counter...")

    _config = TeacherPM(target_sync_steps=3, replay_capacity=16, batch_size=4)
    _learner = DDQNLearner(TeacherNetwork((4, 8, 8), conv_layers=((4, 3, 2),), hidden=8), _config, (4, 8, 8))
    _frozen = {_k: _v.copy() for _k, _v in _learner.target.params.items()}

    _rng = np.random.default_rng(0)
    for _ in range(4):
        _learner.replay.add(_rng.integers(256, size=(4, 8, 8)), 1, 1.0, _rng.integers(256, size=(4, 8, 8)), False)

    for _tick in range(2):
        _learner.learn(lambda _raw: _raw / 255.0)
        _learner.tick()
    assert _learner.n_syncs == 0
    for _k, _v in _learner.target.params.items():
        np.testing.assert_array_equal(_v, _frozen[_k])
    assert not np.array_equal(_learner.online.params["out.b"], _frozen["out.b"])

    _learner.tick()
    assert (_learner.n_syncs, _learner.steps_since_sync) == (1, 0)
    for _k, _v in _learner.target.params.items():
        np.testing.assert_array_equal(_v, _learner.online.params[_k])

    _other = _learner.online.copy()
    _other.params["out.b"] = _other.params["out.b"] + 1.0
    sync_target(_learner.online, _other)
    np.testing.assert_array_equal(_other.params["out.b"], _learner.online.params["out.b"])

    logger.success("Done: target sync.\n")


def test_value_iteration_chain():
    logger.info("Testing 'value_iteration' on the chain MDP...")

    _q, _v = value_iteration(*_chain_mdp(), gamma=0.9)
    np.testing.assert_allclose(_q[1], [0.81, 0.9, 1.0], atol=1e-10)
    np.testing.assert_allclose(_q[0], [0.81, 0.81, 0.9], atol=1e-10)
    np.testing.assert_allclose(_q[2], [0.0, 0.0, 0.0])
    np.testing.assert_allclose(_v, [0.9, 1.0, 0.0], atol=1e-10)

    with pytest.raises(UsageError):
        value_iteration(*_chain_mdp(), gamma=1.0)

    logger.success("Done: 'value_iteration' chain.\n")


def test_learned_q_matches_value_iteration():
    logger.info("Testing DDQN on the chain MDP against value iteration...")

    _next, _rewards, _terminal = _chain_mdp()
    _q_star, _ = value_iteration(_next, _rewards, _terminal, gamma=0.9)

    _eye = np.eye(3).reshape(3, 1, 1, 3)
    _s, _a = np.divmod(np.arange(9), 3)
    _batch = Transition(
        s=_eye[_s],
        a=_a,
        r=_rewards[_s, _a],
        s_next=_eye[_next[_s, _a]],
        done=_terminal[_s, _a],
    )

    _online = TeacherNetwork((1, 1, 3), conv_layers=(), hidden=32, seed=3)
    _target = _online.copy()
    _optimizer = RMSProp(lr=0.001, decay=0.95, eps=1e-4, centered=False)
    for _step in range(1, 10_001):
        td_step(_batch, _online, _target, 0.9, _optimizer)
        if _step % 100 == 0:
            sync_target(_online, _target)

    np.testing.assert_allclose(_online.predict(_eye[:, :, :, :]), _q_star, atol=0.05)

    logger.success("Done: DDQN matches value iteration.\n")


def test_teacher_checkpoint_round_trip(tmp_path):
    logger.info("Testing teacher checkpoint round trip...")

    _net = TeacherNetwork((4, 24, 24), seed=5)
    _path = save_teacher(_net, str(tmp_path / "teacher.ckpt"), meta={"game": "catch"})
    _loaded, _meta = load_teacher(_path)
    assert _meta["game"] == "catch"
    assert _loaded.conv_layers == _net.conv_layers
    _x = np.random.default_rng(0).random((3, 4, 24, 24))
    np.testing.assert_array_equal(_loaded.predict(_x), _net.predict(_x))

    logger.success("Done: teacher checkpoint round trip.\n")


def test_train_teacher_smoke(tmp_path):
    logger.info("Testing a short teacher run...")

    _config = TeacherPM(total_steps=60, warmup=20, batch_size=8, replay_capacity=100, eval_every=30, eval_episodes=2)
    _result = train_teacher(CatchEnv(grid=12), _config, seed=0, run_dir=str(tmp_path))

    assert len(_result.episode_returns) == 5
    assert [_step for _step, _ in _result.eval_returns] == [30, 60]
    assert (tmp_path / "metrics.csv").read_text().splitlines()[0] == "step,episode_return,loss,epsilon"
    assert (tmp_path / "eval.csv").is_file()
    assert load_teacher(_result.checkpoint_path)[1]["game"] == "catch"

    logger.success("Done: short teacher run.\n")


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_teacher_learns_catch(tmp_path, seed: int):
    logger.info(f"Testing desk teacher reaches the Catch oracle (seed {seed})...")

    _env = CatchEnv(grid=12)
    _result = train_teacher(_env, TeacherPM(eval_every=0), seed=seed, run_dir=str(tmp_path))
    _eval = evaluate_agent(teacher_agent(_result.network), "catch", _env.params, n_episodes=100, seed=50_000)
    assert _eval.mean_return >= 0.95

    logger.success(f"Done: Catch teacher (seed {seed}).\n")
