# -*- coding: utf-8 -*-
"""Full-precision Double DQN teacher.

Conv + ReLU network with a dense ReLU layer and a linear Q head, centred RMSProp,
uniform replay memory, epsilon-greedy exploration and a hard-synced target network.
"""

import os
import copy
from dataclasses import dataclass
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from loguru import logger

from ._consts import NUM_ACTIONS, TeacherArchEnum
from ._utils import MetricsWriter
from .agents import evaluate_agent, teacher_agent
from .checkpoint import load_checkpoint, save_checkpoint
from .envs import PixelEnv
from .exceptions import CorruptFileError, ShapeError, UsageError
from .observation import FrameStack, preprocess_stack
from .schemas import TeacherPM
from .tensor_core import Tensor, argmax_tiebreak, check_finite, conv2d, conv2d_backward, conv_output_size


## (filters, kernel, stride) per conv layer, then the dense width
TEACHER_ARCHS: Dict[str, Tuple[Tuple[Tuple[int, int, int], ...], int]] = {
    TeacherArchEnum.DESK.value: (((16, 4, 2), (32, 3, 2)), 128),
    TeacherArchEnum.ATARI.value: (((32, 8, 4), (64, 4, 2), (64, 3, 1)), 512),
}

TEACHER_CHECKPOINT_KIND = "teacher"


class QFunction(Protocol):
    def predict(self, batch) -> Tensor: ...


class TeacherNetwork:
    """Full-precision Q network.

    Attributes:
        input_shape (tuple): Observation [C, H, W].
        actions     (int  ): Output width.
        conv_layers (tuple): (filters, kernel, stride) per conv layer.
        hidden      (int  ): Dense ReLU width.
        params      (dict ): 'conv{i}.w', 'conv{i}.b', 'dense.w', 'dense.b', 'out.w', 'out.b'.
    """

    def __init__(
        self,
        input_shape: Sequence[int],
        actions: int = NUM_ACTIONS,
        conv_layers: Sequence[Tuple[int, int, int]] = TEACHER_ARCHS["desk"][0],
        hidden: int = TEACHER_ARCHS["desk"][1],
        seed: int = 0,
    ):
        self.input_shape = tuple(int(_d) for _d in input_shape)
        self.actions = int(actions)
        self.conv_layers = tuple(tuple(int(_v) for _v in _layer) for _layer in conv_layers)
        self.hidden = int(hidden)

        _rng = np.random.default_rng(seed)
        self.params: Dict[str, Tensor] = {}
        _c, _h, _w = self.input_shape
        for _idx, (_filters, _kernel, _stride) in enumerate(self.conv_layers):
            _fan_in = _c * _kernel * _kernel
            _bound = 1.0 / np.sqrt(_fan_in)
            self.params[f"conv{_idx}.w"] = _rng.uniform(-_bound, _bound, size=(_filters, _c, _kernel, _kernel))
            self.params[f"conv{_idx}.b"] = _rng.uniform(-_bound, _bound, size=_filters)
            _h = conv_output_size(_h, _kernel, _stride, 0)
            _w = conv_output_size(_w, _kernel, _stride, 0)
            _c = _filters

        self.flat_features = _c * _h * _w
        for _name, _n_in, _n_out in (("dense", self.flat_features, self.hidden), ("out", self.hidden, self.actions)):
            _bound = 1.0 / np.sqrt(_n_in)
            self.params[f"{_name}.w"] = _rng.uniform(-_bound, _bound, size=(_n_in, _n_out))
            self.params[f"{_name}.b"] = _rng.uniform(-_bound, _bound, size=_n_out)

    @classmethod
    def from_arch(
        cls,
        arch: TeacherArchEnum,
        input_shape: Sequence[int],
        actions: int = NUM_ACTIONS,
        hidden: Optional[int] = None,
        seed: int = 0,
    ) -> "TeacherNetwork":
        _convs, _hidden = TEACHER_ARCHS[TeacherArchEnum(arch).value]
        return cls(input_shape, actions=actions, conv_layers=_convs, hidden=hidden or _hidden, seed=seed)

    def _as_batch(self, batch) -> Tuple[Tensor, bool]:
        _x = np.asarray(batch, dtype=np.float64)
        _single = _x.shape == self.input_shape
        if _single:
            _x = _x[np.newaxis]
        if _x.shape[1:] != self.input_shape:
            raise ShapeError("Teacher input does not match its input_shape", _x.shape, self.input_shape)

        return _x, _single

    def forward(self, batch) -> Tuple[Tensor, dict]:
        _x, _ = self._as_batch(batch)
        _cache = {"inputs": [], "pre": []}
        for _idx, (_, _, _stride) in enumerate(self.conv_layers):
            _z = conv2d(_x, self.params[f"conv{_idx}.w"], stride=_stride)
            _z = _z + self.params[f"conv{_idx}.b"][np.newaxis, :, np.newaxis, np.newaxis]
            _cache["inputs"].append(_x)
            _cache["pre"].append(_z)
            _x = np.maximum(_z, 0.0)

        _flat = _x.reshape(_x.shape[0], -1)
        _z = _flat @ self.params["dense.w"] + self.params["dense.b"]
        _a = np.maximum(_z, 0.0)
        _q = _a @ self.params["out.w"] + self.params["out.b"]
        _cache.update(flat=_flat, dense_pre=_z, dense_out=_a, conv_shape=_x.shape)
        return check_finite(_q, name="teacher q-values"), _cache

    def predict(self, batch) -> Tensor:
        _x, _single = self._as_batch(batch)
        _q, _ = self.forward(_x)
        return _q[0] if _single else _q

    def backward(self, cache: dict, dq: Tensor) -> Dict[str, Tensor]:
        """Gradients of sum(dq * q) with respect to every parameter."""

        _grads: Dict[str, Tensor] = {}
        _grads["out.w"] = cache["dense_out"].T @ dq
        _grads["out.b"] = dq.sum(axis=0)
        _da = (dq @ self.params["out.w"].T) * (cache["dense_pre"] > 0)
        _grads["dense.w"] = cache["flat"].T @ _da
        _grads["dense.b"] = _da.sum(axis=0)
        _dx = (_da @ self.params["dense.w"].T).reshape(cache["conv_shape"])

        for _idx in range(len(self.conv_layers) - 1, -1, -1):
            _stride = self.conv_layers[_idx][2]
            _dz = _dx * (cache["pre"][_idx] > 0)
            _grads[f"conv{_idx}.b"] = _dz.sum(axis=(0, 2, 3))
            _dx, _grads[f"conv{_idx}.w"] = conv2d_backward(
                cache["inputs"][_idx],
                self.params[f"conv{_idx}.w"],
                _dz,
                stride=_stride,
                need_input_grad=(0 < _idx),
            )

        return _grads

    def copy(self) -> "TeacherNetwork":
        return copy.deepcopy(self)

    def load_params(self, params: Dict[str, Tensor]):
        for _name, _value in params.items():
            if self.params[_name].shape != np.shape(_value):
                raise ShapeError(f"Parameter '{_name}' has the wrong shape", np.shape(_value), self.params[_name].shape)
            self.params[_name] = np.array(_value, dtype=np.float64)


def save_teacher(net: TeacherNetwork, file_path: str, meta: Optional[dict] = None) -> str:
    _meta = dict(meta or {})
    _meta.update(
        input_shape=list(net.input_shape),
        actions=net.actions,
        conv_layers=[list(_layer) for _layer in net.conv_layers],
        hidden=net.hidden,
    )
    return save_checkpoint(file_path, TEACHER_CHECKPOINT_KIND, net.params, meta=_meta)


def load_teacher(file_path: str) -> Tuple[TeacherNetwork, dict]:
    _meta, _arrays = load_checkpoint(file_path, expected_kind=TEACHER_CHECKPOINT_KIND)
    try:
        _net = TeacherNetwork(
            _meta["input_shape"],
            actions=_meta["actions"],
            conv_layers=_meta["conv_layers"],
            hidden=_meta["hidden"],
        )
        _net.load_params(_arrays)
    except (KeyError, TypeError, ValueError) as err:
        logger.critical(f"Failed to restore teacher from '{file_path}' checkpoint file.")
        raise CorruptFileError(f"Teacher checkpoint '{file_path}' is malformed: {err!r}") from err
    return _net, _meta


class RMSProp:
    """Centred RMSProp as used for DQN.

    g_avg <- d*g_avg + (1-d)*g;  sq_avg <- d*sq_avg + (1-d)*g^2;
    p <- p - lr * g / sqrt(sq_avg - g_avg^2 + eps)
    """

    def __init__(self, lr: float = 0.00025, decay: float = 0.95, eps: float = 1e-6, centered: bool = True):
        if lr <= 0:
            raise UsageError(f"`lr` argument value {lr} is invalid, must be > 0!")
        if not (0.0 <= decay < 1.0):
            raise UsageError(f"`decay` argument value {decay} is invalid, must be in [0, 1)!")

        self.lr = lr
        self.decay = decay
        self.eps = eps
        self.centered = centered
        self.grad_avg: Dict[str, Tensor] = {}
        self.sq_avg: Dict[str, Tensor] = {}

    def step(self, params: Dict[str, Tensor], grads: Dict[str, Tensor]):
        for _name, _grad in grads.items():
            if _name not in self.sq_avg:
                self.sq_avg[_name] = np.zeros_like(_grad)
                self.grad_avg[_name] = np.zeros_like(_grad)

            self.sq_avg[_name] = self.decay * self.sq_avg[_name] + (1.0 - self.decay) * _grad * _grad
            _var = self.sq_avg[_name]
            if self.centered:
                self.grad_avg[_name] = self.decay * self.grad_avg[_name] + (1.0 - self.decay) * _grad
                _var = _var - self.grad_avg[_name] ** 2

            params[_name] = params[_name] - self.lr * _grad / np.sqrt(np.maximum(_var, 0.0) + self.eps)


@dataclass
class Transition:
    """A batch (or single) of (s, a, r, s', done) with network-ready states."""

    s: Tensor
    a: Tensor
    r: Tensor
    s_next: Tensor
    done: Tensor


class ReplayBuffer:
    """Ring buffer of transitions with uniform sampling from the filled region.

    States are stored in their raw dtype (uint8 frame stacks for the games).
    """

    def __init__(self, capacity: int, obs_shape: Sequence[int], dtype=np.uint8, actions: int = NUM_ACTIONS):
        if capacity < 1:
            raise UsageError(f"`capacity` argument value {capacity} is invalid, must be >= 1!")

        self.capacity = capacity
        self.obs_shape = tuple(obs_shape)
        self.actions = actions
        self.states = np.zeros((capacity, *self.obs_shape), dtype=dtype)
        self.next_states = np.zeros((capacity, *self.obs_shape), dtype=dtype)
        self.action_ids = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float64)
        self.dones = np.zeros(capacity, dtype=bool)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, s, a: int, r: float, s_next, done: bool):
        if not (0 <= int(a) < self.actions):
            raise UsageError(f"`a` argument value {a} is invalid, must be in [0, {self.actions})!")
        if not np.isfinite(r):
            raise UsageError(f"`r` argument value {r} is invalid, must be finite!")

        self.states[self.cursor] = s
        self.next_states[self.cursor] = s_next
        self.action_ids[self.cursor] = int(a)
        self.rewards[self.cursor] = float(r)
        self.dones[self.cursor] = bool(done)
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise UsageError("Can't sample from an empty replay buffer!")

        return rng.integers(self.size, size=batch_size)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Transition:
        _idx = self.sample_indices(batch_size, rng)
        return Transition(
            s=self.states[_idx],
            a=self.action_ids[_idx],
            r=self.rewards[_idx],
            s_next=self.next_states[_idx],
            done=self.dones[_idx],
        )


def epsilon_schedule(step: int, start: float = 1.0, end: float = 0.1, anneal_steps: int = 20_000) -> float:
    """Linear decay from `start` to `end` over `anneal_steps`, then constant."""

    if step < 0:
        raise UsageError(f"`step` argument value {step} is invalid, must be >= 0!")
    if anneal_steps <= step:
        return end

    return start + (end - start) * (step / anneal_steps)


def ddqn_target(r, s_next, done, online_net: QFunction, target_net: QFunction, gamma: float):
    """r if done, else r + gamma * Q_target(s', argmax_a Q_online(s', a)).

    Works on a single transition or a batch; the online network selects the
    action (lowest index on ties) and the target network evaluates it.
    """

    if not (0.0 <= gamma <= 1.0):
        raise UsageError(f"`gamma` argument value {gamma} is invalid, must be in [0, 1]!")

    _r = np.asarray(r, dtype=np.float64)
    _done = np.asarray(done, dtype=bool)
    _single = _r.ndim == 0
    _s_next = np.asarray(s_next)[np.newaxis] if _single else np.asarray(s_next)

    _best = np.atleast_1d(argmax_tiebreak(np.atleast_2d(online_net.predict(_s_next)), axis=1))
    _q_target = np.atleast_2d(target_net.predict(_s_next))[np.arange(_best.size), _best]
    _y = np.where(np.atleast_1d(_done), np.atleast_1d(_r), np.atleast_1d(_r) + gamma * _q_target)
    return float(_y[0]) if _single else _y


def td_loss_and_grads(
    batch: Transition, online: TeacherNetwork, target: QFunction, gamma: float
) -> Tuple[float, Dict[str, Tensor]]:
    """Batch-mean squared TD error; the gradient flows only through Q_online(s, a)."""

    _y = ddqn_target(batch.r, batch.s_next, batch.done, online, target, gamma)
    _q, _cache = online.forward(batch.s)
    _rows = np.arange(_q.shape[0])
    _a = np.asarray(batch.a, dtype=np.int64)
    _err = _q[_rows, _a] - _y
    _loss = float(np.mean(_err * _err))

    _dq = np.zeros_like(_q)
    _dq[_rows, _a] = 2.0 * _err / _q.shape[0]
    return _loss, online.backward(_cache, _dq)


def td_step(batch: Transition, online: TeacherNetwork, target: QFunction, gamma: float, optimizer: RMSProp) -> float:
    _loss, _grads = td_loss_and_grads(batch, online, target, gamma)
    optimizer.step(online.params, _grads)
    return _loss


def sync_target(online: TeacherNetwork, target: TeacherNetwork):
    """Hard copy of the online parameters into the target network."""

    target.load_params({_name: _value.copy() for _name, _value in online.params.items()})


class DDQNLearner:
    """Online/target pair with its optimizer, replay memory and sync counter."""

    def __init__(self, online: TeacherNetwork, config: TeacherPM, replay_shape: Sequence[int], seed: int = 0):
        self.online = online
        self.target = online.copy()
        self.config = config
        self.optimizer = RMSProp(lr=config.lr, decay=config.rms_decay, eps=config.rms_eps)
        self.replay = ReplayBuffer(config.replay_capacity, replay_shape, actions=online.actions)
        self.rng = np.random.default_rng(seed)
        self.steps_since_sync = 0
        self.n_syncs = 0

    def act(self, obs: Tensor, epsilon: float) -> int:
        if self.rng.random() < epsilon:
            return int(self.rng.integers(self.online.actions))

        return argmax_tiebreak(self.online.predict(obs))

    def learn(self, to_obs) -> float:
        _raw = self.replay.sample(self.config.batch_size, self.rng)
        _batch = Transition(s=to_obs(_raw.s), a=_raw.a, r=_raw.r, s_next=to_obs(_raw.s_next), done=_raw.done)
        return td_step(_batch, self.online, self.target, self.config.gamma, self.optimizer)

    def tick(self):
        self.steps_since_sync += 1
        if self.config.target_sync_steps <= self.steps_since_sync:
            sync_target(self.online, self.target)
            self.steps_since_sync = 0
            self.n_syncs += 1


@dataclass
class TeacherRunResult:
    network: TeacherNetwork
    episode_returns: List[float]
    eval_returns: List[Tuple[int, float]]
    metrics_path: Optional[str] = None
    checkpoint_path: Optional[str] = None


def observation_shape(env: PixelEnv, target_shape: Optional[Tuple[int, int]] = None) -> Tuple[int, int, int]:
    _h, _w = target_shape or env.frame_shape
    return (4, int(_h), int(_w))


def train_teacher(
    env: PixelEnv,
    config: TeacherPM,
    seed: int = 0,
    run_dir: Optional[str] = None,
    target_shape: Optional[Tuple[int, int]] = None,
    eval_seed: int = 10_000,
) -> TeacherRunResult:
    """Train a DDQN teacher on one game.

    Writes 'metrics.csv' (step, episode_return, loss, epsilon) once per finished
    episode, 'eval.csv' (step, mean_return) after each periodic greedy evaluation
    and 'teacher.ckpt' when `run_dir` is given.
    """

    def _to_obs(raw):
        return preprocess_stack(raw, target_shape)

    _obs_shape = observation_shape(env, target_shape)
    _net = TeacherNetwork.from_arch(config.arch, _obs_shape, hidden=config.hidden, seed=seed)
    _learner = DDQNLearner(_net, config, replay_shape=(4, *env.frame_shape), seed=seed + 1)

    _metrics = _evals = None
    if run_dir:
        _metrics = MetricsWriter(os.path.join(run_dir, "metrics.csv"), ["step", "episode_return", "loss", "epsilon"])
        _evals = MetricsWriter(os.path.join(run_dir, "eval.csv"), ["step", "mean_return"])

    _returns: List[float] = []
    _eval_returns: List[Tuple[int, float]] = []
    _stack = FrameStack()
    _raw = _stack.reset(env.reset(seed=seed).frame)
    _episode_return = 0.0
    _losses: List[float] = []

    logger.info(f"Training '{config.arch.value}' teacher on '{env.name}' for {config.total_steps} steps (seed {seed}).")
    try:
        for _step in range(1, config.total_steps + 1):
            _epsilon = epsilon_schedule(_step - 1, config.eps_start, config.eps_end, config.eps_anneal_steps)
            _action = _learner.act(_to_obs(_raw), _epsilon)
            _state = env.step(_action)
            _raw_next = _stack.push(_state.frame)
            _learner.replay.add(_raw, _action, _state.reward, _raw_next, _state.terminal)
            _episode_return += _state.reward
            _raw = _raw_next

            if config.warmup <= len(_learner.replay) and config.batch_size <= len(_learner.replay):
                _losses.append(_learner.learn(_to_obs))
            _learner.tick()

            if _state.terminal:
                _returns.append(_episode_return)
                if _metrics:
                    _metrics.write(
                        step=_step,
                        episode_return=_episode_return,
                        loss=float(np.mean(_losses)) if _losses else None,
                        epsilon=_epsilon,
                    )
                _episode_return = 0.0
                _losses = []
                _raw = _stack.reset(env.reset().frame)

            if config.eval_every and (_step % config.eval_every == 0):
                _agent = teacher_agent(_learner.online, target_shape)
                _mean = evaluate_agent(_agent, env.name, env.params, config.eval_episodes, seed=eval_seed).mean_return
                _eval_returns.append((_step, _mean))
                logger.info(f"Step {_step}: greedy mean return {_mean:.3f}, epsilon {_epsilon:.3f}.")
                if _evals:
                    _evals.write(step=_step, mean_return=_mean)

            if run_dir and config.checkpoint_every and (_step % config.checkpoint_every == 0):
                save_teacher(_learner.online, os.path.join(run_dir, "checkpoints", f"teacher-{_step:08d}.ckpt"))
    finally:
        for _writer in (_metrics, _evals):
            if _writer:
                _writer.close()

    _checkpoint = None
    if run_dir:
        _checkpoint = save_teacher(
            _learner.online,
            os.path.join(run_dir, "teacher.ckpt"),
            meta={"game": env.name, "env_params": env.params, "target_shape": list(target_shape) if target_shape else None},
        )

    logger.success(f"Finished teacher training on '{env.name}': {len(_returns)} episodes, {_learner.n_syncs} target syncs.")
    return TeacherRunResult(
        network=_learner.online,
        episode_returns=_returns,
        eval_returns=_eval_returns,
        metrics_path=_metrics.file_path if _metrics else None,
        checkpoint_path=_checkpoint,
    )


def value_iteration(
    next_state: np.ndarray, rewards: np.ndarray, terminal: np.ndarray, gamma: float, tol: float = 1e-12
) -> Tuple[np.ndarray, np.ndarray]:
    """Q and V of a deterministic finite MDP.

    Q(s, a) = R(s, a) + gamma * V(next(s, a)) for non-terminal moves, V(s) = max_a Q(s, a).

    Args:
        next_state (np.ndarray, required): [S, A] successor state index.
        rewards    (np.ndarray, required): [S, A] reward.
        terminal   (np.ndarray, required): [S, A] whether the move ends the episode.
        gamma      (float,      required): Discount in [0, 1).

    Returns:
        Tuple[np.ndarray, np.ndarray]: (Q [S, A], V [S]).
    """

    if not (0.0 <= gamma < 1.0):
        raise UsageError(f"`gamma` argument value {gamma} is invalid, must be in [0, 1)!")

    _v = np.zeros(next_state.shape[0])
    while True:
        _q = rewards + gamma * np.where(terminal, 0.0, _v[next_state])
        _v_new = _q.max(axis=1)
        if np.max(np.abs(_v_new - _v)) < tol:
            return _q, _v_new
        _v = _v_new


__all__ = [
    "TEACHER_ARCHS",
    "QFunction",
    "TeacherNetwork",
    "save_teacher",
    "load_teacher",
    "RMSProp",
    "Transition",
    "ReplayBuffer",
    "epsilon_schedule",
    "ddqn_target",
    "td_loss_and_grads",
    "td_step",
    "sync_target",
    "DDQNLearner",
    "TeacherRunResult",
    "observation_shape",
    "train_teacher",
    "value_iteration",
]
