# -*- coding: utf-8 -*-
"""Policy distillation from full-precision teachers into constrained students.

Teachers play epsilon-greedy and fill a `DistillBuffer` with transduced states and
their Q vectors; students are trained on sampled batches with one of three losses
(MSE on Q values, NLL on the teacher's greedy action, tempered KL) and evaluated
against the teacher on the same episode seeds.
"""

import os
import struct
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from ._consts import LossKindEnum
from ._utils import MetricsWriter, create_dir, read_metrics
from .agents import GreedyAgent, deployed_agent, evaluate_agent, student_agent, teacher_agent
from .deploy import DeployedNetwork, deploy, save_deployed
from .envs import PixelEnv, make_env
from .exceptions import CorruptFileError, MissingInputError, ShapeError, UsageError
from .lowprec import StudentNetwork, save_student
from .netspec import DESK_TIERS, CHIP_SPECS, NetworkSpec, desk_spec
from .observation import FrameStack, pack_bits, preprocess_stack, transduce, unpack_bits
from .schemas import ExperimentConfigPM, StudentPM
from .tensor_core import Tensor, argmax_tiebreak, log_softmax, softmax


## Losses ##
def _as_2d(*arrays) -> Tuple[np.ndarray, ...]:
    _out = tuple(np.atleast_2d(np.asarray(_a, dtype=np.float64)) for _a in arrays)
    if len({_a.shape for _a in _out}) != 1:
        raise ShapeError("Loss inputs must have equal shapes", *(_a.shape for _a in _out))

    return _out


def loss_mse(q_T, q_S) -> Tuple[float, Tensor]:
    """sum ||q_T - q_S||^2 over the batch; gradient 2 (q_S - q_T)."""

    _t, _s = _as_2d(q_T, q_S)
    _diff = _s - _t
    _grad = 2.0 * _diff
    return float(np.sum(_diff * _diff)), _grad.reshape(np.shape(q_S))


def loss_nll(q_T, logits_S) -> Tuple[float, Tensor]:
    """-log softmax(logits_S)[argmax q_T], batch-summed; ties go to the lowest action."""

    _t, _s = _as_2d(q_T, logits_S)
    _labels = argmax_tiebreak(_t, axis=1)
    _rows = np.arange(_s.shape[0])
    _loss = -float(np.sum(log_softmax(_s, axis=1)[_rows, _labels]))
    _grad = softmax(_s, axis=1)
    _grad[_rows, _labels] -= 1.0
    return _loss, _grad.reshape(np.shape(logits_S))


def loss_kl(q_T, logits_S, tau: float) -> Tuple[float, Tensor]:
    """sum_a p_a ln(p_a / s_a), p = softmax(q_T / tau), s = softmax(logits_S); gradient s - p.

    Only the teacher side is tempered.

    Raises:
        UsageError: tau <= 0.
    """

    if not (0.0 < tau):
        raise UsageError(f"`tau` argument value {tau} is invalid, must be > 0!")

    _t, _s = _as_2d(q_T, logits_S)
    _log_p = log_softmax(_t / tau, axis=1)
    _p = np.exp(_log_p)
    _log_s = log_softmax(_s, axis=1)
    _terms = np.where(_p > 0.0, _p * (_log_p - _log_s), 0.0)
    _grad = np.exp(_log_s) - _p
    return float(np.sum(_terms)), _grad.reshape(np.shape(logits_S))


def distill_loss(kind: Union[str, LossKindEnum], q_T, q_S, tau: float = 0.01) -> Tuple[float, Tensor]:
    _kind = LossKindEnum(kind)
    if _kind == LossKindEnum.MSE:
        return loss_mse(q_T, q_S)
    if _kind == LossKindEnum.NLL:
        return loss_nll(q_T, q_S)

    return loss_kl(q_T, q_S, tau)


## Buffers ##
class DistillBuffer:
    """Ring buffer of (transduced state, teacher label) samples.

    States are stored bit-packed; raw uint8 frame stacks and the teacher's actions
    are kept alongside when available. Labels are Q vectors, or one-hot vectors of
    the teacher's greedy action after `to_one_hot`.

    Attributes:
        games (List[str]): Game names; `game_ids` index into this list.
    """

    def __init__(
        self,
        capacity: int,
        state_shape: Sequence[int],
        actions: int = 3,
        raw_shape: Optional[Sequence[int]] = None,
        games: Sequence[str] = ("catch",),
        one_hot: bool = False,
    ):
        if capacity < 1:
            raise UsageError(f"`capacity` argument value {capacity} is invalid, must be >= 1!")

        self.capacity = capacity
        self.state_shape = tuple(int(_d) for _d in state_shape)
        self.actions = actions
        self.games = [str(_g) for _g in games]
        self.one_hot = one_hot
        _bytes = -(-int(np.prod(self.state_shape)) // 8)
        self.packed = np.zeros((capacity, _bytes), dtype=np.uint8)
        self.labels = np.zeros((capacity, actions), dtype=np.float64)
        self.game_ids = np.zeros(capacity, dtype=np.int64)
        self.action_ids = np.zeros(capacity, dtype=np.int64)
        self.raw = None if raw_shape is None else np.zeros((capacity, *raw_shape), dtype=np.uint8)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, state_bits, label, raw=None, action: Optional[int] = None, game_id: int = 0):
        _label = np.asarray(label, dtype=np.float64)
        if _label.shape != (self.actions,):
            raise ShapeError("Label length must equal the action count", _label.shape, (self.actions,))
        _bits = np.asarray(state_bits, dtype=np.uint8)
        if _bits.shape != self.state_shape:
            raise ShapeError("State does not match the buffer's state shape", _bits.shape, self.state_shape)

        self.packed[self.cursor] = pack_bits(_bits[np.newaxis])[0]
        self.labels[self.cursor] = _label
        self.game_ids[self.cursor] = game_id
        self.action_ids[self.cursor] = -1 if action is None else int(action)
        if (self.raw is not None) and (raw is not None):
            self.raw[self.cursor] = raw
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def states(self, indices) -> np.ndarray:
        return unpack_bits(self.packed[indices], self.state_shape)

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise UsageError("Can't sample from an empty distillation buffer!")

        return rng.integers(self.size, size=batch_size)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        _idx = self.sample_indices(batch_size, rng)
        return self.states(_idx), self.labels[_idx], self.game_ids[_idx]

    @classmethod
    def from_arrays(
        cls,
        packed: np.ndarray,
        labels: np.ndarray,
        game_ids: np.ndarray,
        state_shape: Sequence[int],
        games: Sequence[str],
        one_hot: bool,
        action_ids: Optional[np.ndarray] = None,
        raw: Optional[np.ndarray] = None,
    ) -> "DistillBuffer":
        _n, _actions = labels.shape
        _buffer = cls(
            max(_n, 1),
            state_shape,
            actions=_actions,
            raw_shape=None if raw is None else raw.shape[1:],
            games=games,
            one_hot=one_hot,
        )
        _buffer.packed[:_n] = packed
        _buffer.labels[:_n] = labels
        _buffer.game_ids[:_n] = game_ids
        _buffer.action_ids[:_n] = -1 if action_ids is None else action_ids
        if raw is not None:
            _buffer.raw[:_n] = raw
        _buffer.size = _n
        _buffer.cursor = _n % _buffer.capacity
        return _buffer

    def _ordered(self) -> np.ndarray:
        """Indices of stored samples, oldest first."""

        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.size) + self.cursor) % self.capacity

    def to_one_hot(self) -> "DistillBuffer":
        """Frozen copy whose labels are one-hot greedy teacher actions."""

        _idx = self._ordered()
        _labels = np.zeros((_idx.size, self.actions), dtype=np.float64)
        if _idx.size:
            _labels[np.arange(_idx.size), argmax_tiebreak(self.labels[_idx], axis=1)] = 1.0

        return DistillBuffer.from_arrays(
            self.packed[_idx],
            _labels,
            self.game_ids[_idx],
            self.state_shape,
            self.games,
            one_hot=True,
            action_ids=self.action_ids[_idx],
            raw=None if self.raw is None else self.raw[_idx],
        )


def merge_multigame(buffers: Sequence[DistillBuffer], seed: int = 0) -> DistillBuffer:
    """Concatenate per-game datasets and shuffle them with a seeded permutation.

    Game ids are remapped onto the merged `games` list and kept for evaluation.

    Raises:
        UsageError: Empty input, or buffers that differ in action count, state shape or label kind.
    """

    if not buffers:
        raise UsageError("`buffers` argument must hold at least one dataset!")

    _first = buffers[0]
    for _buf in buffers[1:]:
        if _buf.actions != _first.actions:
            raise UsageError(f"Can't merge datasets with {_buf.actions} and {_first.actions} actions!")
        if _buf.state_shape != _first.state_shape:
            raise UsageError(f"Can't merge datasets with state shapes {_buf.state_shape} and {_first.state_shape}!")
        if _buf.one_hot != _first.one_hot:
            raise UsageError("Can't merge one-hot datasets with Q-value datasets!")

    _games: List[str] = []
    _packed, _labels, _ids, _actions = [], [], [], []
    for _buf in buffers:
        _remap = []
        for _game in _buf.games:
            if _game not in _games:
                _games.append(_game)
            _remap.append(_games.index(_game))

        _idx = _buf._ordered()
        _packed.append(_buf.packed[_idx])
        _labels.append(_buf.labels[_idx])
        _ids.append(np.asarray(_remap, dtype=np.int64)[_buf.game_ids[_idx]])
        _actions.append(_buf.action_ids[_idx])

    _perm = np.random.default_rng(seed).permutation(sum(len(_b) for _b in buffers))
    return DistillBuffer.from_arrays(
        np.concatenate(_packed)[_perm],
        np.concatenate(_labels)[_perm],
        np.concatenate(_ids)[_perm],
        _first.state_shape,
        _games,
        one_hot=_first.one_hot,
        action_ids=np.concatenate(_actions)[_perm],
    )


## Dataset file ##
DATASET_MAGIC = b"TDS1"
DATASET_VERSION = 1
_DS_HEAD = struct.Struct("<4sHHIBH")


def dataset_to_bytes(buffer: DistillBuffer) -> bytes:
    """TDS1 layout.

    magic | version u16 | actions u16 | samples u32 | one-hot flag u8 | game count u16 |
    game names (u16 length + UTF-8 each) | state shape 3 x u16 | packed states |
    float64 labels [n, actions] | u16 game ids [n]. Little-endian throughout.
    """

    _idx = buffer._ordered()
    _out = bytearray(
        _DS_HEAD.pack(DATASET_MAGIC, DATASET_VERSION, buffer.actions, _idx.size, int(buffer.one_hot), len(buffer.games))
    )
    for _game in buffer.games:
        _name = _game.encode("utf-8")
        _out += struct.pack("<H", len(_name)) + _name

    _out += struct.pack("<3H", *buffer.state_shape)
    _out += buffer.packed[_idx].tobytes()
    _out += buffer.labels[_idx].astype("<f8").tobytes()
    _out += buffer.game_ids[_idx].astype("<u2").tobytes()
    return bytes(_out)


def dataset_from_bytes(data: bytes) -> DistillBuffer:
    try:
        _magic, _version, _actions, _n, _one_hot, _n_games = _DS_HEAD.unpack_from(data, 0)
        _offset = _DS_HEAD.size
        if _magic != DATASET_MAGIC:
            raise CorruptFileError(f"Dataset magic {_magic!r} is invalid, must be {DATASET_MAGIC!r}!")
        if _version != DATASET_VERSION:
            raise CorruptFileError(f"Dataset version {_version} is not supported, must be {DATASET_VERSION}!")

        _games = []
        for _ in range(_n_games):
            (_len,) = struct.unpack_from("<H", data, _offset)
            _offset += 2
            _games.append(data[_offset : _offset + _len].decode("utf-8"))
            _offset += _len

        _shape = struct.unpack_from("<3H", data, _offset)
        _offset += 6
        _row = -(-int(np.prod(_shape)) // 8)
        _sizes = (_n * _row, _n * _actions * 8, _n * 2)
        if _offset + sum(_sizes) != len(data):
            raise CorruptFileError("Dataset body size does not match its header!")

        _packed = np.frombuffer(data, dtype=np.uint8, count=_sizes[0], offset=_offset).reshape(_n, _row)
        _offset += _sizes[0]
        _labels = np.frombuffer(data, dtype="<f8", count=_n * _actions, offset=_offset).reshape(_n, _actions)
        _offset += _sizes[1]
        _ids = np.frombuffer(data, dtype="<u2", count=_n, offset=_offset).astype(np.int64)
    except (struct.error, UnicodeDecodeError, ValueError) as err:
        if isinstance(err, CorruptFileError):
            raise
        raise CorruptFileError(f"Dataset is malformed: {err}") from err

    return DistillBuffer.from_arrays(_packed, _labels.astype(np.float64), _ids, _shape, _games, one_hot=bool(_one_hot))


def save_dataset(buffer: DistillBuffer, file_path: str) -> str:
    create_dir(create_dir=os.path.dirname(os.path.abspath(file_path)))
    with open(file_path, "wb") as _file:
        _file.write(dataset_to_bytes(buffer))

    return file_path


def load_dataset(file_path: str) -> DistillBuffer:
    if not os.path.isfile(file_path):
        raise MissingInputError(f"Dataset file '{file_path}' not found!")

    with open(file_path, "rb") as _file:
        _data = _file.read()

    try:
        return dataset_from_bytes(_data)
    except CorruptFileError:
        logger.critical(f"Failed to load '{file_path}' dataset file.")
        raise


## Generation ##
class TeacherPlayer:
    """Epsilon-greedy teacher driving one environment, one frame per `step`."""

    def __init__(
        self,
        teacher,
        env: PixelEnv,
        epsilon: float = 0.05,
        levels: int = 4,
        target_shape: Optional[Tuple[int, int]] = None,
        seed: int = 0,
        game_id: int = 0,
    ):
        if not (0.0 <= epsilon <= 1.0):
            raise UsageError(f"`epsilon` argument value {epsilon} is invalid, must be in [0, 1]!")

        self.teacher = teacher
        self.env = env
        self.epsilon = epsilon
        self.levels = levels
        self.target_shape = target_shape
        self.game_id = game_id
        self.rng = np.random.default_rng(seed)
        self.stack = FrameStack()
        self.raw = self.stack.reset(env.reset(seed=seed).frame)
        self.n_frames = 0

    def step(self, buffer: DistillBuffer) -> int:
        _obs = preprocess_stack(self.raw, self.target_shape)
        _q = self.teacher.predict(_obs)
        _greedy = argmax_tiebreak(_q)
        _action = int(self.rng.integers(len(_q))) if self.rng.random() < self.epsilon else _greedy
        buffer.add(transduce(_obs, self.levels), _q, raw=self.raw, action=_action, game_id=self.game_id)

        _state = self.env.step(_action)
        self.raw = self.stack.reset(self.env.reset().frame) if _state.terminal else self.stack.push(_state.frame)
        self.n_frames += 1
        return _action


def student_input_shape(env: PixelEnv, levels: int, target_shape: Optional[Tuple[int, int]] = None) -> Tuple[int, int, int]:
    _h, _w = target_shape or env.frame_shape
    return (4 * levels, int(_h), int(_w))


def generate_buffer(
    teacher,
    env: PixelEnv,
    epsilon: float = 0.05,
    n_frames: int = 1_000,
    capacity: int = 100_000,
    levels: int = 4,
    target_shape: Optional[Tuple[int, int]] = None,
    seed: int = 0,
) -> DistillBuffer:
    """Let the teacher play `n_frames` frames and record every (state, q^T)."""

    _buffer = DistillBuffer(
        capacity,
        student_input_shape(env, levels, target_shape),
        actions=teacher.actions,
        raw_shape=(4, *env.frame_shape),
        games=(env.name,),
    )
    _player = TeacherPlayer(teacher, env, epsilon=epsilon, levels=levels, target_shape=target_shape, seed=seed)
    for _ in range(n_frames):
        _player.step(_buffer)

    logger.debug(f"Generated {n_frames} '{env.name}' frames, buffer holds {len(_buffer)} samples.")
    return _buffer


## Students ##
def resolve_spec(tier: str, input_shape: Sequence[int], actions: int = 3) -> NetworkSpec:
    """Desk tier sized for `input_shape`, or a chip layer table with the given input."""

    if tier in DESK_TIERS:
        return desk_spec(tier, input_shape=tuple(input_shape), actions=actions)
    if tier in CHIP_SPECS:
        _spec = CHIP_SPECS[tier]
        return NetworkSpec(tier=tier, layers=_spec.layers, input_shape=tuple(input_shape), actions=actions)

    raise UsageError(f"`tier` argument value '{tier}' is invalid, must be one of {list(DESK_TIERS) + list(CHIP_SPECS)}!")


class StudentTrainer:
    """SGD-momentum training of a `StudentNetwork` against teacher labels."""

    def __init__(
        self,
        spec: NetworkSpec,
        config: StudentPM,
        loss: Union[str, LossKindEnum] = LossKindEnum.KL,
        tau: float = 0.01,
        seed: int = 0,
        debug: bool = False,
    ):
        if LossKindEnum(loss) == LossKindEnum.KL and tau <= 0:
            raise UsageError(f"`tau` argument value {tau} is invalid, must be > 0!")

        self.config = config
        self.loss = LossKindEnum(loss)
        self.tau = tau
        self.net = StudentNetwork(
            spec,
            eta=config.eta,
            seed=seed,
            bn_momentum=config.bn_momentum,
            bn_eps=config.bn_eps,
            debug=debug,
        )
        self.n_batches = 0

    def train_batch(self, states: np.ndarray, labels: np.ndarray) -> float:
        """One SGD step on a batch; returns batch-mean loss plus sparsity penalty."""

        _q, _cache = self.net.forward_train(states)
        _loss, _dq = distill_loss(self.loss, labels, _q, self.tau)
        _n = _q.shape[0]
        _grads = self.net.backward_train(_cache, _dq / _n)
        self.net.sgd_momentum_step(
            _grads, lr=self.config.lr, momentum=self.config.momentum, float_lr=self.config.float_lr
        )
        self.n_batches += 1

        _total = _loss / _n + _cache.penalty
        if not np.isfinite(_total):
            raise FloatingPointError(f"Student loss became non-finite at batch {self.n_batches}!")
        return _total


@dataclass
class StudentRunResult:
    network: StudentNetwork
    losses: List[float] = field(default_factory=list)
    evals: List[Tuple[int, float, Optional[float]]] = field(default_factory=list)
    metrics_path: Optional[str] = None


def train_student(
    spec: NetworkSpec,
    buffer: DistillBuffer,
    config: StudentPM,
    loss: Union[str, LossKindEnum] = LossKindEnum.KL,
    tau: float = 0.01,
    n_batches: int = 1_000,
    batch_size: int = 32,
    seed: int = 0,
    run_dir: Optional[str] = None,
    feed: Optional[Callable[[], None]] = None,
    evaluator: Optional[Callable[[StudentNetwork], Tuple[float, Optional[float]]]] = None,
    eval_every: int = 0,
    log_every: int = 100,
    debug: bool = False,
) -> StudentRunResult:
    """Train a student on batches drawn uniformly from `buffer`.

    Args:
        feed      (callable, optional): Called before every batch; online mode generates frames here.
        evaluator (callable, optional): Returns (mean return, normalized percent or None) for a student.
        eval_every(int,      optional): Batches between evaluations; 0 evaluates only at the end.
        log_every (int,      optional): Batches averaged into one 'metrics.csv' row.

    Returns:
        StudentRunResult: Trained network, per-batch losses and evaluation rows.
    """

    _trainer = StudentTrainer(spec, config, loss=loss, tau=tau, seed=seed, debug=debug)
    _rng = np.random.default_rng(seed + 1)
    _result = StudentRunResult(network=_trainer.net)
    _metrics = None
    if run_dir:
        _metrics = MetricsWriter(os.path.join(run_dir, "metrics.csv"), ["batch", "loss", "eval_return", "normalized_pct"])
        _result.metrics_path = _metrics.file_path

    logger.info(
        f"Training '{spec.tier}' student with {LossKindEnum(loss).value} loss (tau {tau}) for {n_batches} batches."
    )
    _window: List[float] = []
    try:
        for _batch in range(1, n_batches + 1):
            if feed is not None:
                feed()
            _states, _labels, _ = buffer.sample(batch_size, _rng)
            _value = _trainer.train_batch(_states, _labels)
            _result.losses.append(_value)
            _window.append(_value)

            _eval = None
            if evaluator and ((eval_every and (_batch % eval_every == 0)) or (_batch == n_batches)):
                _eval = evaluator(_trainer.net)
                _result.evals.append((_batch, _eval[0], _eval[1]))
                logger.info(f"Batch {_batch}: student mean return {_eval[0]:.3f}, normalized {_eval[1]}.")

            if (_batch % log_every == 0) or (_batch == n_batches) or (_eval is not None):
                if _metrics:
                    _metrics.write(
                        batch=_batch,
                        loss=float(np.mean(_window)),
                        eval_return=None if _eval is None else _eval[0],
                        normalized_pct=None if _eval is None else _eval[1],
                    )
                _window = []
    finally:
        if _metrics:
            _metrics.close()

    if run_dir:
        save_student(_trainer.net, os.path.join(run_dir, "student.ckpt"))
    return _result


## Evaluation ##
@dataclass(frozen=True)
class NormalizedScore:
    """Student return as a percentage of the teacher's on the same episode seeds.

    `percent` is None when the teacher's mean return is <= 0; compare the raw means then.
    """

    student_mean: float
    teacher_mean: float
    percent: Optional[float]
    n_episodes: int

    def describe(self) -> str:
        if self.percent is None:
            return f"student {self.student_mean:.3f} vs teacher {self.teacher_mean:.3f} (raw returns)"
        return f"{self.percent:.2f}% of teacher ({self.student_mean:.3f} / {self.teacher_mean:.3f})"


def normalized_score(student_mean: float, teacher_mean: float, n_episodes: int) -> NormalizedScore:
    _percent = 100.0 * student_mean / teacher_mean if 0.0 < teacher_mean else None
    return NormalizedScore(student_mean=student_mean, teacher_mean=teacher_mean, percent=_percent, n_episodes=n_episodes)


def evaluate_normalized(
    student: GreedyAgent,
    teacher: Union[GreedyAgent, float],
    game: str,
    env_params: Dict,
    n_episodes: int = 100,
    seed: int = 10_000,
    workers: int = 1,
) -> NormalizedScore:
    """100 * mean student return / mean teacher return over episodes seeded seed, seed+1, ...

    `teacher` may be a precomputed teacher mean over the same seeds.

    Raises:
        UsageError: n_episodes < 1.
    """

    if n_episodes < 1:
        raise UsageError(f"`n_episodes` argument value {n_episodes} is invalid, must be >= 1!")

    _student = evaluate_agent(student, game, env_params, n_episodes, seed=seed, workers=workers).mean_return
    if isinstance(teacher, GreedyAgent):
        _teacher = evaluate_agent(teacher, game, env_params, n_episodes, seed=seed, workers=workers).mean_return
    else:
        _teacher = float(teacher)

    return normalized_score(_student, _teacher, n_episodes)


## Orchestration ##
@dataclass
class DistillRunResult:
    student: StudentNetwork
    deployed: DeployedNetwork
    score: Dict[str, NormalizedScore]
    run: StudentRunResult
    model_path: Optional[str] = None


def _calibration_states(buffer: DistillBuffer, n_states: int, seed: int) -> np.ndarray:
    _n = min(n_states, len(buffer))
    _idx = np.sort(np.random.default_rng(seed).choice(len(buffer), size=_n, replace=False))
    return buffer.states(_idx)


def _make_evaluator(
    config: ExperimentConfigPM,
    game: str,
    buffer: DistillBuffer,
    teacher_mean: float,
    seed: int,
    episodes: Optional[int] = None,
):
    _params = config.env.env_params(game)
    _target = config.env.target_shape
    _episodes = episodes or config.eval.episodes

    def _evaluate(net: StudentNetwork) -> Tuple[float, Optional[float]]:
        if config.distill.deployed_eval:
            _dn = deploy(
                net,
                calibration=_calibration_states(buffer, config.distill.calibration_states, seed),
                levels=config.env.levels,
                game=game,
            )
            _agent = deployed_agent(_dn, _target)
        else:
            _agent = student_agent(net, config.env.levels, _target)

        _mean = evaluate_agent(_agent, game, _params, _episodes, seed=config.eval.seed, workers=config.eval.workers).mean_return
        return _mean, normalized_score(_mean, teacher_mean, _episodes).percent

    return _evaluate


def teacher_mean_return(teacher, config: ExperimentConfigPM, game: str) -> float:
    _agent = teacher_agent(teacher, config.env.target_shape)
    return evaluate_agent(
        _agent, game, config.env.env_params(game), config.eval.episodes, seed=config.eval.seed, workers=config.eval.workers
    ).mean_return


def distill_game(
    config: ExperimentConfigPM,
    teacher,
    game: Optional[str] = None,
    loss: Optional[LossKindEnum] = None,
    tau: Optional[float] = None,
    tier: Optional[str] = None,
    seed: Optional[int] = None,
    run_dir: Optional[str] = None,
    debug: bool = False,
) -> DistillRunResult:
    """Online distillation on one game: the teacher generates frames and the
    student trains on one batch per `train_every` frames after the warm-up."""

    _game = game or config.env.name.value
    _seed = config.seed if seed is None else seed
    _loss = loss or config.distill.loss
    _tau = config.distill.tau if tau is None else tau
    _env = make_env(_game, seed=_seed, **config.env.env_params(_game))
    _spec = resolve_spec(
        tier or config.student.tier,
        student_input_shape(_env, config.env.levels, config.env.target_shape),
        actions=teacher.actions,
    )

    _buffer = DistillBuffer(
        config.distill.buffer_capacity,
        _spec.input_shape,
        actions=teacher.actions,
        raw_shape=(4, *_env.frame_shape),
        games=(_game,),
    )
    _player = TeacherPlayer(
        teacher, _env, epsilon=config.distill.epsilon, levels=config.env.levels, target_shape=config.env.target_shape, seed=_seed
    )
    for _ in range(max(config.distill.warmup_frames, 1)):
        _player.step(_buffer)

    def _feed():
        for _ in range(config.distill.train_every):
            _player.step(_buffer)

    _teacher_mean = teacher_mean_return(teacher, config, _game)
    _run = train_student(
        _spec,
        _buffer,
        config.student,
        loss=_loss,
        tau=_tau,
        n_batches=config.distill.n_batches,
        batch_size=config.distill.batch_size,
        seed=_seed,
        run_dir=run_dir,
        feed=_feed,
        evaluator=_make_evaluator(config, _game, _buffer, _teacher_mean, _seed),
        eval_every=config.distill.eval_every,
        log_every=config.distill.log_every,
        debug=debug,
    )
    return _finish(config, _run, _buffer, {_game: _teacher_mean}, _game, _seed, run_dir)


def _finish(
    config: ExperimentConfigPM,
    run: StudentRunResult,
    buffer: DistillBuffer,
    teacher_means: Dict[str, float],
    game_label: str,
    seed: int,
    run_dir: Optional[str],
) -> DistillRunResult:
    _dn = deploy(
        run.network,
        calibration=_calibration_states(buffer, config.distill.calibration_states, seed),
        levels=config.env.levels,
        game=game_label,
    )
    _model_path = save_deployed(_dn, os.path.join(run_dir, "student.tnf")) if run_dir else None

    _scores = {}
    for _game, _teacher_mean in teacher_means.items():
        if config.distill.deployed_eval:
            _agent = deployed_agent(_dn, config.env.target_shape)
        else:
            _agent = student_agent(run.network, config.env.levels, config.env.target_shape)
        _scores[_game] = evaluate_normalized(
            _agent,
            _teacher_mean,
            _game,
            config.env.env_params(_game),
            n_episodes=config.eval.episodes,
            seed=config.eval.seed,
            workers=config.eval.workers,
        )
        logger.success(f"'{_game}' student: {_scores[_game].describe()}.")

    return DistillRunResult(student=run.network, deployed=_dn, score=_scores, run=run, model_path=_model_path)


def offline_dataset(config: ExperimentConfigPM, teachers: Dict[str, object], seed: int) -> DistillBuffer:
    """One-hot datasets of every game, merged and shuffled."""

    _buffers = []
    for _idx, (_game, _teacher) in enumerate(teachers.items()):
        _env = make_env(_game, seed=seed + _idx, **config.env.env_params(_game))
        _buffer = generate_buffer(
            _teacher,
            _env,
            epsilon=config.distill.epsilon,
            n_frames=config.distill.offline_frames,
            capacity=config.distill.offline_frames,
            levels=config.env.levels,
            target_shape=config.env.target_shape,
            seed=seed + _idx,
        )
        _buffers.append(_buffer.to_one_hot())

    return merge_multigame(_buffers, seed=seed)


def distill_multigame(
    config: ExperimentConfigPM,
    teachers: Dict[str, object],
    loss: Optional[LossKindEnum] = None,
    tau: Optional[float] = None,
    tier: Optional[str] = None,
    seed: Optional[int] = None,
    run_dir: Optional[str] = None,
    dataset: Optional[DistillBuffer] = None,
    debug: bool = False,
) -> DistillRunResult:
    """Offline distillation of several games into one student with a shared action head."""

    _seed = config.seed if seed is None else seed
    _dataset = dataset if dataset is not None else offline_dataset(config, teachers, _seed)
    if run_dir:
        save_dataset(_dataset, os.path.join(run_dir, "dataset.tds"))

    _spec = resolve_spec(tier or config.student.tier, _dataset.state_shape, actions=_dataset.actions)
    _teacher_means = {_game: teacher_mean_return(_t, config, _game) for _game, _t in teachers.items()}
    _run = train_student(
        _spec,
        _dataset,
        config.student,
        loss=loss or config.distill.loss,
        tau=config.distill.tau if tau is None else tau,
        n_batches=config.distill.n_batches,
        batch_size=config.distill.batch_size,
        seed=_seed,
        run_dir=run_dir,
        log_every=config.distill.log_every,
        debug=debug,
    )
    return _finish(config, _run, _dataset, _teacher_means, "+".join(teachers), _seed, run_dir)


@dataclass
class SweepTable:
    games: List[str]
    taus: List[float]
    scores: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.scores.shape


_SWEEP_CELL_COLUMNS = ["game", "tau", "student_mean", "teacher_mean", "normalized_pct"]


def temperature_sweep(
    games: Sequence[str],
    tau_grid: Sequence[float],
    run_cell: Callable[[str, float], NormalizedScore],
    out_dir: Optional[str] = None,
) -> SweepTable:
    """One student per (game, tau); returns normalized scores [games x taus].

    With `out_dir`, finished cells are appended to 'sweep_cells.csv' and skipped
    when the sweep is run again; 'sweep_table.csv' holds one row per game with one
    column per tau in grid order.

    Raises:
        UsageError: Empty game list or tau grid.
    """

    if (not games) or (not tau_grid):
        raise UsageError("Temperature sweep needs at least one game and one tau!")

    _done: Dict[Tuple[str, str], Optional[float]] = {}
    _cells_path = None
    if out_dir:
        _cells_path = os.path.join(out_dir, "sweep_cells.csv")
        if os.path.isfile(_cells_path):
            for _row in read_metrics(_cells_path):
                _pct = _row["normalized_pct"]
                _done[(_row["game"], repr(float(_row["tau"])))] = float(_pct) if _pct else None
            logger.info(f"Resuming sweep: {len(_done)} finished cell(s) found in '{_cells_path}'.")

    _scores = np.full((len(games), len(tau_grid)), np.nan)
    _writer = MetricsWriter(_cells_path, _SWEEP_CELL_COLUMNS, append=True) if _cells_path else None
    try:
        for _i, _game in enumerate(games):
            for _j, _tau in enumerate(tau_grid):
                _key = (str(_game), repr(float(_tau)))
                if _key not in _done:
                    _score = run_cell(_game, float(_tau))
                    _done[_key] = _score.percent
                    if _writer:
                        _writer.write(
                            game=_game,
                            tau=float(_tau),
                            student_mean=_score.student_mean,
                            teacher_mean=_score.teacher_mean,
                            normalized_pct=_score.percent,
                        )
                _scores[_i, _j] = np.nan if _done[_key] is None else _done[_key]
    finally:
        if _writer:
            _writer.close()

    _table = SweepTable(games=[str(_g) for _g in games], taus=[float(_t) for _t in tau_grid], scores=_scores)
    if out_dir:
        with MetricsWriter(
            os.path.join(out_dir, "sweep_table.csv"), ["game"] + [f"tau={_t!r}" for _t in _table.taus]
        ) as _out:
            for _i, _game in enumerate(_table.games):
                _out.write(
                    game=_game,
                    **{f"tau={_t!r}": (None if np.isnan(_scores[_i, _j]) else float(_scores[_i, _j])) for _j, _t in enumerate(_table.taus)},
                )

    return _table


@dataclass(frozen=True)
class MultigameRow:
    tier: str
    game: str
    merged_mean: float
    single_mean: float
    percent: Optional[float]


def multigame_experiment(
    config: ExperimentConfigPM,
    teachers: Dict[str, object],
    tiers: Sequence[str] = DESK_TIERS,
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
) -> List[MultigameRow]:
    """Score merged-dataset students against single-game students, per tier and game.

    Every student trains offline on one-hot labels; a game's single-game student
    trains on that game's part of the same data.
    """

    _seed = config.seed if seed is None else seed
    _merged = offline_dataset(config, teachers, _seed)
    _games = list(teachers)
    _rows: List[MultigameRow] = []
    for _tier in tiers:
        _tier_dir = os.path.join(out_dir, _tier) if out_dir else None
        _merged_run = distill_multigame(
            config, teachers, tier=_tier, seed=_seed, dataset=_merged,
            run_dir=os.path.join(_tier_dir, "merged") if _tier_dir else None,
        )
        for _game in _games:
            _gid = _merged.games.index(_game)
            _idx = np.flatnonzero(_merged.game_ids[: len(_merged)] == _gid)
            _single_data = DistillBuffer.from_arrays(
                _merged.packed[_idx], _merged.labels[_idx], _merged.game_ids[_idx], _merged.state_shape,
                _merged.games, one_hot=True,
            )
            _single_run = distill_multigame(
                config, {_game: teachers[_game]}, tier=_tier, seed=_seed, dataset=_single_data,
                run_dir=os.path.join(_tier_dir, _game) if _tier_dir else None,
            )
            _merged_mean = _merged_run.score[_game].student_mean
            _single_mean = _single_run.score[_game].student_mean
            _rows.append(
                MultigameRow(
                    tier=_tier,
                    game=_game,
                    merged_mean=_merged_mean,
                    single_mean=_single_mean,
                    percent=normalized_score(_merged_mean, _single_mean, config.eval.episodes).percent,
                )
            )

    if out_dir:
        with MetricsWriter(os.path.join(out_dir, "multigame.csv"), ["tier", "game", "merged_mean", "single_mean", "percent"]) as _out:
            for _row in _rows:
                _out.write(**_row.__dict__)

    return _rows


__all__ = [
    "loss_mse",
    "loss_nll",
    "loss_kl",
    "distill_loss",
    "DistillBuffer",
    "merge_multigame",
    "dataset_to_bytes",
    "dataset_from_bytes",
    "save_dataset",
    "load_dataset",
    "TeacherPlayer",
    "student_input_shape",
    "generate_buffer",
    "resolve_spec",
    "StudentTrainer",
    "StudentRunResult",
    "train_student",
    "NormalizedScore",
    "normalized_score",
    "evaluate_normalized",
    "DistillRunResult",
    "teacher_mean_return",
    "distill_game",
    "offline_dataset",
    "distill_multigame",
    "SweepTable",
    "temperature_sweep",
    "MultigameRow",
    "multigame_experiment",
]
