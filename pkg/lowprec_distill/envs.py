# -*- coding: utf-8 -*-
"""Desk-scale pixel games sharing one 3-action interface.

Each environment is a pure state machine: randomness is drawn only in `reset`,
and `transition(state, action)` is a function of its arguments. Episodes can be
exported as line-delimited JSON records and replayed exactly.
"""

import os
import json
from dataclasses import asdict, dataclass, replace
from typing import Any, Dict, List, Optional, Tuple, Type, Union

import numpy as np
from loguru import logger

from ._consts import NUM_ACTIONS, EnvNameEnum
from ._utils import create_dir
from .exceptions import MissingInputError, UsageError, VerificationError


LEGAL_ACTIONS: Tuple[int, ...] = tuple(range(NUM_ACTIONS))
PIXEL_ON = 255


@dataclass(frozen=True, eq=False)
class EnvState:
    """What the agent sees after `reset` or `step`."""

    frame: np.ndarray
    reward: float
    terminal: bool
    legal_actions: Tuple[int, ...] = LEGAL_ACTIONS
    t: int = 0


@dataclass(frozen=True)
class CatchState:
    ball_row: int
    ball_col: int
    paddle_col: int
    t: int = 0
    done: bool = False


@dataclass(frozen=True)
class PongState:
    ball_row: int
    ball_col: int
    ball_drow: int
    ball_dcol: int
    paddle_top: int
    serve_seed: int
    rally: int = 0
    t: int = 0
    done: bool = False


class PixelEnv:
    """Shared reset/step plumbing; subclasses define the game rules."""

    name: str = ""
    state_cls: Type = None

    def __init__(self, seed: int = 0, scale: int = 2):
        if scale < 1:
            raise UsageError(f"`scale` argument value {scale} is invalid, must be >= 1!")

        self.seed = seed
        self.scale = scale
        self._rng = np.random.default_rng(seed)
        self.state = None

    @property
    def grid_shape(self) -> Tuple[int, int]:
        raise NotImplementedError

    @property
    def frame_shape(self) -> Tuple[int, int]:
        _h, _w = self.grid_shape
        return (_h * self.scale, _w * self.scale)

    @property
    def params(self) -> Dict[str, Any]:
        raise NotImplementedError

    def initial_state(self, rng: np.random.Generator):
        raise NotImplementedError

    def transition(self, state, action: int) -> Tuple[Any, float]:
        raise NotImplementedError

    def cells(self, state) -> List[Tuple[int, int]]:
        raise NotImplementedError

    def render(self, state) -> np.ndarray:
        _grid = np.zeros(self.grid_shape, dtype=np.uint8)
        for _row, _col in self.cells(state):
            _grid[_row, _col] = PIXEL_ON

        return np.kron(_grid, np.ones((self.scale, self.scale), dtype=np.uint8))

    def check_action(self, action: int) -> int:
        if isinstance(action, (bool, np.bool_)) or (int(action) != action) or (int(action) not in LEGAL_ACTIONS):
            raise UsageError(f"`action` argument value {action} is invalid, must be one of {list(LEGAL_ACTIONS)}!")

        return int(action)

    def reset(self, seed: Optional[int] = None) -> EnvState:
        """Start an episode; `seed` pins its random start, otherwise the env's own stream is used."""

        _rng = self._rng if seed is None else np.random.default_rng(seed)
        self.state = self.initial_state(_rng)
        return EnvState(frame=self.render(self.state), reward=0.0, terminal=False, t=0)

    def restore(self, state) -> EnvState:
        self.state = state
        return EnvState(frame=self.render(state), reward=0.0, terminal=state.done, t=state.t)

    def step(self, action: int) -> EnvState:
        if self.state is None:
            raise UsageError(f"{type(self).__name__} must be reset before stepping!")
        if self.state.done:
            raise UsageError(f"{type(self).__name__} episode is over, reset before stepping!")

        self.state, _reward = self.transition(self.state, self.check_action(action))
        return EnvState(
            frame=self.render(self.state),
            reward=float(_reward),
            terminal=self.state.done,
            t=self.state.t,
        )


class CatchEnv(PixelEnv):
    """A ball falls one row per step from a random column; the bottom paddle must catch it.

    Actions: 0 left, 1 stay, 2 right. Reward +1 on catch and -1 on miss when the
    ball reaches the bottom row, 0 otherwise. Episodes last `grid - 1` steps.
    """

    name = EnvNameEnum.CATCH.value
    state_cls = CatchState

    def __init__(self, grid: int = 12, seed: int = 0, scale: int = 2):
        if grid < 5:
            raise UsageError(f"`grid` argument value {grid} is invalid, must be >= 5!")

        super().__init__(seed=seed, scale=scale)
        self.grid = grid

    @property
    def grid_shape(self) -> Tuple[int, int]:
        return (self.grid, self.grid)

    @property
    def params(self) -> Dict[str, Any]:
        return {"grid": self.grid, "scale": self.scale}

    def initial_state(self, rng: np.random.Generator) -> CatchState:
        return CatchState(ball_row=0, ball_col=int(rng.integers(self.grid)), paddle_col=self.grid // 2)

    def transition(self, state: CatchState, action: int) -> Tuple[CatchState, float]:
        _paddle = min(max(state.paddle_col + (action - 1), 0), self.grid - 1)
        _row = state.ball_row + 1
        _done = _row == self.grid - 1
        _reward = 0.0
        if _done:
            _reward = 1.0 if state.ball_col == _paddle else -1.0

        return replace(state, ball_row=_row, paddle_col=_paddle, t=state.t + 1, done=_done), _reward

    def cells(self, state: CatchState) -> List[Tuple[int, int]]:
        return [(state.ball_row, state.ball_col), (self.grid - 1, state.paddle_col)]


class MiniPongEnv(PixelEnv):
    """Single-player wall pong with a 3-cell paddle on the left column.

    The ball is served from the right wall with diagonal velocity and reflects off
    the top, bottom and right walls (vertical velocity flips, horizontal kept, and
    vice versa). A rally ends when the ball reaches the paddle column: +1 if the
    paddle covers the ball's row (the ball bounces back), -1 otherwise (the ball is
    served again). The episode ends after `rallies` rally ends.

    Actions: 0 up, 1 stay, 2 down.
    """

    name = EnvNameEnum.MINIPONG.value
    state_cls = PongState
    PADDLE = 3

    def __init__(self, height: int = 12, width: int = 12, rallies: int = 1, seed: int = 0, scale: int = 2):
        if (height < self.PADDLE + 2) or (width < 5):
            raise UsageError(f"MiniPong grid {height}x{width} is invalid, must be at least 5x5!")
        if rallies < 1:
            raise UsageError(f"`rallies` argument value {rallies} is invalid, must be >= 1!")

        super().__init__(seed=seed, scale=scale)
        self.height = height
        self.width = width
        self.rallies = rallies

    @property
    def grid_shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    @property
    def params(self) -> Dict[str, Any]:
        return {"height": self.height, "width": self.width, "rallies": self.rallies, "scale": self.scale}

    def _serve(self, state_kwargs: Dict[str, Any], rng: np.random.Generator) -> Dict[str, Any]:
        state_kwargs.update(
            ball_row=int(rng.integers(self.height)),
            ball_col=self.width - 1,
            ball_drow=int(rng.choice((-1, 1))),
            ball_dcol=-1,
        )
        return state_kwargs

    def initial_state(self, rng: np.random.Generator) -> PongState:
        _kwargs = self._serve({}, rng)
        return PongState(
            paddle_top=(self.height - self.PADDLE) // 2,
            serve_seed=int(rng.integers(2**31)),
            **_kwargs,
        )

    def _reflect(self, pos: int, vel: int, upper: int) -> Tuple[int, int]:
        _pos = pos + vel
        if _pos < 0:
            return -_pos, -vel
        if _pos > upper:
            return 2 * upper - _pos, -vel
        return _pos, vel

    def move_ball(self, state: PongState) -> Tuple[int, int, int, int]:
        """Ball position and velocity one step later, ignoring the paddle."""

        _row, _drow = self._reflect(state.ball_row, state.ball_drow, self.height - 1)
        _col, _dcol = self._reflect(state.ball_col, state.ball_dcol, self.width - 1)
        return _row, _col, _drow, _dcol

    def landing_row(self, state: PongState) -> int:
        """Row at which the ball will next reach the paddle column."""

        _state = state
        while True:
            _row, _col, _drow, _dcol = self.move_ball(_state)
            if _col == 0:
                return _row
            _state = replace(_state, ball_row=_row, ball_col=_col, ball_drow=_drow, ball_dcol=_dcol)

    def transition(self, state: PongState, action: int) -> Tuple[PongState, float]:
        _top = min(max(state.paddle_top + (action - 1), 0), self.height - self.PADDLE)
        _row, _col, _drow, _dcol = self.move_ball(state)
        _reward = 0.0
        _rally = state.rally
        _kwargs = dict(ball_row=_row, ball_col=_col, ball_drow=_drow, ball_dcol=_dcol)

        if _col == 0:
            _rally += 1
            if _top <= _row < _top + self.PADDLE:
                _reward = 1.0
                _kwargs.update(ball_col=1, ball_dcol=1)
            else:
                _reward = -1.0
                self._serve(_kwargs, np.random.default_rng((state.serve_seed, _rally)))

        _next = replace(
            state,
            paddle_top=_top,
            rally=_rally,
            t=state.t + 1,
            done=self.rallies <= _rally,
            **_kwargs,
        )
        return _next, _reward

    def cells(self, state: PongState) -> List[Tuple[int, int]]:
        _cells = [(state.paddle_top + _i, 0) for _i in range(self.PADDLE)]
        _cells.append((state.ball_row, state.ball_col))
        return _cells


_ENVS: Dict[str, Type[PixelEnv]] = {
    EnvNameEnum.CATCH.value: CatchEnv,
    EnvNameEnum.MINIPONG.value: MiniPongEnv,
}


def make_env(name: Union[str, EnvNameEnum], seed: int = 0, **params) -> PixelEnv:
    """Build a game by name.

    Raises:
        UsageError: Unknown game name.
    """

    _name = name.value if isinstance(name, EnvNameEnum) else str(name).strip().lower()
    if _name not in _ENVS:
        raise UsageError(f"`name` argument value '{name}' is invalid, must be one of {list(_ENVS)}!")

    return _ENVS[_name](seed=seed, **params)


class CatchOracleAgent:
    """Moves the paddle toward the ball column."""

    def __init__(self, env: CatchEnv):
        self.env = env

    def act(self, *_) -> int:
        _state = self.env.state
        return int(np.sign(_state.ball_col - _state.paddle_col)) + 1


class PongFollowerAgent:
    """Moves the paddle centre toward the row where the ball will arrive."""

    def __init__(self, env: MiniPongEnv):
        self.env = env

    def act(self, *_) -> int:
        _state = self.env.state
        _target = self.env.landing_row(_state)
        _centre = _state.paddle_top + MiniPongEnv.PADDLE // 2
        return int(np.sign(_target - _centre)) + 1


def scripted_agent(env: PixelEnv):
    if isinstance(env, CatchEnv):
        return CatchOracleAgent(env)
    if isinstance(env, MiniPongEnv):
        return PongFollowerAgent(env)

    raise UsageError(f"No scripted agent for {type(env).__name__}!")


## Episode logs ##
@dataclass
class EpisodeLog:
    game: str
    params: Dict[str, Any]
    initial_state: Dict[str, Any]
    records: List[Dict[str, Any]]

    @property
    def episode_return(self) -> float:
        return float(sum(_r["reward"] for _r in self.records))


class EpisodeRecorder:
    """Collects (step, action, reward, terminal) records of one episode."""

    def __init__(self, env: PixelEnv):
        self.env = env
        self.log: Optional[EpisodeLog] = None

    def reset(self, seed: Optional[int] = None) -> EnvState:
        _obs = self.env.reset(seed=seed)
        self.log = EpisodeLog(
            game=self.env.name,
            params=self.env.params,
            initial_state=asdict(self.env.state),
            records=[],
        )
        return _obs

    def step(self, action: int) -> EnvState:
        _obs = self.env.step(action)
        self.log.records.append(
            {"step": _obs.t, "action": int(action), "reward": _obs.reward, "terminal": _obs.terminal}
        )
        return _obs


def write_episode_log(file_path: str, log: EpisodeLog) -> str:
    create_dir(create_dir=os.path.dirname(os.path.abspath(file_path)))
    with open(file_path, "w", encoding="utf-8") as _file:
        _header = {"game": log.game, "params": log.params, "initial_state": log.initial_state}
        _file.write(json.dumps(_header, sort_keys=True) + "\n")
        for _record in log.records:
            _file.write(json.dumps(_record, sort_keys=True) + "\n")

    return file_path


def read_episode_log(file_path: str) -> EpisodeLog:
    if not os.path.isfile(file_path):
        raise MissingInputError(f"Episode log '{file_path}' not found!")

    with open(file_path, "r", encoding="utf-8") as _file:
        _lines = [json.loads(_line) for _line in _file if _line.strip()]
    if not _lines:
        raise UsageError(f"Episode log '{file_path}' is empty!")

    _header = _lines[0]
    return EpisodeLog(
        game=_header["game"],
        params=_header["params"],
        initial_state=_header["initial_state"],
        records=_lines[1:],
    )


def replay_episode(log: EpisodeLog) -> float:
    """Re-run the logged actions from the logged start and check every record.

    Raises:
        VerificationError: A replayed reward or terminal flag differs from the log.

    Returns:
        float: Episode return.
    """

    _env = make_env(log.game, **log.params)
    _env.restore(_env.state_cls(**log.initial_state))
    for _record in log.records:
        _obs = _env.step(_record["action"])
        if (_obs.reward != _record["reward"]) or (_obs.terminal != _record["terminal"]) or (_obs.t != _record["step"]):
            logger.error(f"Replay diverged at step {_record['step']} of '{log.game}' episode.")
            raise VerificationError(f"Replay of '{log.game}' episode diverged at step {_record['step']}!")

    return log.episode_return


__all__ = [
    "LEGAL_ACTIONS",
    "EnvState",
    "CatchState",
    "PongState",
    "PixelEnv",
    "CatchEnv",
    "MiniPongEnv",
    "make_env",
    "CatchOracleAgent",
    "PongFollowerAgent",
    "scripted_agent",
    "EpisodeLog",
    "EpisodeRecorder",
    "write_episode_log",
    "read_episode_log",
    "replay_episode",
]
