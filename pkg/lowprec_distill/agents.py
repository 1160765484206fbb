# -*- coding: utf-8 -*-
"""Greedy agents over raw frame stacks and seeded, order-independent evaluation."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger

from .deploy import integer_forward
from .envs import make_env
from .exceptions import UsageError
from .observation import FrameStack, preprocess_stack, transduce
from .tensor_core import argmax_tiebreak


class GreedyAgent:
    """argmax of a Q function applied to `to_obs(raw_stack)`.

    `q_fn` only needs a `predict(batch)` method; it must not mutate state, so
    one agent can serve several evaluation threads.
    """

    def __init__(self, q_fn, to_obs: Callable[[np.ndarray], np.ndarray]):
        self.q_fn = q_fn
        self.to_obs = to_obs

    def scores(self, raw_stack: np.ndarray) -> np.ndarray:
        return self.q_fn.predict(self.to_obs(raw_stack))

    def act(self, raw_stack: np.ndarray) -> int:
        return argmax_tiebreak(self.scores(raw_stack))


def teacher_agent(teacher, target_shape: Optional[Tuple[int, int]] = None) -> GreedyAgent:
    return GreedyAgent(teacher, lambda _raw: preprocess_stack(_raw, target_shape))


def student_observation(levels: int = 4, target_shape: Optional[Tuple[int, int]] = None) -> Callable[[np.ndarray], np.ndarray]:
    def _to_obs(raw_stack: np.ndarray) -> np.ndarray:
        return transduce(preprocess_stack(raw_stack, target_shape), levels=levels)

    return _to_obs


def student_agent(student, levels: int = 4, target_shape: Optional[Tuple[int, int]] = None) -> GreedyAgent:
    return GreedyAgent(student, student_observation(levels, target_shape))


class _DeployedQ:
    def __init__(self, dn):
        self.dn = dn

    def predict(self, batch) -> np.ndarray:
        return integer_forward(self.dn, batch)[0]


def deployed_agent(dn, target_shape: Optional[Tuple[int, int]] = None) -> GreedyAgent:
    """Agent that runs the integer network on transduced inputs (levels read from the model)."""

    return GreedyAgent(_DeployedQ(dn), student_observation(dn.levels, target_shape))


@dataclass
class EvalResult:
    returns: List[float]
    seeds: List[int]

    @property
    def mean_return(self) -> float:
        return float(np.mean(self.returns)) if self.returns else 0.0


def run_episode(agent: GreedyAgent, game: str, env_params: Dict[str, Any], seed: int, max_steps: int = 10_000) -> float:
    """One greedy episode on a fresh environment whose start is pinned by `seed`."""

    _env = make_env(game, seed=seed, **env_params)
    _stack = FrameStack()
    _raw = _stack.reset(_env.reset(seed=seed).frame)
    _return = 0.0
    for _ in range(max_steps):
        _state = _env.step(agent.act(_raw))
        _return += _state.reward
        if _state.terminal:
            break
        _raw = _stack.push(_state.frame)

    return _return


def evaluate_agent(
    agent: GreedyAgent,
    game: str,
    env_params: Dict[str, Any],
    n_episodes: int,
    seed: int = 10_000,
    workers: int = 1,
) -> EvalResult:
    """Greedy returns of episodes seeded `seed, seed + 1, ...`.

    Episodes are independent, so results do not depend on `workers`.

    Raises:
        UsageError: `n_episodes` < 1.
    """

    if n_episodes < 1:
        raise UsageError(f"`n_episodes` argument value {n_episodes} is invalid, must be >= 1!")
    if workers < 1:
        raise UsageError(f"`workers` argument value {workers} is invalid, must be >= 1!")

    _seeds = [seed + _i for _i in range(n_episodes)]
    if workers == 1:
        _returns = [run_episode(agent, game, env_params, _s) for _s in _seeds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as _pool:
            _returns = list(_pool.map(lambda _s: run_episode(agent, game, env_params, _s), _seeds))

    logger.debug(f"Evaluated {n_episodes} '{game}' episodes on {workers} worker(s): mean return {np.mean(_returns):.3f}.")
    return EvalResult(returns=_returns, seeds=_seeds)


__all__ = [
    "GreedyAgent",
    "teacher_agent",
    "student_observation",
    "student_agent",
    "deployed_agent",
    "EvalResult",
    "run_episode",
    "evaluate_agent",
]
