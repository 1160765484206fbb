# -*- coding: utf-8 -*-
"""Command line entry point: `lowprec-distill <command> [options]`.

Exit codes: 0 ok, 2 config or usage error, 3 missing input, 4 corrupt file,
5 verification failure, 1 anything else.
"""

import os
import sys
import time
import argparse
from typing import Dict, List, Optional, Sequence

from loguru import logger

from .__version__ import __version__
from ._base import load_config, make_run_dir, output_root, parse_override, write_manifest
from ._consts import ExitCodeEnum, LossKindEnum
from ._logging import LoggerLoader
from .agents import student_observation
from .deploy import equivalence_check, integer_forward, load_deployed
from .distill import distill_game, distill_multigame, temperature_sweep
from .envs import make_env
from .exceptions import ConfigError, CorruptFileError, MissingInputError, UsageError, VerificationError
from .lowprec import load_student
from .netspec import CHIP_SPECS, validate_fanin
from .observation import FrameStack
from .schemas import ExperimentConfigPM, describe_fields
from .teacher import TeacherNetwork, load_teacher, train_teacher
from .tensor_core import argmax_tiebreak


def _fields_epilog() -> str:
    _lines = ["config fields (dotted key = default):"]
    for _name, _default, _description in describe_fields(ExperimentConfigPM):
        _lines.append(f"  {_name} = {_default!r}")
        _lines.append(f"      {_description}")

    return "\n".join(_lines)


def _add_config_args(parser: argparse.ArgumentParser):
    parser.add_argument("--config", default=None, help="YAML or JSON config file (nested or dotted keys).")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override one config field, e.g. --set teacher.gamma=0.99 (repeatable).",
    )
    parser.add_argument("--seed", type=int, default=None, help="Master seed (overrides `seed`).")
    parser.add_argument("--output-dir", default=None, help="Output root (overrides `output_dir`).")


def build_parser() -> argparse.ArgumentParser:
    _formatter = argparse.RawDescriptionHelpFormatter
    _parser = argparse.ArgumentParser(
        prog="lowprec-distill",
        description="Distil DDQN teachers into ternary-weight, binary-activation students and run them with integers.",
        epilog=_fields_epilog(),
        formatter_class=_formatter,
    )
    _parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _commands = _parser.add_subparsers(dest="command", required=True)

    _teacher = _commands.add_parser(
        "train-teacher", help="Train a DDQN teacher.", epilog=_fields_epilog(), formatter_class=_formatter
    )
    _add_config_args(_teacher)
    _teacher.add_argument("--game", default=None, help="Game to train on (overrides `env.name`).")

    _distill = _commands.add_parser(
        "distill", help="Distil trained teachers into a student and deploy it.", epilog=_fields_epilog(), formatter_class=_formatter
    )
    _add_config_args(_distill)
    _distill.add_argument("--loss", choices=[_k.value for _k in LossKindEnum], default=None)
    _distill.add_argument("--tau", type=float, default=None, help="KL teacher temperature.")
    _distill.add_argument("--games", default=None, help="Comma separated games; two or more merge into one dataset.")
    _distill.add_argument("--tier", default=None, help="Student tier (overrides `student.tier`).")

    _play = _commands.add_parser(
        "play", help="Run a deployed model in the real-time loop.", epilog=_fields_epilog(), formatter_class=_formatter
    )
    _add_config_args(_play)
    _play.add_argument("--model", required=True, help="Deployed model file.")
    _play.add_argument("--fps", type=float, default=30.0, help="Target frame rate; 0 runs unthrottled.")
    _play.add_argument("--steps", type=int, default=1_000, help="Environment steps to run.")
    _play.add_argument("--game", default=None, help="Game to play; the model's game when unset.")

    _sweep = _commands.add_parser(
        "sweep", help="Temperature sweep of KL students.", epilog=_fields_epilog(), formatter_class=_formatter
    )
    _add_config_args(_sweep)
    _sweep.add_argument("--grid", default=None, help="Temperature grid, e.g. tau=0.05,0.01,0.005,0.001.")
    _sweep.add_argument("--games", default=None, help="Comma separated games.")

    _verify = _commands.add_parser(
        "verify",
        help="Check a deployed model against its student checkpoint.",
        epilog=(
            "verify reads no config file and no --set overrides: the tier, layer table and\n"
            "transduction levels come from the model and checkpoint files themselves."
        ),
        formatter_class=_formatter,
    )
    _verify.add_argument("--model", default=None, help="Deployed model file.")
    _verify.add_argument("--checkpoint", default=None, help="Student checkpoint file.")
    _verify.add_argument("--samples", type=int, default=1_000, help="Random binary inputs to compare.")
    _verify.add_argument("--seed", type=int, default=0)
    _verify.add_argument("--chip", action="store_true", help="Also check the fan-in of every chip tier network.")
    return _parser


def _split_list(text: Optional[str]) -> Optional[List[str]]:
    if text is None:
        return None
    return [_item.strip() for _item in text.split(",") if _item.strip()]


def parse_grid(text: str) -> List[float]:
    """Parse 'tau=0.05,0.01' (or '0.05,0.01') into floats.

    Raises:
        ConfigError: Empty grid, another key than tau, or a value that is not a number.
    """

    _key, _sep, _values = text.partition("=")
    if not _sep:
        _key, _values = "tau", text
    if _key.strip() != "tau":
        raise ConfigError(f"`--grid` key '{_key.strip()}' is invalid, must be 'tau'!")

    try:
        _grid = [float(_v) for _v in _split_list(_values)]
    except ValueError as err:
        raise ConfigError(f"`--grid` value '{text}' is invalid: {err}") from err

    if not _grid:
        raise ConfigError("`--grid` must hold at least one temperature!")
    return _grid


def _load_command_config(args: argparse.Namespace, extra: Optional[Dict] = None) -> ExperimentConfigPM:
    _overrides = [parse_override(_text) for _text in args.overrides]
    _flags = {}
    if args.seed is not None:
        _flags["seed"] = args.seed
    if args.output_dir is not None:
        _flags["output_dir"] = args.output_dir
    _flags.update({_k: _v for _k, _v in (extra or {}).items() if _v is not None})
    if _flags:
        _overrides.append(_flags)

    return load_config(args.config, _overrides)


def _debug_enabled(loader: LoggerLoader) -> bool:
    return loader.level in ("TRACE", "DEBUG")


def cmd_train_teacher(args: argparse.Namespace, loader: LoggerLoader) -> int:
    _config = _load_command_config(args, {"env.name": args.game})
    loader.update_config(_config.logging)
    loader.load()

    _game = _config.env.name.value
    _run_dir = make_run_dir(output_root(_config), "teacher", _game)
    loader.add_run_handlers(_run_dir)

    _env = make_env(_game, seed=_config.seed, **_config.env.env_params())
    _result = train_teacher(
        _env,
        _config.teacher,
        seed=_config.seed,
        run_dir=_run_dir,
        target_shape=_config.env.target_shape,
        eval_seed=_config.eval.seed,
    )
    _artifacts = [_result.checkpoint_path, _result.metrics_path, os.path.join(_run_dir, "eval.csv")]
    write_manifest(_run_dir, list(args.argv), _config, _seeds(_config), _artifacts)
    logger.success(f"Teacher written to '{_result.checkpoint_path}'.")
    return ExitCodeEnum.OK


def _seeds(config: ExperimentConfigPM) -> Dict[str, int]:
    return {"seed": config.seed, "eval_seed": config.eval.seed}


def load_teachers(config: ExperimentConfigPM, games: Sequence[str]) -> Dict[str, TeacherNetwork]:
    """Teacher checkpoints '<teacher_dir>/<game>/teacher.ckpt'.

    Raises:
        MissingInputError: A checkpoint does not exist.
        ConfigError      : A teacher was trained on another frame size.
    """

    _teacher_dir = config.distill.teacher_dir or os.path.join(output_root(config), "teacher")
    _teachers = {}
    for _game in games:
        _net, _meta = load_teacher(os.path.join(_teacher_dir, _game, "teacher.ckpt"))
        _target = _meta.get("target_shape")
        _expected = list(config.env.target_shape) if config.env.target_shape else None
        if _target != _expected:
            raise ConfigError(
                f"`env.target_shape` value {_expected} does not match the '{_game}' teacher's {_target}!"
            )
        if _meta.get("env_params") and (_meta["env_params"] != config.env.env_params(_game)):
            logger.warning(f"'{_game}' teacher was trained with env params {_meta['env_params']}.")
        _teachers[_game] = _net

    return _teachers


def _run_name(config: ExperimentConfigPM, games: Sequence[str], tau: Optional[float] = None) -> str:
    _name = f"{'+'.join(games)}-{config.student.tier}-{config.distill.loss.value}"
    if config.distill.loss == LossKindEnum.KL:
        _name += f"-tau{config.distill.tau if tau is None else tau!r}"

    return f"{_name}-seed{config.seed}"


def cmd_distill(args: argparse.Namespace, loader: LoggerLoader) -> int:
    _config = _load_command_config(
        args,
        {
            "distill.loss": args.loss,
            "distill.tau": args.tau,
            "distill.games": _split_list(args.games),
            "student.tier": args.tier,
        },
    )
    loader.update_config(_config.logging)
    loader.load()

    _games = [_g.value for _g in _config.distill.games]
    _teachers = load_teachers(_config, _games)
    _run_dir = make_run_dir(output_root(_config), "distill", _run_name(_config, _games))
    loader.add_run_handlers(_run_dir)

    _debug = _debug_enabled(loader)
    if len(_games) == 1:
        _result = distill_game(_config, _teachers[_games[0]], game=_games[0], run_dir=_run_dir, debug=_debug)
    else:
        _result = distill_multigame(_config, _teachers, run_dir=_run_dir, debug=_debug)

    _artifacts = [
        os.path.join(_run_dir, _name) for _name in ("student.ckpt", "student.tnf", "metrics.csv", "dataset.tds")
    ]
    write_manifest(_run_dir, list(args.argv), _config, _seeds(_config), _artifacts)
    for _game, _score in _result.score.items():
        print(f"{_game}: {_score.describe()}")

    return ExitCodeEnum.OK


def cmd_sweep(args: argparse.Namespace, loader: LoggerLoader) -> int:
    _grid = parse_grid(args.grid) if args.grid is not None else None
    _config = _load_command_config(
        args, {"distill.tau_grid": _grid, "distill.games": _split_list(args.games), "distill.loss": LossKindEnum.KL.value}
    )
    loader.update_config(_config.logging)
    loader.load()

    _games = [_g.value for _g in _config.distill.games]
    _teachers = load_teachers(_config, _games)
    _out_dir = make_run_dir(output_root(_config), "sweep", f"{_config.student.tier}-seed{_config.seed}")
    loader.add_run_handlers(_out_dir)

    def _run_cell(game: str, tau: float):
        _cell_dir = make_run_dir(_out_dir, _run_name(_config, [game], tau))
        _result = distill_game(_config, _teachers[game], game=game, tau=tau, run_dir=_cell_dir, debug=_debug_enabled(loader))
        return _result.score[game]

    _table = temperature_sweep(_games, _config.distill.tau_grid, _run_cell, out_dir=_out_dir)
    _artifacts = [os.path.join(_out_dir, "sweep_table.csv"), os.path.join(_out_dir, "sweep_cells.csv")]
    write_manifest(_out_dir, list(args.argv), _config, _seeds(_config), _artifacts)

    print("game," + ",".join(f"tau={_t!r}" for _t in _table.taus))
    for _i, _game in enumerate(_table.games):
        print(_game + "," + ",".join(f"{_v:.2f}" for _v in _table.scores[_i]))

    return ExitCodeEnum.OK


def cmd_play(args: argparse.Namespace, loader: LoggerLoader) -> int:
    if args.steps < 0:
        raise UsageError(f"`--steps` value {args.steps} is invalid, must be >= 0!")
    if args.fps < 0:
        raise UsageError(f"`--fps` value {args.fps} is invalid, must be >= 0!")

    _config = _load_command_config(args)
    loader.update_config(_config.logging)
    loader.load()

    _dn = load_deployed(args.model)
    _game = args.game or _dn.game.split("+")[0] or _config.env.name.value
    _env = make_env(_game, seed=_config.seed, **_config.env.env_params(_game))
    _to_obs = student_observation(_dn.levels, _config.env.target_shape)
    print(
        f"model={args.model} tier={_dn.spec.tier} game={_game} levels={_dn.levels} "
        f"target_fps={args.fps:g} steps={args.steps} seed={_config.seed}"
    )
    if args.steps == 0:
        return ExitCodeEnum.OK

    _period = 1.0 / args.fps if args.fps else 0.0
    _stack = FrameStack()
    _episode = 0
    _raw = _stack.reset(_env.reset(seed=_config.seed).frame)
    _return = 0.0
    _spikes = 0.0
    _start = time.perf_counter()
    for _step in range(args.steps):
        _scores, _report = integer_forward(_dn, _to_obs(_raw))
        _spikes += _report.spikes_per_inference
        _state = _env.step(argmax_tiebreak(_scores))
        _return += _state.reward
        if _state.terminal:
            print(f"episode={_episode} return={_return:g}")
            _episode += 1
            _return = 0.0
            _raw = _stack.reset(_env.reset(seed=_config.seed + _episode).frame)
        else:
            _raw = _stack.push(_state.frame)

        if _period:
            _wait = _start + (_step + 1) * _period - time.perf_counter()
            if 0 < _wait:
                time.sleep(_wait)

    _elapsed = time.perf_counter() - _start
    print(
        f"steps={args.steps} episodes={_episode} measured_fps={args.steps / max(_elapsed, 1e-9):.2f} "
        f"spikes_per_inference={_spikes / args.steps:.1f}"
    )
    return ExitCodeEnum.OK


def cmd_verify(args: argparse.Namespace, loader: LoggerLoader) -> int:
    loader.load()
    _ok = True
    if args.chip:
        for _name, _spec in CHIP_SPECS.items():
            _violations = validate_fanin(_spec)
            print(f"chip {_name}: {'ok' if not _violations else _violations}")
            _ok = _ok and (not _violations)

    if (args.model is None) != (args.checkpoint is None):
        raise UsageError("`verify` needs both --model and --checkpoint!")
    if args.model is None:
        if not args.chip:
            raise UsageError("`verify` needs --model and --checkpoint, or --chip!")
    else:
        _dn = load_deployed(args.model)
        _net = load_student(args.checkpoint)
        _report = equivalence_check(_net, _dn, n_samples=args.samples, seed=args.seed)
        _violations = validate_fanin(_dn.spec)
        print(
            f"tier={_dn.spec.tier} samples={_report.n_samples} hidden_bitexact={_report.hidden_bitexact} "
            f"argmax_agreement={_report.argmax_agreement:.4f} mismatched_layers={list(_report.mismatched_layers)} "
            f"mismatched_neurons={_report.mismatched_neurons} fanin_violations={len(_violations)}"
        )
        _ok = _ok and _report.hidden_bitexact and (not _violations)

    if not _ok:
        raise VerificationError("Deployed model is not bit-exact or violates fan-in constraints!")

    print("verify: ok")
    return ExitCodeEnum.OK


_COMMANDS = {
    "train-teacher": cmd_train_teacher,
    "distill": cmd_distill,
    "play": cmd_play,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    _parser = build_parser()
    try:
        _args = _parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code or 0)
    _args.argv = list(sys.argv[1:] if argv is None else argv)

    _loader = LoggerLoader(auto_load=True)
    try:
        return int(_COMMANDS[_args.command](_args, _loader))
    except (ConfigError, UsageError) as err:
        logger.error(f"Config error: {err}")
        return ExitCodeEnum.CONFIG
    except MissingInputError as err:
        logger.error(f"Missing input: {err}")
        return ExitCodeEnum.MISSING_INPUT
    except CorruptFileError as err:
        logger.error(f"Corrupt file: {err}")
        return ExitCodeEnum.CORRUPT_FILE
    except VerificationError as err:
        logger.error(f"Verification failed: {err}")
        return ExitCodeEnum.VERIFICATION
    except KeyboardInterrupt:
        logger.warning("Interrupted.")
        return 130
    except Exception:
        logger.exception(f"'{_args.command}' failed!")
        return 1
    finally:
        logger.complete()


__all__ = ["build_parser", "parse_grid", "load_teachers", "main"]
