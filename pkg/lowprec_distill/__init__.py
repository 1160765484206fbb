# -*- coding: utf-8 -*-

from loguru import logger

from ._base import ConfigLoader, load_config, write_manifest
from ._logging import LoggerLoader
from .schemas import ExperimentConfigPM
from .netspec import NetworkSpec, LayerSpec, validate_fanin, CHIP_SPECS, DESK_TIERS, desk_spec
from .lowprec import StudentNetwork, save_student, load_student
from .deploy import (
    DeployedNetwork,
    deploy,
    integer_forward,
    equivalence_check,
    save_deployed,
    load_deployed,
)
from .teacher import TeacherNetwork, train_teacher, save_teacher, load_teacher
from .distill import (
    DistillBuffer,
    loss_kl,
    loss_nll,
    loss_mse,
    merge_multigame,
    train_student,
    evaluate_normalized,
    temperature_sweep,
)
from .envs import CatchEnv, MiniPongEnv, make_env
from .observation import transduce
from ._consts import LossKindEnum, EnvNameEnum, ExitCodeEnum
from .__version__ import __version__


__all__ = [
    "logger",
    "ConfigLoader",
    "load_config",
    "write_manifest",
    "LoggerLoader",
    "ExperimentConfigPM",
    "NetworkSpec",
    "LayerSpec",
    "validate_fanin",
    "CHIP_SPECS",
    "DESK_TIERS",
    "desk_spec",
    "StudentNetwork",
    "save_student",
    "load_student",
    "DeployedNetwork",
    "deploy",
    "integer_forward",
    "equivalence_check",
    "save_deployed",
    "load_deployed",
    "TeacherNetwork",
    "train_teacher",
    "save_teacher",
    "load_teacher",
    "DistillBuffer",
    "loss_kl",
    "loss_nll",
    "loss_mse",
    "merge_multigame",
    "train_student",
    "evaluate_normalized",
    "temperature_sweep",
    "CatchEnv",
    "MiniPongEnv",
    "make_env",
    "transduce",
    "LossKindEnum",
    "EnvNameEnum",
    "ExitCodeEnum",
    "__version__",
]
