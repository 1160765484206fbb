# -*- coding: utf-8 -*-

from enum import Enum, IntEnum


class WarnEnum(str, Enum):
    ERROR = "ERROR"
    ALWAYS = "ALWAYS"
    DEBUG = "DEBUG"
    IGNORE = "IGNORE"


class LogLevelEnum(str, Enum):
    TRACE = "TRACE"
    DEBUG = "DEBUG"
    INFO = "INFO"
    SUCCESS = "SUCCESS"
    WARNING = "WARNING"
    ERROR = "ERROR"
    CRITICAL = "CRITICAL"


class LossKindEnum(str, Enum):
    KL = "kl"
    NLL = "nll"
    MSE = "mse"


class EnvNameEnum(str, Enum):
    CATCH = "catch"
    MINIPONG = "minipong"


class TeacherArchEnum(str, Enum):
    DESK = "desk"
    ATARI = "atari"


class DirectionEnum(IntEnum):
    """Comparison a deployed neuron applies to its integer accumulation."""

    GE = 0
    LT = 1


class ExitCodeEnum(IntEnum):
    OK = 0
    CONFIG = 2
    MISSING_INPUT = 3
    CORRUPT_FILE = 4
    VERIFICATION = 5


ENV_CONFIG_PATH = "LOWPREC_DISTILL_CONFIG_PATH"
ENV_OUTPUT_DIR = "LOWPREC_DISTILL_OUTPUT_DIR"

HISTORY_LENGTH = 4
NUM_ACTIONS = 3

FANIN_LIMIT = 128
INPUT_FANIN_LIMIT = 256

INT32_MIN = -(2**31)
INT32_MAX = 2**31 - 1
