# -*- coding: utf-8 -*-

import os
import sys
import copy
import json
import traceback
from typing import Dict, Optional, Union

from loguru import logger
from loguru._handler import Message
from loguru._logger import Logger
import pydantic

if "2.0.0" <= pydantic.__version__:
    from pydantic import validate_call
else:
    from pydantic import validate_arguments as validate_call

from ._utils import create_dir
from .schemas import LoggingPM


## Sinks, filters and formats ##
def std_sink(message: Message):
    """Print message to stdout below ERROR level, to stderr otherwise.

    Args:
        message (Message, required): Log message.
    """

    if message.record["level"].no < 40:
        sys.stdout.write(message)
    else:
        sys.stderr.write(message)


def add_level_short(record: dict) -> dict:
    """Filter for adding short level name to log record.

    Args:
        record (dict, required): Log record as dictionary.

    Returns:
        dict: Log record as dictionary with short level name.
    """

    if "level_short" not in record:
        if record["level"].name == "SUCCESS":
            record["level_short"] = "OK"
        elif record["level"].name == "WARNING":
            record["level_short"] = "WARN"
        elif record["level"].name == "CRITICAL":
            record["level_short"] = "CRIT"
        elif 5 < len(record["level"].name):
            record["level_short"] = record["level"].name[:5]
        else:
            record["level_short"] = record["level"].name

    return record


def _use_filter(record: dict, disable_key: str) -> bool:
    record = add_level_short(record)
    if record["extra"].get("disable_all", False):
        return False

    return not record["extra"].get(disable_key, False)


def use_std_filter(record: dict) -> bool:
    """False if record is bound with 'disable_all' or 'disable_std'."""

    return _use_filter(record, "disable_std")


def use_file_filter(record: dict) -> bool:
    """False if record is bound with 'disable_all' or 'disable_file'."""

    return _use_filter(record, "disable_file")


def use_file_json_filter(record: dict) -> bool:
    return _use_filter(record, "disable_file_json")


def json_format(record: dict) -> str:
    """Custom json formatter for loguru logger.

    Args:
        record (dict, required): Log record as dictionary.

    Returns:
        str: Format for serialized log record.
    """

    _error = None
    if record["exception"]:
        _error_type, _error_value, _error_traceback = record["exception"]
        _error = {
            "type": _error_type.__name__,
            "value": str(_error_value),
            "traceback": "".join(traceback.format_tb(_error_traceback)),
        }

    _extra = record["extra"] if record["extra"] else None
    _json_record = {
        "timestamp": record["time"].strftime("%Y-%m-%dT%H:%M:%S%z"),
        "level": record["level"].name,
        "level_no": record["level"].no,
        "file": record["file"].name,
        "line": record["line"],
        "name": record["name"],
        "message": record["message"],
        "extra": _extra,
        "error": _error,
        "elapsed": str(record["elapsed"]),
    }

    record["serialized"] = json.dumps(_json_record, default=str)
    return "{serialized}\n"


FILE_FORMAT = "[{time:YYYY-MM-DD HH:mm:ss.SSS} | {level_short:<5} | {name}:{line}]: {message}"


def is_debug_env() -> bool:
    """True when 'DEBUG' is true/1, or 'ENV' is development and 'DEBUG' is unset."""

    _ENV = str(os.getenv("ENV")).strip().lower()
    _DEBUG = str(os.getenv("DEBUG")).strip().lower()
    return (
        (_DEBUG == "true")
        or (_DEBUG == "1")
        or ((_ENV == "development") and ((_DEBUG == "none") or (_DEBUG == "")))
    )


class LoggerLoader:
    """Sets up the loguru handlers of one command.

    Attributes:
        config       (LoggingPM): Logging section of the experiment config.
        handlers_map (dict     ): Registered handler ids by name.

    Methods:
        load()              : Replace all handlers with the stream handler.
        add_run_handlers()  : Add 'run.log' and optional 'run.json.log' handlers for a run directory.
        remove_handler()    : Remove all handlers or one handler by name.
        add_custom_handler(): Add a named handler.
    """

    @validate_call
    def __init__(self, config: Union[LoggingPM, Dict, None] = None, auto_load: bool = False):
        self.handlers_map = {"default": 0}
        self.config = LoggingPM()
        if config:
            self.update_config(config=config)

        if auto_load:
            self.load()

    @validate_call
    def update_config(self, config: Union[LoggingPM, Dict]):
        if isinstance(config, dict):
            if "2.0.0" <= pydantic.__version__:
                _config_dict = self.config.model_dump()
            else:
                _config_dict = self.config.dict()

            _config_dict.update(config)
            try:
                self.config = LoggingPM(**_config_dict)
            except Exception:
                logger.critical("Failed to load `config` argument into <class 'LoggingPM'>.")
                raise
        else:
            self.config = config

    @property
    def level(self) -> str:
        _level = self.config.level.value
        if is_debug_env() and (_level != "TRACE"):
            _level = "DEBUG"

        return _level

    def load(self) -> Logger:
        """Remove every handler and add the stream handler.

        Returns:
            Logger: Main loguru logger instance.
        """

        self.remove_handler()
        self.add_custom_handler(
            handler_name="STREAM.STD",
            sink=std_sink,
            format=self.config.format_str,
            colorize=self.config.use_color,
            filter=use_std_filter,
        )
        return logger

    @validate_call
    def add_run_handlers(self, run_dir: str) -> Dict[str, int]:
        """Add the per-run log file handlers configured in `config`.

        Args:
            run_dir (str, required): Run directory; files are 'run.log' and 'run.json.log'.

        Returns:
            Dict[str, int]: Added handler ids by name.
        """

        create_dir(create_dir=run_dir)
        _added = {}
        for _name in ("FILE", "FILE.JSON"):
            if _name in self.handlers_map:
                self.remove_handler(_name)

        if self.config.file_enabled:
            _added["FILE"] = self.add_custom_handler(
                handler_name="FILE",
                sink=os.path.join(run_dir, "run.log"),
                format=FILE_FORMAT,
                filter=use_file_filter,
                encoding="utf8",
                enqueue=True,
            )

        if self.config.json_enabled:
            _added["FILE.JSON"] = self.add_custom_handler(
                handler_name="FILE.JSON",
                sink=os.path.join(run_dir, "run.json.log"),
                format=json_format,
                filter=use_file_json_filter,
                encoding="utf8",
                enqueue=True,
            )

        return _added

    @validate_call
    def remove_handler(self, handler: Optional[str] = None):
        """Remove all handlers, or the handler registered as `handler`."""

        if handler:
            if handler in self.handlers_map:
                logger.remove(self.handlers_map.pop(handler))
            return

        logger.remove()
        self.handlers_map.clear()

    def add_custom_handler(self, handler_name: str, **kwargs) -> int:
        """Add a named handler; `level` defaults to the configured (or debug) level.

        Raises:
            ValueError: Handler name already registered, or no `sink` given.

        Returns:
            int: Handler id.
        """

        handler_name = handler_name.strip().upper()
        if handler_name in self.handlers_map:
            raise ValueError(f"Custom handler '{handler_name}' already exists in logger!")
        if "sink" not in kwargs:
            raise ValueError(f"`sink` argument is required for custom handler '{handler_name}'!")

        kwargs.setdefault("level", self.level)
        kwargs.setdefault("filter", use_std_filter)
        kwargs.setdefault("diagnose", self.level == "TRACE")
        try:
            _handler_id = logger.add(**kwargs)
        except Exception:
            logger.critical(f"Failed to add custom handler '{handler_name}' to logger!")
            raise

        self.handlers_map[handler_name] = _handler_id
        return _handler_id

    ### ATTRIBUTES ###
    ## handlers_map ##
    @property
    def handlers_map(self) -> Dict[str, int]:
        try:
            return self.__handlers_map
        except AttributeError:
            self.__handlers_map = {"default": 0}

        return self.__handlers_map

    @handlers_map.setter
    def handlers_map(self, handlers_map: Dict[str, int]):
        if not isinstance(handlers_map, dict):
            raise TypeError(
                f"`handlers_map` attribute type {type(handlers_map)} is invalid, must be <dict>!."
            )

        self.__handlers_map = copy.deepcopy(handlers_map)


__all__ = [
    "std_sink",
    "add_level_short",
    "use_std_filter",
    "use_file_filter",
    "use_file_json_filter",
    "json_format",
    "is_debug_env",
    "LoggerLoader",
]
