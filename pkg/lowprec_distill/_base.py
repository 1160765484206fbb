# -*- coding: utf-8 -*-

import os
import json
from typing import Any, Dict, List, Optional, Sequence, Union

import yaml
from loguru import logger
import pydantic
from pydantic import ValidationError

if "2.0.0" <= pydantic.__version__:
    from pydantic import validate_call
else:
    from pydantic import validate_arguments as validate_call

from .__version__ import __version__
from ._consts import ENV_CONFIG_PATH
from ._utils import (
    create_dir,
    deep_merge,
    get_default_output_dir,
    sha256_bytes,
    sha256_file,
    unflatten_dotted,
)
from .exceptions import ConfigError, MissingInputError
from .schemas import ExperimentConfigPM, model_to_dict


def _format_validation_error(err: ValidationError) -> str:
    _lines = []
    for _error in err.errors():
        _field = ".".join(str(_loc) for _loc in _error.get("loc", ()))
        _lines.append(f"`{_field or 'config'}`: {_error.get('msg', 'invalid value')}")

    return "; ".join(_lines)


def parse_override(text: str) -> Dict[str, Any]:
    """Parse one `key=value` override; the value is read as YAML.

    Raises:
        ConfigError: No '=' or empty key.
    """

    _key, _sep, _value = text.partition("=")
    _key = _key.strip()
    if (not _sep) or (not _key):
        raise ConfigError(f"Override '{text}' is invalid, must be 'dotted.key=value'!")

    try:
        _parsed = yaml.safe_load(_value) if _value.strip() else None
    except yaml.YAMLError as err:
        raise ConfigError(f"Override '{text}' has an unreadable value: {err}") from err

    return {_key: _parsed}


class ConfigLoader:
    """Builds an `ExperimentConfigPM` from defaults, a config file and overrides.

    Precedence, lowest first: model defaults, config file, `overrides`. The file is
    `config_file_path`, else the 'LOWPREC_DISTILL_CONFIG_PATH' environment
    variable; a missing default file is not an error, a missing explicit file is.

    Attributes:
        config_file_path (str ): Config file path, or None.
        explicit_file    (bool): Whether `config_file_path` was asked for explicitly.
    """

    @validate_call
    def __init__(self, config_file_path: Optional[str] = None):
        self.explicit_file = config_file_path is not None
        self.config_file_path = config_file_path
        self._load_env_vars()

    def _load_env_vars(self):
        """Load 'LOWPREC_DISTILL_CONFIG_PATH' environment variable for config file path."""

        _env_config_file_path = os.getenv(ENV_CONFIG_PATH)
        if (not self.config_file_path) and _env_config_file_path:
            self.config_file_path = _env_config_file_path
            self.explicit_file = True

    def _load_config_file(self) -> Dict[str, Any]:
        if not self.config_file_path:
            return {}

        if not os.path.isfile(self.config_file_path):
            if self.explicit_file:
                raise MissingInputError(f"Config file '{self.config_file_path}' not found!")
            return {}

        _lower = self.config_file_path.lower()
        try:
            with open(self.config_file_path, "r", encoding="utf-8") as _config_file:
                if _lower.endswith(".json"):
                    _data = json.load(_config_file) or {}
                elif _lower.endswith((".yml", ".yaml")):
                    _data = yaml.safe_load(_config_file) or {}
                else:
                    raise ConfigError(
                        f"Config file '{self.config_file_path}' has an unknown format, must be YAML or JSON!"
                    )
        except (yaml.YAMLError, json.JSONDecodeError) as err:
            logger.critical(f"Failed to load '{self.config_file_path}' config file.")
            raise ConfigError(f"Config file '{self.config_file_path}' is unreadable: {err}") from err

        if not isinstance(_data, dict):
            raise ConfigError(f"Config file '{self.config_file_path}' must hold a mapping at the top level!")

        return _data

    def load(self, overrides: Union[Sequence[Dict[str, Any]], Dict[str, Any], None] = None) -> ExperimentConfigPM:
        """Validate the merged config.

        Args:
            overrides (dict or list of dicts, optional): Dotted or nested values applied in order.

        Raises:
            ConfigError      : Unknown key, bad value or explicitly empty value (dotted field names in the message).
            MissingInputError: Explicit config file not found.

        Returns:
            ExperimentConfigPM: Validated config.
        """

        try:
            _merged = unflatten_dotted(self._load_config_file())
            if isinstance(overrides, dict):
                overrides = [overrides]
            for _override in overrides or []:
                _merged = deep_merge(_merged, unflatten_dotted(_override))
        except ValueError as err:
            if isinstance(err, ConfigError):
                raise
            raise ConfigError(str(err)) from err

        try:
            return ExperimentConfigPM(**_merged)
        except ValidationError as err:
            _message = _format_validation_error(err)
            logger.critical(f"Invalid experiment config: {_message}")
            raise ConfigError(_message) from err


def load_config(
    config_file_path: Optional[str] = None,
    overrides: Union[Sequence[Dict[str, Any]], Dict[str, Any], None] = None,
) -> ExperimentConfigPM:
    return ConfigLoader(config_file_path).load(overrides)


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), default=str)


def config_hash(config: ExperimentConfigPM) -> str:
    """SHA-256 of the canonical JSON form of `config`."""

    return sha256_bytes(canonical_json(model_to_dict(config)).encode("utf-8"))


def output_root(config: ExperimentConfigPM) -> str:
    return config.output_dir or get_default_output_dir()


@validate_call
def make_run_dir(root: str, *parts: str) -> str:
    """Create `root/part/...` and return its absolute path."""

    _run_dir = os.path.abspath(os.path.join(root, *parts))
    create_dir(create_dir=_run_dir)
    return _run_dir


def write_manifest(
    run_dir: str,
    command: Sequence[str],
    config: ExperimentConfigPM,
    seeds: Dict[str, int],
    artifacts: Optional[List[str]] = None,
) -> str:
    """Write 'manifest.json' describing how the run directory was produced.

    The manifest holds the command, the full config and its hash, the seeds, the
    SHA-256 of every artifact (paths relative to `run_dir`) and the package
    version. It has no timestamps, so identical runs give identical manifests.
    """

    _artifacts = {}
    for _path in artifacts or []:
        if os.path.isfile(_path):
            _artifacts[os.path.relpath(_path, run_dir)] = sha256_file(_path)

    _manifest = {
        "command": list(command),
        "config": model_to_dict(config),
        "config_sha256": config_hash(config),
        "seeds": dict(seeds),
        "artifacts": dict(sorted(_artifacts.items())),
        "version": __version__,
    }
    _path = os.path.join(run_dir, "manifest.json")
    with open(_path, "w", encoding="utf-8") as _file:
        json.dump(_manifest, _file, indent=2, sort_keys=True)
        _file.write("\n")

    logger.debug(f"Wrote manifest with {len(_artifacts)} artifact hash(es) to '{_path}'.")
    return _path


def read_manifest(run_dir: str) -> Dict[str, Any]:
    _path = os.path.join(run_dir, "manifest.json")
    if not os.path.isfile(_path):
        raise MissingInputError(f"Manifest '{_path}' not found!")

    with open(_path, "r", encoding="utf-8") as _file:
        return json.load(_file)


__all__ = [
    "parse_override",
    "ConfigLoader",
    "load_config",
    "canonical_json",
    "config_hash",
    "output_root",
    "make_run_dir",
    "write_manifest",
    "read_manifest",
]
