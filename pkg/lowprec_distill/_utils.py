# -*- coding: utf-8 -*-

import os
import csv
import copy
import errno
import hashlib
from typing import Any, Dict, List, Sequence

import numpy as np
from loguru import logger
import pydantic

if "2.0.0" <= pydantic.__version__:
    from pydantic import validate_call
else:
    from pydantic import validate_arguments as validate_call

from ._consts import WarnEnum, ENV_OUTPUT_DIR


@validate_call
def create_dir(create_dir: str, warn_mode: WarnEnum = WarnEnum.DEBUG):
    """Create directory if `create_dir` doesn't exist.

    Args:
        create_dir (str, required): Create directory path.
        warn_mode  (str, optional): Warning message mode, for example: 'ERROR', 'ALWAYS', 'DEBUG', 'IGNORE'. Defaults to "DEBUG".
    """

    if not os.path.isdir(create_dir):
        try:
            _message = f"Creating '{create_dir}' directory..."
            if warn_mode == WarnEnum.ALWAYS:
                logger.info(_message)
            elif warn_mode == WarnEnum.DEBUG:
                logger.debug(_message)

            os.makedirs(create_dir)
        except OSError as err:
            if err.errno == errno.EEXIST:
                logger.debug(f"'{create_dir}' directory already exists!")
            else:
                logger.error(f"Failed to create '{create_dir}' directory!")
                raise

        _message = f"Successfully created '{create_dir}' directory."
        if warn_mode == WarnEnum.ALWAYS:
            logger.success(_message)
        elif warn_mode == WarnEnum.DEBUG:
            logger.debug(_message)


@validate_call
def deep_merge(dict1: dict, dict2: dict) -> dict:
    """Return a new dictionary that's the result of a deep merge of two dictionaries.
    If there are conflicts, values from `dict2` will overwrite those in `dict1`.

    Args:
        dict1 (dict, required): The base dictionary that will be merged.
        dict2 (dict, required): The dictionary to merge into `dict1`.

    Returns:
        dict: The merged dictionary.
    """

    _merged = copy.deepcopy(dict1)
    for _key, _val in dict2.items():
        if (
            _key in _merged
            and isinstance(_merged[_key], dict)
            and isinstance(_val, dict)
        ):
            _merged[_key] = deep_merge(_merged[_key], _val)
        else:
            _merged[_key] = copy.deepcopy(_val)

    return _merged


def unflatten_dotted(flat: Dict[str, Any]) -> Dict[str, Any]:
    """Turn `{"teacher.gamma": 0.99}` style keys into nested dictionaries.

    Nested values are unflattened too, so a file may mix both styles.

    Args:
        flat (dict, required): Dictionary with dotted and/or nested keys.

    Raises:
        ValueError: A dotted key collides with a scalar value.

    Returns:
        dict: Nested dictionary.
    """

    _nested: Dict[str, Any] = {}
    for _key, _val in flat.items():
        if isinstance(_val, dict):
            _val = unflatten_dotted(_val)

        _parts = str(_key).split(".")
        _node = _nested
        for _part in _parts[:-1]:
            _child = _node.setdefault(_part, {})
            if not isinstance(_child, dict):
                raise ValueError(
                    f"Config key '{_key}' collides with scalar value at '{_part}'!"
                )
            _node = _child

        _leaf = _parts[-1]
        if isinstance(_val, dict) and isinstance(_node.get(_leaf), dict):
            _node[_leaf] = deep_merge(_node[_leaf], _val)
        else:
            _node[_leaf] = _val

    return _nested


def flatten_dotted(nested: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    """Inverse of `unflatten_dotted`."""

    _flat: Dict[str, Any] = {}
    for _key, _val in nested.items():
        _name = f"{prefix}{_key}"
        if isinstance(_val, dict) and _val:
            _flat.update(flatten_dotted(_val, prefix=f"{_name}."))
        else:
            _flat[_name] = _val

    return _flat


def sha256_file(file_path: str) -> str:
    _hash = hashlib.sha256()
    with open(file_path, "rb") as _file:
        for _chunk in iter(lambda: _file.read(1 << 20), b""):
            _hash.update(_chunk)

    return _hash.hexdigest()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def get_default_output_dir() -> str:
    """Return default output root ('LOWPREC_DISTILL_OUTPUT_DIR' or current working directory + 'runs').

    Returns:
        str: Default output directory path.
    """

    _env_output_dir = os.getenv(ENV_OUTPUT_DIR)
    if _env_output_dir:
        return _env_output_dir

    return os.path.join(os.getcwd(), "runs")


def format_value(value: Any) -> str:
    """Stable text form of a metrics value (repr of floats is round-trip exact)."""

    if isinstance(value, bool):
        return str(int(value))

    if isinstance(value, float):
        return repr(value)

    if value is None:
        return ""

    if isinstance(value, np.floating):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))

    return str(value)


class MetricsWriter:
    """Comma-separated metrics file with a fixed header.

    Rows are written and flushed as they arrive, so a killed run keeps its
    finished rows.
    """

    def __init__(self, file_path: str, columns: Sequence[str], append: bool = False):
        self.file_path = file_path
        self.columns = list(columns)

        _dir = os.path.dirname(os.path.abspath(file_path))
        create_dir(create_dir=_dir)

        _exists = os.path.isfile(file_path) and (0 < os.path.getsize(file_path))
        self._file = open(
            file_path, "a" if append else "w", encoding="utf-8", newline=""
        )
        self._writer = csv.writer(self._file, lineterminator="\n")
        if not (append and _exists):
            self._writer.writerow(self.columns)
            self._file.flush()

    def write(self, **row: Any):
        _unknown = set(row) - set(self.columns)
        if _unknown:
            raise ValueError(
                f"Metrics row has unknown columns {sorted(_unknown)}, expected {self.columns}!"
            )

        self._writer.writerow([format_value(row.get(_col)) for _col in self.columns])
        self._file.flush()

    def close(self):
        if not self._file.closed:
            self._file.close()

    def __enter__(self) -> "MetricsWriter":
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(file_path: str) -> List[Dict[str, str]]:
    """Read a metrics file written by `MetricsWriter`."""

    with open(file_path, "r", encoding="utf-8", newline="") as _file:
        return list(csv.DictReader(_file))
