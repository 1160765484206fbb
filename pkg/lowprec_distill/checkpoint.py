# -*- coding: utf-8 -*-
"""Versioned, byte-deterministic checkpoint files for float64 parameter sets.

Layout: magic (4 bytes) | version u16 | header length u32 | JSON header | array blobs.
The JSON header lists every array's name, dtype and shape in write order; blobs are
little-endian and row-major.
"""

import os
import json
import struct
from typing import Any, Dict, Optional, Tuple

import numpy as np
from loguru import logger

from ._utils import create_dir
from .exceptions import CorruptFileError, MissingInputError


CHECKPOINT_MAGIC = b"LDCK"
CHECKPOINT_VERSION = 1

_PREFIX = struct.Struct("<4sHI")
_DTYPES = {"f8": "<f8", "i8": "<i8", "u1": "|u1"}


def _dtype_code(array: np.ndarray) -> str:
    if np.issubdtype(array.dtype, np.floating):
        return "f8"
    if array.dtype == np.uint8:
        return "u1"
    if np.issubdtype(array.dtype, np.integer):
        return "i8"

    raise TypeError(f"Array dtype {array.dtype} is not supported in checkpoints!")


def checkpoint_to_bytes(kind: str, arrays: Dict[str, np.ndarray], meta: Optional[Dict[str, Any]] = None) -> bytes:
    _entries = []
    _blobs = []
    for _name, _array in arrays.items():
        _array = np.asarray(_array)
        _code = _dtype_code(_array)
        _entries.append([_name, _code, list(_array.shape)])
        _blobs.append(np.ascontiguousarray(_array, dtype=_DTYPES[_code]).tobytes())

    _header = json.dumps(
        {"kind": kind, "meta": meta or {}, "arrays": _entries},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    return _PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(_header)) + _header + b"".join(_blobs)


def checkpoint_from_bytes(data: bytes, expected_kind: Optional[str] = None) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    if len(data) < _PREFIX.size:
        raise CorruptFileError("Checkpoint is truncated before its header!")

    _magic, _version, _header_len = _PREFIX.unpack_from(data, 0)
    if _magic != CHECKPOINT_MAGIC:
        raise CorruptFileError(f"Checkpoint magic {_magic!r} is invalid, must be {CHECKPOINT_MAGIC!r}!")
    if _version != CHECKPOINT_VERSION:
        raise CorruptFileError(f"Checkpoint version {_version} is not supported, must be {CHECKPOINT_VERSION}!")

    _offset = _PREFIX.size
    try:
        _header = json.loads(data[_offset : _offset + _header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CorruptFileError("Checkpoint header is not valid JSON!") from err
    _offset += _header_len

    if (not isinstance(_header, dict)) or (not isinstance(_header.get("arrays"), list)):
        raise CorruptFileError("Checkpoint header must be an object with an `arrays` list!")
    if not isinstance(_header.get("meta", {}), dict):
        raise CorruptFileError("Checkpoint header `meta` must be an object!")

    if (expected_kind is not None) and (_header.get("kind") != expected_kind):
        raise CorruptFileError(
            f"Checkpoint kind '{_header.get('kind')}' is invalid, expected '{expected_kind}'!"
        )

    _arrays: Dict[str, np.ndarray] = {}
    try:
        for _name, _code, _shape in _header["arrays"]:
            if _code not in _DTYPES:
                raise CorruptFileError(f"Checkpoint array '{_name}' has unknown dtype code '{_code}'!")
            if (not isinstance(_shape, list)) or any((not isinstance(_d, int)) or (_d < 0) for _d in _shape):
                raise CorruptFileError(f"Checkpoint array '{_name}' has invalid shape {_shape}!")

            _dtype = np.dtype(_DTYPES[_code])
            _count = int(np.prod(_shape)) if _shape else 1
            _size = _count * _dtype.itemsize
            if _offset + _size > len(data):
                raise CorruptFileError(f"Checkpoint array '{_name}' is truncated!")
            _arrays[str(_name)] = np.frombuffer(data, dtype=_dtype, count=_count, offset=_offset).reshape(_shape).copy()
            _offset += _size
    except CorruptFileError:
        raise
    except (TypeError, ValueError) as err:
        raise CorruptFileError(f"Checkpoint array table is malformed: {err}") from err

    if _offset != len(data):
        raise CorruptFileError("Checkpoint has trailing bytes!")

    _meta = _header.get("meta", {})
    _meta["kind"] = _header.get("kind")
    return _meta, _arrays


def save_checkpoint(file_path: str, kind: str, arrays: Dict[str, np.ndarray], meta: Optional[Dict[str, Any]] = None) -> str:
    create_dir(create_dir=os.path.dirname(os.path.abspath(file_path)))
    with open(file_path, "wb") as _file:
        _file.write(checkpoint_to_bytes(kind, arrays, meta))

    logger.debug(f"Saved '{kind}' checkpoint to '{file_path}'.")
    return file_path


def load_checkpoint(file_path: str, expected_kind: Optional[str] = None) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    if not os.path.isfile(file_path):
        raise MissingInputError(f"Checkpoint file '{file_path}' not found!")

    with open(file_path, "rb") as _file:
        _data = _file.read()

    try:
        return checkpoint_from_bytes(_data, expected_kind=expected_kind)
    except CorruptFileError:
        logger.critical(f"Failed to load '{file_path}' checkpoint file.")
        raise
