# -*- coding: utf-8 -*-
"""Frame preprocessing, 4-frame history stacking and thermometer transduction."""

from typing import Optional, Tuple

import numpy as np

from ._consts import HISTORY_LENGTH
from .exceptions import ShapeError, UsageError


def _axis_weights(size_in: int, size_out: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    ## half-pixel centres, clamped to the edge pixels
    _src = (np.arange(size_out, dtype=np.float64) + 0.5) * (size_in / size_out) - 0.5
    _src = np.clip(_src, 0.0, size_in - 1)
    _i0 = np.floor(_src).astype(np.int64)
    _i1 = np.minimum(_i0 + 1, size_in - 1)
    return _i0, _i1, _src - _i0


def bilinear_resize(image: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    """Separable bilinear rescale of a 2-D float image."""

    _img = np.asarray(image, dtype=np.float64)
    _h, _w = shape
    if (_h < 1) or (_w < 1):
        raise UsageError(f"`shape` argument value {shape} is invalid, must be positive!")
    if _img.shape == (_h, _w):
        return _img.copy()

    _r0, _r1, _fr = _axis_weights(_img.shape[0], _h)
    _c0, _c1, _fc = _axis_weights(_img.shape[1], _w)

    _top = _img[_r0]
    _rows = _top + _fr[:, np.newaxis] * (_img[_r1] - _top)
    _left = _rows[:, _c0]
    return _left + _fc[np.newaxis, :] * (_rows[:, _c1] - _left)


def bilinear_resize_reference(image: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    """Pixel-by-pixel bilinear rescale; the oracle for `bilinear_resize`."""

    _img = np.asarray(image, dtype=np.float64)
    _h_in, _w_in = _img.shape
    _h, _w = shape
    _out = np.zeros((_h, _w), dtype=np.float64)
    for _i in range(_h):
        _y = min(max((_i + 0.5) * _h_in / _h - 0.5, 0.0), _h_in - 1)
        _y0 = int(np.floor(_y))
        _y1 = min(_y0 + 1, _h_in - 1)
        _fy = _y - _y0
        for _j in range(_w):
            _x = min(max((_j + 0.5) * _w_in / _w - 0.5, 0.0), _w_in - 1)
            _x0 = int(np.floor(_x))
            _x1 = min(_x0 + 1, _w_in - 1)
            _fx = _x - _x0
            _a = _img[_y0, _x0] + _fy * (_img[_y1, _x0] - _img[_y0, _x0])
            _b = _img[_y0, _x1] + _fy * (_img[_y1, _x1] - _img[_y0, _x1])
            _out[_i, _j] = _a + _fx * (_b - _a)

    return _out


def preprocess(frame, target_shape: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """Scale an 8-bit grayscale frame to [0, 1] and rescale it.

    Args:
        frame        (array, required): [H, W] pixel grid with values in [0, 255].
        target_shape (tuple, optional): Output [H', W']. Defaults to the native size.

    Returns:
        np.ndarray: float64 [H', W'] in [0, 1].
    """

    _frame = np.asarray(frame)
    if _frame.ndim != 2:
        raise ShapeError("Frames must be 2-D grayscale grids", _frame.shape, ("H", "W"))

    _scaled = _frame.astype(np.float64) / 255.0
    if (target_shape is None) or (tuple(target_shape) == _scaled.shape):
        return _scaled

    return np.clip(bilinear_resize(_scaled, tuple(target_shape)), 0.0, 1.0)


def preprocess_stack(stack, target_shape: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """`preprocess` applied to every frame of a [..., 4, H, W] raw stack."""

    _stack = np.asarray(stack)
    _lead = _stack.shape[:-2]
    _frames = _stack.reshape(-1, *_stack.shape[-2:])
    _out = np.stack([preprocess(_f, target_shape) for _f in _frames])
    return _out.reshape(*_lead, *_out.shape[-2:])


def stack(history: Optional[np.ndarray], new_frame) -> np.ndarray:
    """Push a frame into a 4-frame history, oldest first.

    A missing history is filled with copies of `new_frame`.
    """

    _new = np.asarray(new_frame)
    if history is None:
        return np.repeat(_new[np.newaxis], HISTORY_LENGTH, axis=0)

    _history = np.asarray(history)
    if _history.shape != (HISTORY_LENGTH, *_new.shape):
        raise ShapeError("Frame history and new frame do not match", _history.shape, _new.shape)

    return np.concatenate([_history[1:], _new[np.newaxis]], axis=0)


class FrameStack:
    """FIFO of the last 4 raw frames, channel order oldest to newest."""

    def __init__(self):
        self.frames: Optional[np.ndarray] = None

    def reset(self, frame) -> np.ndarray:
        self.frames = stack(None, frame)
        return self.frames

    def push(self, frame) -> np.ndarray:
        if self.frames is None:
            raise UsageError("FrameStack must be reset before pushing frames!")

        self.frames = stack(self.frames, frame)
        return self.frames


def transduce(obs, levels: int = 4) -> np.ndarray:
    """Thermometer-code a [..., 4, H, W] observation in [0, 1] into single-bit features.

    Bit k (k = 0 .. L-1) fires iff pixel >= (k + 1) / L. Channels are frame-major:
    channel f*L + k holds bit k of frame f.

    Returns:
        np.ndarray: uint8 [..., 4*L, H, W].
    """

    if levels < 1:
        raise UsageError(f"`levels` argument value {levels} is invalid, must be >= 1!")

    _obs = np.asarray(obs, dtype=np.float64)
    if _obs.ndim < 3:
        raise ShapeError("Observations must be [..., frames, H, W]", _obs.shape, ("F", "H", "W"))

    _thresholds = (np.arange(levels, dtype=np.float64) + 1.0) / levels
    _bits = _obs[..., :, np.newaxis, :, :] >= _thresholds[:, np.newaxis, np.newaxis]
    _shape = _obs.shape[:-3] + (_obs.shape[-3] * levels,) + _obs.shape[-2:]
    return _bits.reshape(_shape).astype(np.uint8)


def pack_bits(binary: np.ndarray) -> np.ndarray:
    """Pack [N, ...] binary samples into [N, ceil(size/8)] uint8 rows."""

    _b = np.asarray(binary, dtype=np.uint8)
    return np.packbits(_b.reshape(_b.shape[0], -1), axis=1, bitorder="little")


def unpack_bits(packed: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    _count = int(np.prod(shape))
    _bits = np.unpackbits(np.asarray(packed, dtype=np.uint8), axis=1, count=_count, bitorder="little")
    return _bits.reshape(_bits.shape[0], *shape)


__all__ = [
    "bilinear_resize",
    "bilinear_resize_reference",
    "preprocess",
    "preprocess_stack",
    "stack",
    "FrameStack",
    "transduce",
    "pack_bits",
    "unpack_bits",
]
