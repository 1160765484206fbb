# -*- coding: utf-8 -*-
"""Dense tensor arithmetic shared by the teacher, the student and the deployed network.

Tensors are row-major `numpy.ndarray` objects; training paths use float64.
`conv2d` keeps the dtype of its inputs so the integer deploy path can reuse it.
"""

from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ShapeError, UsageError


Tensor = np.ndarray


def check_finite(x: Tensor, name: str = "tensor") -> Tensor:
    """Raise `FloatingPointError` if a float tensor holds NaN or Inf."""

    if np.issubdtype(x.dtype, np.floating) and (not np.all(np.isfinite(x))):
        raise FloatingPointError(f"`{name}` contains non-finite values!")

    return x


def as_tensor(x, name: str = "tensor") -> Tensor:
    """Return `x` as a C-contiguous float64 array with finite values."""

    _x = np.ascontiguousarray(x, dtype=np.float64)
    return check_finite(_x, name=name)


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    _out = (size + 2 * pad - kernel) // stride + 1
    if _out < 1:
        raise ShapeError(
            f"Kernel {kernel} with stride {stride} and pad {pad} does not fit input size {size}!"
        )

    return _out


def _check_conv_args(
    x: Tensor, w: Tensor, stride: int, pad: int, groups: int
) -> Tuple[Tensor, bool]:
    if stride < 1:
        raise UsageError(f"`stride` argument value {stride} is invalid, must be >= 1!")
    if pad < 0:
        raise UsageError(f"`pad` argument value {pad} is invalid, must be >= 0!")
    if groups < 1:
        raise UsageError(f"`groups` argument value {groups} is invalid, must be >= 1!")

    _batched = x.ndim == 4
    if x.ndim == 3:
        x = x[np.newaxis]
    elif x.ndim != 4:
        raise ShapeError("conv2d input must be [C,H,W] or [N,C,H,W]", x.shape, w.shape)

    if w.ndim != 4:
        raise ShapeError("conv2d weights must be [C_out,C_in/G,kh,kw]", x.shape, w.shape)

    _c_in = x.shape[1]
    _c_out = w.shape[0]
    if (_c_in % groups) or (_c_out % groups):
        raise ShapeError(
            f"conv2d channels must be divisible by groups={groups}", x.shape, w.shape
        )
    if w.shape[1] != _c_in // groups:
        raise ShapeError(
            f"conv2d weights expect {w.shape[1] * groups} input channels with groups={groups}",
            x.shape,
            w.shape,
        )

    conv_output_size(x.shape[2], w.shape[2], stride, pad)
    conv_output_size(x.shape[3], w.shape[3], stride, pad)
    return x, _batched


def conv2d_reference(
    x: Tensor, w: Tensor, stride: int = 1, pad: int = 0, groups: int = 1
) -> Tensor:
    """Grouped 2-D convolution as direct loops; the oracle for `conv2d`."""

    _x, _batched = _check_conv_args(x, w, stride, pad, groups)
    _n, _c_in, _h, _w = _x.shape
    _c_out, _cg, _kh, _kw = w.shape
    _og = _c_out // groups
    _ho = conv_output_size(_h, _kh, stride, pad)
    _wo = conv_output_size(_w, _kw, stride, pad)

    _out = np.zeros((_n, _c_out, _ho, _wo), dtype=np.result_type(_x, w))
    for _b in range(_n):
        for _o in range(_c_out):
            _g = _o // _og
            for _i in range(_ho):
                for _j in range(_wo):
                    _acc = _out.dtype.type(0)
                    for _c in range(_cg):
                        _ci = _g * _cg + _c
                        for _u in range(_kh):
                            _row = _i * stride + _u - pad
                            if (_row < 0) or (_row >= _h):
                                continue
                            for _v in range(_kw):
                                _col = _j * stride + _v - pad
                                if (_col < 0) or (_col >= _w):
                                    continue
                                _acc += _x[_b, _ci, _row, _col] * w[_o, _c, _u, _v]
                    _out[_b, _o, _i, _j] = _acc

    return _out if _batched else _out[0]


def _windows(x: Tensor, kh: int, kw: int, stride: int, pad: int) -> Tensor:
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))

    ## (N, C, H', W', kh, kw) view; no copy until reshaped by einsum
    return sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def conv2d(
    x: Tensor, w: Tensor, stride: int = 1, pad: int = 0, groups: int = 1
) -> Tensor:
    """Grouped 2-D convolution (cross-correlation), im2col fast path.

    Args:
        x      (Tensor, required): Input [C_in,H,W] or [N,C_in,H,W].
        w      (Tensor, required): Weights [C_out,C_in/G,kh,kw].
        stride (int,    optional): Stride. Defaults to 1.
        pad    (int,    optional): Zero padding on every side. Defaults to 0.
        groups (int,    optional): Channel groups G. Defaults to 1.

    Raises:
        ShapeError: Input and weight shapes are incompatible.

    Returns:
        Tensor: Output [C_out,H',W'] (or batched), H' = (H + 2*pad - kh) // stride + 1.
    """

    _x, _batched = _check_conv_args(x, w, stride, pad, groups)
    _n, _c_in = _x.shape[:2]
    _c_out, _cg, _kh, _kw = w.shape

    _win = _windows(_x, _kh, _kw, stride, pad)
    _ho, _wo = _win.shape[2:4]
    _win = _win.reshape(_n, groups, _cg, _ho, _wo, _kh, _kw)
    _wg = w.reshape(groups, _c_out // groups, _cg, _kh, _kw)

    _out = np.einsum("ngchwij,gocij->ngohw", _win, _wg, optimize=True)
    _out = np.ascontiguousarray(_out.reshape(_n, _c_out, _ho, _wo))
    check_finite(_out, name="conv2d output")
    return _out if _batched else _out[0]


def conv2d_backward(
    x: Tensor,
    w: Tensor,
    dout: Tensor,
    stride: int = 1,
    pad: int = 0,
    groups: int = 1,
    need_input_grad: bool = True,
) -> Tuple[Optional[Tensor], Tensor]:
    """Gradients of `conv2d` with respect to its input and weights.

    Returns:
        Tuple[Optional[Tensor], Tensor]: (dL/dx or None, dL/dw).
    """

    _x, _batched = _check_conv_args(x, w, stride, pad, groups)
    _n, _c_in, _h, _w = _x.shape
    _c_out, _cg, _kh, _kw = w.shape
    _og = _c_out // groups

    _win = _windows(_x, _kh, _kw, stride, pad)
    _ho, _wo = _win.shape[2:4]
    _dout = dout if _batched else dout[np.newaxis]
    if _dout.shape != (_n, _c_out, _ho, _wo):
        raise ShapeError("conv2d upstream gradient has wrong shape", _dout.shape, (_n, _c_out, _ho, _wo))

    _win = _win.reshape(_n, groups, _cg, _ho, _wo, _kh, _kw)
    _wg = w.reshape(groups, _og, _cg, _kh, _kw)
    _doutg = _dout.reshape(_n, groups, _og, _ho, _wo)

    _dw = np.einsum("ngohw,ngchwij->gocij", _doutg, _win, optimize=True).reshape(w.shape)

    _dx = None
    if need_input_grad:
        _dcols = np.einsum("ngohw,gocij->ngchwij", _doutg, _wg, optimize=True)
        _dcols = _dcols.reshape(_n, _c_in, _ho, _wo, _kh, _kw)
        _dxp = np.zeros((_n, _c_in, _h + 2 * pad, _w + 2 * pad), dtype=_dcols.dtype)
        _h_span = stride * (_ho - 1) + 1
        _w_span = stride * (_wo - 1) + 1
        for _u in range(_kh):
            for _v in range(_kw):
                _dxp[:, :, _u : _u + _h_span : stride, _v : _v + _w_span : stride] += _dcols[..., _u, _v]

        _dx = _dxp[:, :, pad : pad + _h, pad : pad + _w]
        _dx = np.ascontiguousarray(_dx if _batched else _dx[0])

    return _dx, _dw


def _channel_shape(x: Tensor, axis: int) -> Sequence[int]:
    _shape = [1] * x.ndim
    _shape[axis] = x.shape[axis]
    return _shape


def batchnorm(
    x: Tensor,
    mean: Tensor,
    var: Tensor,
    gamma: Tensor,
    beta: Tensor,
    eps: float,
    axis: int = 1,
) -> Tensor:
    """Per-channel affine normalization y = gamma*(x - mean)/sqrt(var + eps) + beta.

    The deploy fold evaluates this exact expression, so its operation order is fixed.
    """

    if np.any(np.asarray(var) < 0):
        raise UsageError("`var` argument has negative entries!")
    if eps < 0:
        raise UsageError(f"`eps` argument value {eps} is invalid, must be >= 0!")

    _shape = _channel_shape(x, axis)
    for _name, _param in (("mean", mean), ("var", var), ("gamma", gamma), ("beta", beta)):
        if np.size(_param) != x.shape[axis]:
            raise ShapeError(f"batchnorm `{_name}` must have one entry per channel", x.shape, np.shape(_param))

    _denom = np.sqrt(np.reshape(var, _shape) + eps)
    if np.any(_denom == 0):
        raise UsageError("batchnorm `var + eps` is zero for some channel!")

    _y = np.reshape(gamma, _shape) * (x - np.reshape(mean, _shape)) / _denom + np.reshape(beta, _shape)
    return check_finite(_y, name="batchnorm output")


class BatchNorm:
    """Batch normalization with running statistics.

    Training mode normalizes with batch statistics (population variance) and
    folds them into the running statistics with `momentum`; inference mode uses
    the running statistics.
    """

    def __init__(self, num_features: int, momentum: float = 0.9, eps: float = 1e-5):
        if not (0.0 <= momentum < 1.0):
            raise UsageError(f"`momentum` argument value {momentum} is invalid, must be in [0, 1)!")
        if eps <= 0:
            raise UsageError(f"`eps` argument value {eps} is invalid, must be > 0!")

        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps
        self.gamma = np.ones(num_features, dtype=np.float64)
        self.beta = np.zeros(num_features, dtype=np.float64)
        self.running_mean = np.zeros(num_features, dtype=np.float64)
        self.running_var = np.ones(num_features, dtype=np.float64)

    def forward(
        self, x: Tensor, training: bool = False, update_running: bool = True, axis: int = 1
    ) -> Tuple[Tensor, Optional[dict]]:
        if not training:
            _y = batchnorm(x, self.running_mean, self.running_var, self.gamma, self.beta, self.eps, axis=axis)
            return _y, None

        _reduce = tuple(_a for _a in range(x.ndim) if _a != axis)
        _shape = _channel_shape(x, axis)
        _mean = x.mean(axis=_reduce)
        _var = x.var(axis=_reduce)
        _inv_std = 1.0 / np.sqrt(_var + self.eps)
        _xhat = (x - _mean.reshape(_shape)) * _inv_std.reshape(_shape)
        _y = self.gamma.reshape(_shape) * _xhat + self.beta.reshape(_shape)
        check_finite(_y, name="batchnorm output")

        if update_running:
            self.update_running(_mean, _var)

        _cache = {
            "xhat": _xhat,
            "inv_std": _inv_std,
            "axis": axis,
            "count": x.size // x.shape[axis],
            "batch_mean": _mean,
            "batch_var": _var,
        }
        return _y, _cache

    def update_running(self, batch_mean: Tensor, batch_var: Tensor):
        self.running_mean = self.momentum * self.running_mean + (1.0 - self.momentum) * batch_mean
        self.running_var = self.momentum * self.running_var + (1.0 - self.momentum) * batch_var

    def backward(self, dy: Tensor, cache: dict) -> Tuple[Tensor, Tensor, Tensor]:
        """Gradients through batch statistics.

        Returns:
            Tuple[Tensor, Tensor, Tensor]: (dL/dx, dL/dgamma, dL/dbeta).
        """

        _axis = cache["axis"]
        _reduce = tuple(_a for _a in range(dy.ndim) if _a != _axis)
        _shape = _channel_shape(dy, _axis)
        _xhat = cache["xhat"]
        _m = cache["count"]

        _dbeta = dy.sum(axis=_reduce)
        _dgamma = (dy * _xhat).sum(axis=_reduce)
        _dxhat = dy * self.gamma.reshape(_shape)
        _dx = (
            cache["inv_std"].reshape(_shape)
            / _m
            * (
                _m * _dxhat
                - _dxhat.sum(axis=_reduce).reshape(_shape)
                - _xhat * (_dxhat * _xhat).sum(axis=_reduce).reshape(_shape)
            )
        )
        return _dx, _dgamma, _dbeta


def softmax(v, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max-subtracted)."""

    _v = np.asarray(v, dtype=np.float64)
    _shifted = _v - np.max(_v, axis=axis, keepdims=True)
    _exp = np.exp(_shifted)
    return _exp / np.sum(_exp, axis=axis, keepdims=True)


def log_softmax(v, axis: int = -1) -> Tensor:
    _v = np.asarray(v, dtype=np.float64)
    _shifted = _v - np.max(_v, axis=axis, keepdims=True)
    return _shifted - np.log(np.sum(np.exp(_shifted), axis=axis, keepdims=True))


def argmax_tiebreak(v, axis: int = -1):
    """Index of the maximum, ties broken by the lowest index.

    Raises:
        UsageError: `v` is empty along `axis`.
    """

    _v = np.asarray(v)
    if (_v.ndim == 0) or (_v.shape[axis] == 0):
        raise UsageError("`argmax_tiebreak` needs a non-empty vector!")

    _idx = np.argmax(_v, axis=axis)
    return int(_idx) if np.ndim(_idx) == 0 else _idx
