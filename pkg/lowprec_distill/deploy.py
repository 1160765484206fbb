# -*- coding: utf-8 -*-
"""Integer-only deployment of a trained student.

Batch-norm plus binary step is folded into one integer threshold per feature,
ternary weights are packed two bits per weight, and the readout is quantized to a
power-of-two fixed-point scale. `equivalence_check` confirms the integer network
reproduces the float inference pass bit for bit.
"""

import os
import math
import time
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from ._consts import INT32_MAX, INT32_MIN, DirectionEnum
from ._utils import create_dir
from .exceptions import CorruptFileError, FoldError, MissingInputError, ShapeError, UsageError
from .lowprec import QuantLayer, StudentNetwork
from .netspec import LayerSpec, NetworkSpec
from .tensor_core import argmax_tiebreak, batchnorm, conv2d


MODEL_MAGIC = b"TNF1"
MODEL_VERSION = 1

DEFAULT_READOUT_SCALE = 2**12
MAX_READOUT_SCALE = 2**24
TARGET_AGREEMENT = 0.999


## 2-bit codes: 00 -> 0, 01 -> +1, 10 -> -1, 11 reserved
_VALUE_OF = np.array([0, 1, -1, 0], dtype=np.int8)
_RESERVED_CODE = 3


def pack_ternary(weights) -> bytes:
    """Pack a ternary tensor row-major, four weights per byte, weight i at bits 2*(i % 4)."""

    _flat = np.asarray(weights).reshape(-1)
    if not np.all(np.isin(_flat, (-1, 0, 1))):
        raise UsageError("`weights` argument must hold only -1, 0 and 1!")

    _codes = np.zeros(-(-_flat.size // 4) * 4, dtype=np.uint8)
    _codes[: _flat.size][_flat == 1] = 1
    _codes[: _flat.size][_flat == -1] = 2
    _codes = _codes.reshape(-1, 4)
    _bytes = _codes[:, 0] | (_codes[:, 1] << 2) | (_codes[:, 2] << 4) | (_codes[:, 3] << 6)
    return _bytes.astype(np.uint8).tobytes()


def unpack_ternary(data: bytes, count: int) -> np.ndarray:
    """Inverse of `pack_ternary`; returns `count` int8 weights.

    Raises:
        CorruptFileError: Wrong blob length, reserved code 11, or non-zero padding.
    """

    _expected = -(-count // 4)
    if len(data) != _expected:
        raise CorruptFileError(f"Packed weight blob has {len(data)} bytes, expected {_expected}!")

    _bytes = np.frombuffer(data, dtype=np.uint8)
    _codes = np.stack([(_bytes >> _shift) & 0b11 for _shift in (0, 2, 4, 6)], axis=1).reshape(-1)
    if np.any(_codes == _RESERVED_CODE):
        raise CorruptFileError("Packed weight blob holds the reserved code 11!")
    if np.any(_codes[count:]):
        raise CorruptFileError("Packed weight blob has non-zero padding bits!")

    return _VALUE_OF[_codes[:count]]


def _fire_table(
    mean: np.ndarray, var: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float, fan_in: int
) -> np.ndarray:
    """Float decision for every reachable integer accumulation, shape [C, 2*fan_in + 1]."""

    _r = np.arange(-fan_in, fan_in + 1, dtype=np.float64)
    _x = np.broadcast_to(_r, (1, len(gamma), _r.size))
    return batchnorm(_x, mean, var, gamma, beta, eps, axis=1)[0] >= 0.0


def fold_thresholds(
    mean, var, gamma, beta, eps: float, fan_in: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Solve gamma*(r - mean)/sqrt(var + eps) + beta >= 0 for integer r, per feature.

    gamma > 0: fires iff r >= ceil(mean - beta*sqrt(var + eps)/gamma), direction GE.
    gamma < 0: dividing by gamma flips the inequality, so fires iff
    r <= floor(mean - beta*sqrt(var + eps)/gamma), stored as r < floor(...) + 1, direction LT.
    gamma == 0: the neuron is constant; fires iff beta >= 0.

    The analytic value is then checked against the float decision over the whole
    reachable range [-fan_in, fan_in] and moved to the first integer where the
    decision changes. Thresholds outside that range become INT32_MIN (always fires
    with GE, never with LT) or INT32_MAX (never fires with GE, always with LT).

    Raises:
        FoldError: Non-finite statistics or a decision that is not monotone in r.

    Returns:
        Tuple[np.ndarray, np.ndarray]: (int32 thresholds, uint8 directions).
    """

    _mean, _var, _gamma, _beta = (np.asarray(_a, dtype=np.float64).reshape(-1) for _a in (mean, var, gamma, beta))
    for _name, _a in (("mean", _mean), ("var", _var), ("gamma", _gamma), ("beta", _beta)):
        if not np.all(np.isfinite(_a)):
            raise FoldError(f"Batch-norm `{_name}` has non-finite entries, can't fold!")
    if np.any(_var + eps <= 0):
        raise FoldError("Batch-norm `var + eps` must be positive to fold!")
    if fan_in < 1:
        raise FoldError(f"`fan_in` argument value {fan_in} is invalid, must be >= 1!")

    _table = _fire_table(_mean, _var, _gamma, _beta, eps, fan_in)
    _n = len(_gamma)
    _thresholds = np.zeros(_n, dtype=np.int64)
    _directions = np.zeros(_n, dtype=np.uint8)
    _nudged = 0

    for _c in range(_n):
        _fires = _table[_c]
        _g = _gamma[_c]
        if _g == 0.0:
            _directions[_c] = DirectionEnum.GE
            _thresholds[_c] = INT32_MIN if _beta[_c] >= 0.0 else INT32_MAX
            continue

        with np.errstate(over="ignore"):
            _bound = _mean[_c] - _beta[_c] * math.sqrt(_var[_c] + eps) / _g

        if _g > 0.0:
            if np.any(_fires[:-1] & ~_fires[1:]):
                raise FoldError(f"Feature {_c} decision is not monotone in the accumulation!")
            _directions[_c] = DirectionEnum.GE
            _analytic = math.ceil(_bound) if math.isfinite(_bound) else (INT32_MIN if _bound < 0 else INT32_MAX)
            if _fires[0]:
                _theta = INT32_MIN
            elif not _fires[-1]:
                _theta = INT32_MAX
            else:
                _theta = int(np.argmax(_fires)) - fan_in
        else:
            if np.any(~_fires[:-1] & _fires[1:]):
                raise FoldError(f"Feature {_c} decision is not monotone in the accumulation!")
            _directions[_c] = DirectionEnum.LT
            _analytic = math.floor(_bound) + 1 if math.isfinite(_bound) else (INT32_MIN if _bound < 0 else INT32_MAX)
            if _fires[-1]:
                _theta = INT32_MAX
            elif not _fires[0]:
                _theta = INT32_MIN
            else:
                _theta = int(np.argmin(_fires)) - fan_in

        if (-fan_in < _theta <= fan_in) and (_analytic != _theta):
            _nudged += 1
        _thresholds[_c] = _theta

    if _nudged:
        logger.debug(f"Float rounding moved {_nudged} of {_n} folded thresholds by one step.")

    return _thresholds.astype(np.int32), _directions


def fold_layer(ql: QuantLayer) -> Tuple[np.ndarray, np.ndarray]:
    """Fold a layer's running batch-norm statistics into integer thresholds.

    Raises:
        FoldError: Non-finite running statistics.
    """

    return fold_thresholds(
        ql.bn.running_mean,
        ql.bn.running_var,
        ql.bn.gamma,
        ql.bn.beta,
        ql.bn.eps,
        ql.fan_in,
    )


def fires(accumulation: np.ndarray, thresholds: np.ndarray, directions: np.ndarray, axis: int = 1) -> np.ndarray:
    """Binary decision of folded neurons: r >= theta (GE) or r < theta (LT)."""

    _shape = [1] * accumulation.ndim
    _shape[axis] = -1
    _theta = thresholds.astype(np.int64).reshape(_shape)
    _lt = (directions == DirectionEnum.LT).reshape(_shape)
    return np.where(_lt, accumulation < _theta, accumulation >= _theta).astype(np.uint8)


def _frozen(array: np.ndarray) -> np.ndarray:
    _array = np.array(array)
    _array.setflags(write=False)
    return _array


@dataclass(frozen=True, eq=False)
class DeployedLayer:
    spec: LayerSpec
    in_channels: int
    packed_weights: bytes
    thresholds: np.ndarray
    directions: np.ndarray
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _shape = self.weight_shape
        _weights = unpack_ternary(self.packed_weights, int(np.prod(_shape))).astype(np.int64).reshape(_shape)
        object.__setattr__(self, "weights", _frozen(_weights))
        object.__setattr__(self, "thresholds", _frozen(np.asarray(self.thresholds, dtype=np.int32)))
        object.__setattr__(self, "directions", _frozen(np.asarray(self.directions, dtype=np.uint8)))
        if (self.thresholds.shape != (self.spec.features,)) or (self.directions.shape != (self.spec.features,)):
            raise ShapeError(
                "Deployed layer needs one threshold and direction per feature",
                self.thresholds.shape,
                (self.spec.features,),
            )

    @property
    def weight_shape(self) -> Tuple[int, int, int, int]:
        return (self.spec.features, self.in_channels // self.spec.groups, self.spec.kernel, self.spec.kernel)


@dataclass(frozen=True, eq=False)
class DeployedNetwork:
    """Immutable integer network: packed ternary layers, folded thresholds and a fixed-point readout.

    Attributes:
        spec           (NetworkSpec        ): Geometry the layers were built from.
        layers         (Tuple[DeployedLayer]): Hidden layers.
        readout_weights(np.ndarray         ): int32 [F, A], round(float weight * readout_scale).
        readout_bias   (np.ndarray         ): int32 [A].
        readout_scale  (int                ): Power-of-two fixed-point scale.
        levels         (int                ): Transduction levels the input was built with.
        game           (str                ): Environment name the student was distilled on.
    """

    spec: NetworkSpec
    layers: Tuple[DeployedLayer, ...]
    readout_weights: np.ndarray
    readout_bias: np.ndarray
    readout_scale: int
    levels: int = 4
    game: str = ""

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "readout_weights", _frozen(np.asarray(self.readout_weights, dtype=np.int32)))
        object.__setattr__(self, "readout_bias", _frozen(np.asarray(self.readout_bias, dtype=np.int32)))
        if self.readout_weights.shape != (self.spec.readout_features, self.spec.actions):
            raise ShapeError(
                "Readout weights do not match the spec",
                self.readout_weights.shape,
                (self.spec.readout_features, self.spec.actions),
            )


@dataclass(frozen=True)
class SpikeReport:
    layer_rates: Tuple[float, ...]
    spikes_per_inference: float
    inferences_per_second: float
    n_inferences: int


def _as_binary_batch(spec: NetworkSpec, binary_input) -> Tuple[np.ndarray, bool]:
    _x = np.asarray(binary_input)
    _single = _x.shape == tuple(spec.input_shape)
    if _single:
        _x = _x[np.newaxis]
    if (_x.ndim != 4) or (_x.shape[1:] != tuple(spec.input_shape)):
        raise ShapeError("Deployed input does not match spec input_shape", _x.shape, spec.input_shape)
    if not np.all((_x == 0) | (_x == 1)):
        raise UsageError("Deployed network input must be single-bit features (0 or 1)!")

    return _x.astype(np.uint8), _single


def _run_hidden(dn: DeployedNetwork, x: np.ndarray) -> List[np.ndarray]:
    x = x.astype(np.int64)
    _hidden: List[np.ndarray] = []
    for _layer in dn.layers:
        _acc = conv2d(x, _layer.weights, stride=_layer.spec.stride, pad=_layer.spec.pad, groups=_layer.spec.groups)
        _y = fires(_acc, _layer.thresholds, _layer.directions)
        _hidden.append(_y)
        x = _y.astype(np.int64)

    return _hidden


def _readout(features: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    _flat = features.reshape(features.shape[0], -1).astype(np.int64)
    return _flat @ weights.astype(np.int64) + bias.astype(np.int64)


def integer_forward(dn: DeployedNetwork, binary_input) -> Tuple[np.ndarray, SpikeReport]:
    """Run the deployed network with integer arithmetic only.

    Args:
        dn           (DeployedNetwork, required): Network to run.
        binary_input (array,           required): Transduced input [C,H,W] or [N,C,H,W] of 0/1.

    Raises:
        ShapeError: Input shape does not match the network.
        UsageError: Input is not single-bit.

    Returns:
        Tuple[np.ndarray, SpikeReport]: (int64 action scores [N, A] or [A], spike statistics).
    """

    _x, _single = _as_binary_batch(dn.spec, binary_input)
    _start = time.perf_counter()
    _hidden = _run_hidden(dn, _x)
    _scores = _readout(_hidden[-1], dn.readout_weights, dn.readout_bias)
    _elapsed = time.perf_counter() - _start

    _n = _x.shape[0]
    _report = SpikeReport(
        layer_rates=tuple(float(_h.mean()) for _h in _hidden),
        spikes_per_inference=float(sum(int(_h.sum()) for _h in _hidden)) / _n,
        inferences_per_second=_n / max(_elapsed, 1e-9),
        n_inferences=_n,
    )
    return (_scores[0] if _single else _scores), _report


def _quantize_readout(w: np.ndarray, b: np.ndarray, scale: int) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    _w = np.round(w * scale)
    _b = np.round(b * scale)
    if (np.abs(_w).max(initial=0) > INT32_MAX) or (np.abs(_b).max(initial=0) > INT32_MAX):
        return None

    return _w.astype(np.int32), _b.astype(np.int32)


def random_binary_inputs(shape: Sequence[int], n_samples: int, seed: int = 0) -> np.ndarray:
    """Random single-bit inputs; each sample gets its own firing density."""

    _rng = np.random.default_rng(seed)
    _density = _rng.uniform(0.05, 0.95, size=(n_samples, 1, 1, 1))
    _out = np.empty((n_samples, *shape), dtype=np.uint8)
    for _start in range(0, n_samples, 1024):
        _stop = min(_start + 1024, n_samples)
        _out[_start:_stop] = _rng.random((_stop - _start, *shape)) < _density[_start:_stop]

    return _out


def deploy(
    net: StudentNetwork,
    calibration=None,
    n_calibration: int = 10_000,
    levels: int = 4,
    game: str = "",
    seed: int = 0,
) -> DeployedNetwork:
    """Fold, pack and quantize a trained student.

    The readout scale starts at 2^12 and doubles until greedy actions agree with
    the float network on at least 99.9% of the calibration states, up to 2^24 or
    until an integer weight would overflow int32.

    Args:
        net           (StudentNetwork, required): Trained student with final running statistics.
        calibration   (array,          optional): Binary calibration inputs. Defaults to random inputs.
        n_calibration (int,            optional): Random calibration size when `calibration` is None. Defaults to 10000.
        levels        (int,            optional): Transduction levels recorded in the model. Defaults to 4.
        game          (str,            optional): Game name recorded in the model. Defaults to ''.
        seed          (int,            optional): Seed of the random calibration inputs. Defaults to 0.

    Raises:
        FoldError: A layer can't be folded or the readout doesn't fit int32.

    Returns:
        DeployedNetwork: Immutable integer network.
    """

    _layers = []
    for _idx, _ql in enumerate(net.layers):
        try:
            _thresholds, _directions = fold_layer(_ql)
        except FoldError:
            logger.error(f"Failed to fold layer {_idx} of '{net.spec.tier}' student.")
            raise

        _layers.append(
            DeployedLayer(
                spec=_ql.spec,
                in_channels=_ql.in_channels,
                packed_weights=pack_ternary(_ql.weights.astype(np.int8)),
                thresholds=_thresholds,
                directions=_directions,
            )
        )

    if calibration is None:
        calibration = random_binary_inputs(net.spec.input_shape, n_calibration, seed=seed)
    _calib, _ = _as_binary_batch(net.spec, calibration)

    ## hidden layers are already bit-exact, so only the readout decides agreement
    _probe = DeployedNetwork(
        spec=net.spec,
        layers=tuple(_layers),
        readout_weights=np.zeros((net.spec.readout_features, net.spec.actions), dtype=np.int32),
        readout_bias=np.zeros(net.spec.actions, dtype=np.int32),
        readout_scale=1,
    )
    _features = np.concatenate(
        [_run_hidden(_probe, _calib[_start : _start + 256])[-1] for _start in range(0, _calib.shape[0], 256)]
    )
    _float_q = _features.reshape(_features.shape[0], -1).astype(np.float64) @ net.readout_w + net.readout_b
    _float_actions = argmax_tiebreak(_float_q, axis=1)

    _scale = DEFAULT_READOUT_SCALE
    _best = None
    while _scale <= MAX_READOUT_SCALE:
        _quantized = _quantize_readout(net.readout_w, net.readout_b, _scale)
        if _quantized is None:
            break

        _agreement = float(np.mean(argmax_tiebreak(_readout(_features, *_quantized), axis=1) == _float_actions))
        _best = (_scale, _quantized, _agreement)
        if TARGET_AGREEMENT <= _agreement:
            break
        _scale *= 2

    if _best is None:
        raise FoldError(f"Readout weights don't fit int32 at scale {DEFAULT_READOUT_SCALE}!")

    _scale, (_w_int, _b_int), _agreement = _best
    if _agreement < TARGET_AGREEMENT:
        logger.warning(
            f"Readout scale {_scale} reaches only {_agreement:.4%} argmax agreement on calibration states."
        )
    logger.info(
        f"Deployed '{net.spec.tier}' student: {len(_layers)} layers, readout scale {_scale}, "
        f"calibration agreement {_agreement:.4%}."
    )

    return DeployedNetwork(
        spec=net.spec,
        layers=tuple(_layers),
        readout_weights=_w_int,
        readout_bias=_b_int,
        readout_scale=_scale,
        levels=levels,
        game=game,
    )


@dataclass(frozen=True)
class EquivalenceReport:
    hidden_bitexact: bool
    argmax_agreement: float
    n_samples: int
    mismatched_layers: Tuple[int, ...] = ()
    mismatched_neurons: int = 0


def equivalence_check(
    net: StudentNetwork,
    dn: DeployedNetwork,
    n_samples: int = 1000,
    inputs=None,
    seed: int = 0,
    batch_size: int = 256,
) -> EquivalenceReport:
    """Compare deployed and float inference layer by layer on random (or given) binary inputs."""

    if dn.spec != net.spec:
        logger.warning("Deployed model and student checkpoint have different network specs.")
        return EquivalenceReport(hidden_bitexact=False, argmax_agreement=0.0, n_samples=0)

    if inputs is None:
        inputs = random_binary_inputs(net.spec.input_shape, n_samples, seed=seed)
    _x, _ = _as_binary_batch(net.spec, inputs)

    _mismatched = set()
    _bad_neurons = 0
    _agree = 0
    for _start in range(0, _x.shape[0], batch_size):
        _batch = _x[_start : _start + batch_size]
        _float_q, _float_hidden = net.forward_inference(_batch)
        _int_hidden = _run_hidden(dn, _batch)
        for _idx, (_f, _i) in enumerate(zip(_float_hidden, _int_hidden)):
            _diff = int(np.count_nonzero(_f != _i))
            if _diff:
                _mismatched.add(_idx)
                _bad_neurons += _diff

        _int_q = _readout(_int_hidden[-1], dn.readout_weights, dn.readout_bias)
        _agree += int(np.sum(argmax_tiebreak(_float_q, axis=1) == argmax_tiebreak(_int_q, axis=1)))

    _n = _x.shape[0]
    _report = EquivalenceReport(
        hidden_bitexact=not _mismatched,
        argmax_agreement=_agree / _n if _n else 0.0,
        n_samples=_n,
        mismatched_layers=tuple(sorted(_mismatched)),
        mismatched_neurons=_bad_neurons,
    )
    if _mismatched:
        logger.warning(f"Hidden activations differ in layers {list(_report.mismatched_layers)}.")
    return _report


## Model file ##
_HEAD = struct.Struct("<4sH")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_I64 = struct.Struct("<q")


def _put_text(buffer: bytearray, text: str):
    _data = text.encode("utf-8")
    buffer += _U16.pack(len(_data))
    buffer += _data


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise CorruptFileError("Model file is truncated!")
        _chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return _chunk

    def unpack(self, fmt: struct.Struct):
        return fmt.unpack(self.take(fmt.size))

    def u16(self) -> int:
        return self.unpack(_U16)[0]

    def text(self) -> str:
        try:
            return self.take(self.u16()).decode("utf-8")
        except UnicodeDecodeError as err:
            raise CorruptFileError("Model file holds invalid UTF-8 text!") from err

    def array(self, dtype: str, count: int) -> np.ndarray:
        _dtype = np.dtype(dtype)
        return np.frombuffer(self.take(count * _dtype.itemsize), dtype=_dtype).copy()


def deployed_to_bytes(dn: DeployedNetwork) -> bytes:
    """Serialize to the TNF1 layout.

    magic "TNF1" | version u16 | spec block | levels u16 | game text | per layer:
    packed weight length u32 + blob, int32 thresholds, direction bits (1 = LT,
    little bit order) | readout scale i64 | int32 readout weights [F, A] | int32 bias [A].
    Texts are u16 length + UTF-8; every integer is little-endian.
    """

    _spec = dn.spec
    _buffer = bytearray(_HEAD.pack(MODEL_MAGIC, MODEL_VERSION))
    _put_text(_buffer, _spec.tier)
    _buffer += struct.pack("<4H", *_spec.input_shape, _spec.actions)
    _buffer += _U16.pack(len(_spec.layers))
    for _layer in _spec.layers:
        _buffer += struct.pack("<5H", _layer.features, _layer.kernel, _layer.stride, _layer.pad, _layer.groups)

    _buffer += _U16.pack(dn.levels)
    _put_text(_buffer, dn.game)

    for _layer in dn.layers:
        _buffer += _U32.pack(len(_layer.packed_weights))
        _buffer += _layer.packed_weights
        _buffer += _layer.thresholds.astype("<i4").tobytes()
        _buffer += np.packbits(_layer.directions.astype(np.uint8), bitorder="little").tobytes()

    _buffer += _I64.pack(dn.readout_scale)
    _buffer += dn.readout_weights.astype("<i4").tobytes()
    _buffer += dn.readout_bias.astype("<i4").tobytes()
    return bytes(_buffer)


def deployed_from_bytes(data: bytes) -> DeployedNetwork:
    """Parse a TNF1 model.

    Raises:
        CorruptFileError: Bad magic, unsupported version, reserved weight codes or malformed blocks.
    """

    _reader = _Reader(data)
    _magic, _version = _reader.unpack(_HEAD)
    if _magic != MODEL_MAGIC:
        raise CorruptFileError(f"Model magic {_magic!r} is invalid, must be {MODEL_MAGIC!r}!")
    if _version != MODEL_VERSION:
        raise CorruptFileError(f"Model version {_version} is not supported, must be {MODEL_VERSION}!")

    _tier = _reader.text()
    _c, _h, _w, _actions = _reader.unpack(struct.Struct("<4H"))
    _layer_specs = [
        dict(zip(("features", "kernel", "stride", "pad", "groups"), _reader.unpack(struct.Struct("<5H"))))
        for _ in range(_reader.u16())
    ]
    try:
        _spec = NetworkSpec(tier=_tier, input_shape=(_c, _h, _w), actions=_actions, layers=_layer_specs)
        _spec.feature_shapes()
    except (ValueError, ShapeError) as err:
        raise CorruptFileError(f"Model spec block is invalid: {err}") from err

    _levels = _reader.u16()
    _game = _reader.text()

    _layers = []
    for _idx, _layer_spec in enumerate(_spec.layers):
        _in_channels = _spec.source_features(_idx)
        _packed = _reader.take(_reader.unpack(_U32)[0])
        _thresholds = _reader.array("<i4", _layer_spec.features)
        _bits = np.frombuffer(_reader.take(-(-_layer_spec.features // 8)), dtype=np.uint8)
        _directions = np.unpackbits(_bits, bitorder="little")
        if np.any(_directions[_layer_spec.features :]):
            raise CorruptFileError(f"Layer {_idx} direction block has non-zero padding bits!")
        try:
            _layers.append(
                DeployedLayer(
                    spec=_layer_spec,
                    in_channels=_in_channels,
                    packed_weights=_packed,
                    thresholds=_thresholds,
                    directions=_directions[: _layer_spec.features],
                )
            )
        except ShapeError as err:
            raise CorruptFileError(f"Layer {_idx} block is invalid: {err}") from err

    _scale = _reader.unpack(_I64)[0]
    if _scale < 1:
        raise CorruptFileError(f"Readout scale {_scale} is invalid, must be >= 1!")
    _weights = _reader.array("<i4", _spec.readout_features * _spec.actions).reshape(_spec.readout_features, _spec.actions)
    _bias = _reader.array("<i4", _spec.actions)
    if _reader.offset != len(data):
        raise CorruptFileError("Model file has trailing bytes!")

    return DeployedNetwork(
        spec=_spec,
        layers=tuple(_layers),
        readout_weights=_weights,
        readout_bias=_bias,
        readout_scale=_scale,
        levels=_levels,
        game=_game,
    )


def save_deployed(dn: DeployedNetwork, file_path: str) -> str:
    create_dir(create_dir=os.path.dirname(os.path.abspath(file_path)))
    with open(file_path, "wb") as _file:
        _file.write(deployed_to_bytes(dn))

    logger.debug(f"Saved deployed model to '{file_path}'.")
    return file_path


def load_deployed(file_path: str) -> DeployedNetwork:
    if not os.path.isfile(file_path):
        raise MissingInputError(f"Model file '{file_path}' not found!")

    with open(file_path, "rb") as _file:
        _data = _file.read()

    try:
        return deployed_from_bytes(_data)
    except CorruptFileError:
        logger.critical(f"Failed to load '{file_path}' model file.")
        raise


__all__ = [
    "pack_ternary",
    "unpack_ternary",
    "fold_thresholds",
    "fold_layer",
    "fires",
    "DeployedLayer",
    "DeployedNetwork",
    "SpikeReport",
    "integer_forward",
    "random_binary_inputs",
    "deploy",
    "EquivalenceReport",
    "equivalence_check",
    "deployed_to_bytes",
    "deployed_from_bytes",
    "save_deployed",
    "load_deployed",
]
