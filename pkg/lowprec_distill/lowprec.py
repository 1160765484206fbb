# -*- coding: utf-8 -*-
"""Constrained student layers: ternary weights trained through clipped float
proxies, binary step activations with a triangular surrogate derivative, and a
spike-sparsity penalty."""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from .checkpoint import load_checkpoint, save_checkpoint
from .exceptions import CorruptFileError, ShapeError, UsageError
from .netspec import LayerSpec, NetworkSpec, spec_from_text, spec_to_text, validate_fanin
from .tensor_core import BatchNorm, Tensor, batchnorm, conv2d, conv2d_backward


def ternarize(w_h):
    """Map proxy weights to {-1, 0, 1}: clip to [-1, 1], round half away from zero."""

    _c = np.clip(np.asarray(w_h, dtype=np.float64), -1.0, 1.0)
    return np.sign(_c) * np.floor(np.abs(_c) + 0.5)


def binary_step(r, theta: float = 0.0):
    """1 where r >= theta (the boundary fires), else 0."""

    return (np.asarray(r) >= theta).astype(np.float64)


def step_surrogate_grad(r):
    """Triangular stand-in for d(step)/dr: max(0, 1 - |r|)."""

    return np.maximum(0.0, 1.0 - np.abs(np.asarray(r, dtype=np.float64)))


def step_relaxation(r):
    """Piecewise-quadratic F with F' = max(0, 1 - |r|), F(-inf) = 0, F(+inf) = 1."""

    _r = np.clip(np.asarray(r, dtype=np.float64), -1.0, 1.0)
    return np.where(_r <= 0.0, 0.5 * (1.0 + _r) ** 2, 1.0 - 0.5 * (1.0 - _r) ** 2)


def sparsity_penalty(activations: Sequence[Tensor], eta: float) -> Tuple[float, List[Tensor]]:
    """eta/2 * sum over neurons of the squared batch-mean activation.

    Args:
        activations (Sequence[Tensor], required): Per-layer activations, batch first.
        eta         (float,            required): Penalty weight, >= 0.

    Returns:
        Tuple[float, List[Tensor]]: (penalty, dPenalty/dActivation per layer).
    """

    if eta < 0:
        raise UsageError(f"`eta` argument value {eta} is invalid, must be >= 0!")

    _loss = 0.0
    _grads: List[Tensor] = []
    for _y in activations:
        _n = _y.shape[0]
        _mean = _y.mean(axis=0)
        _loss += 0.5 * eta * float(np.sum(_mean * _mean))
        _grads.append(np.broadcast_to(eta * _mean / _n, _y.shape).copy())

    return _loss, _grads


class QuantLayer:
    """One constrained convolution with its batch-norm and optimizer state.

    `proxy` holds the float shadow weights in [-1, 1]; `weights` is always
    `ternarize(proxy)` and is what the forward and backward passes use.
    """

    PARAM_NAMES = ("proxy", "gamma", "beta")

    def __init__(
        self,
        spec: LayerSpec,
        in_channels: int,
        rng: np.random.Generator,
        bn_momentum: float = 0.9,
        bn_eps: float = 1e-5,
    ):
        self.spec = spec
        self.in_channels = in_channels
        _shape = (spec.features, in_channels // spec.groups, spec.kernel, spec.kernel)
        self.proxy = rng.uniform(-1.0, 1.0, size=_shape)
        self.weights = ternarize(self.proxy)
        self.bn = BatchNorm(spec.features, momentum=bn_momentum, eps=bn_eps)
        self.velocity: Dict[str, Tensor] = {
            "proxy": np.zeros(_shape),
            "gamma": np.zeros(spec.features),
            "beta": np.zeros(spec.features),
        }

    @property
    def fan_in(self) -> int:
        return int(np.prod(self.weights.shape[1:]))

    def sync_ternary(self):
        self.weights = ternarize(self.proxy)

    def conv(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weights, stride=self.spec.stride, pad=self.spec.pad, groups=self.spec.groups)

    def get_param(self, name: str) -> Tensor:
        if name == "proxy":
            return self.proxy
        return getattr(self.bn, name)

    def set_param(self, name: str, value: Tensor):
        if name == "proxy":
            self.proxy = value
        else:
            setattr(self.bn, name, value)

    def check_invariants(self):
        if not np.all((-1.0 <= self.proxy) & (self.proxy <= 1.0)):
            raise RuntimeError("Proxy weights left [-1, 1]!")
        if not np.array_equal(self.weights, ternarize(self.proxy)):
            raise RuntimeError("Ternary weights are out of sync with their proxies!")
        if not np.all(np.isin(self.weights, (-1.0, 0.0, 1.0))):
            raise RuntimeError("Ternary weights hold values outside {-1, 0, 1}!")


@dataclass
class ForwardCache:
    version: int
    relaxed: bool
    inputs: List[Tensor] = field(default_factory=list)
    responses: List[Tensor] = field(default_factory=list)
    bn_caches: List[dict] = field(default_factory=list)
    activations: List[Tensor] = field(default_factory=list)
    features: Optional[Tensor] = None
    penalty: float = 0.0
    penalty_grads: List[Tensor] = field(default_factory=list)


@dataclass
class StudentGrads:
    layers: List[Dict[str, Tensor]]
    readout_w: Tensor
    readout_b: Tensor


class StudentNetwork:
    """Stack of `QuantLayer`s followed by a full-precision linear readout.

    Hidden layers compute conv (ternary weights) -> batch-norm -> binary step at
    threshold 0. The readout maps the flattened last feature map to one value
    per action.

    Attributes:
        spec    (NetworkSpec     ): Layer table.
        layers  (List[QuantLayer]): Constrained layers.
        readout_w, readout_b      : Readout weights [F, A] and bias [A].
        eta     (float           ): Sparsity penalty weight.
        version (int             ): Bumped by every optimizer step; caches from older versions are stale.
    """

    def __init__(
        self,
        spec: NetworkSpec,
        eta: float = 1e-4,
        seed: int = 0,
        bn_momentum: float = 0.9,
        bn_eps: float = 1e-5,
        debug: bool = False,
    ):
        _violations = validate_fanin(spec)
        if _violations:
            raise UsageError(
                f"Network spec '{spec.tier}' violates fan-in constraints: "
                + "; ".join(f"layer {_v.layer_index}: {_v.reason} {_v.fan_in} > {_v.bound}" for _v in _violations)
            )
        if eta < 0:
            raise UsageError(f"`eta` argument value {eta} is invalid, must be >= 0!")

        self.spec = spec
        self.eta = eta
        self.debug = debug
        self.version = 0
        self.feature_shapes = spec.feature_shapes()

        _rng = np.random.default_rng(seed)
        self.layers: List[QuantLayer] = []
        _in_channels = spec.input_shape[0]
        for _layer_spec in spec.layers:
            self.layers.append(
                QuantLayer(_layer_spec, _in_channels, _rng, bn_momentum=bn_momentum, bn_eps=bn_eps)
            )
            _in_channels = _layer_spec.features

        _n_features = spec.readout_features
        _bound = 1.0 / np.sqrt(_n_features)
        self.readout_w = _rng.uniform(-_bound, _bound, size=(_n_features, spec.actions))
        self.readout_b = np.zeros(spec.actions)
        self.readout_velocity = {"w": np.zeros_like(self.readout_w), "b": np.zeros_like(self.readout_b)}

    def _as_batch(self, batch) -> Tensor:
        _x = np.asarray(batch, dtype=np.float64)
        if _x.shape == tuple(self.spec.input_shape):
            _x = _x[np.newaxis]
        if (_x.ndim != 4) or (_x.shape[1:] != tuple(self.spec.input_shape)):
            raise ShapeError("Student input does not match spec input_shape", _x.shape, self.spec.input_shape)

        return _x

    def forward_train(
        self, batch, relaxed: bool = False, update_running: bool = True
    ) -> Tuple[Tensor, ForwardCache]:
        """Training forward pass with batch statistics.

        Args:
            batch          (Tensor, required): Inputs [N, *spec.input_shape].
            relaxed        (bool,   optional): Replace the step with `step_relaxation`. Defaults to False.
            update_running (bool,   optional): Fold batch statistics into running statistics. Defaults to True.

        Returns:
            Tuple[Tensor, ForwardCache]: (q-values [N, actions], cache for `backward_train`).
        """

        _x = self._as_batch(batch)
        _cache = ForwardCache(version=self.version, relaxed=relaxed)
        for _layer in self.layers:
            _z = _layer.conv(_x)
            _r, _bn_cache = _layer.bn.forward(_z, training=True, update_running=update_running)
            _y = step_relaxation(_r) if relaxed else binary_step(_r)

            _cache.inputs.append(_x)
            _cache.responses.append(_r)
            _cache.bn_caches.append(_bn_cache)
            _cache.activations.append(_y)
            _x = _y

        _cache.features = _x.reshape(_x.shape[0], -1)
        _cache.penalty, _cache.penalty_grads = sparsity_penalty(_cache.activations, self.eta)
        _q = _cache.features @ self.readout_w + self.readout_b
        return _q, _cache

    def forward_inference(self, batch) -> Tuple[Tensor, List[Tensor]]:
        """Inference forward pass with running statistics.

        Returns:
            Tuple[Tensor, List[Tensor]]: (q-values [N, actions], per-layer binary activations as uint8).
        """

        _x = self._as_batch(batch)
        _hidden: List[Tensor] = []
        for _layer in self.layers:
            _z = _layer.conv(_x)
            _r = batchnorm(
                _z,
                _layer.bn.running_mean,
                _layer.bn.running_var,
                _layer.bn.gamma,
                _layer.bn.beta,
                _layer.bn.eps,
            )
            _y = binary_step(_r)
            _hidden.append(_y.astype(np.uint8))
            _x = _y

        _q = _x.reshape(_x.shape[0], -1) @ self.readout_w + self.readout_b
        return _q, _hidden

    def predict(self, batch) -> Tensor:
        """Q-values [N, actions], or [actions] for a single [C, H, W] input."""

        _q = self.forward_inference(batch)[0]
        return _q[0] if np.shape(batch) == tuple(self.spec.input_shape) else _q

    def backward_train(self, cache: ForwardCache, dq: Tensor) -> StudentGrads:
        """Backpropagate dL/dq (plus the sparsity penalty) to every trainable parameter.

        Weight gradients are taken with respect to the ternary weights and applied
        to the proxies unchanged.

        Raises:
            UsageError: `cache` was produced before the latest optimizer step.
        """

        if cache.version != self.version:
            raise UsageError(
                f"Stale forward cache (version {cache.version}, network at {self.version})!"
            )

        _dq = np.asarray(dq, dtype=np.float64)
        _n = cache.features.shape[0]
        if _dq.shape != (_n, self.spec.actions):
            raise ShapeError("dL/dq does not match the cached batch", _dq.shape, (_n, self.spec.actions))

        _grad_w = cache.features.T @ _dq
        _grad_b = _dq.sum(axis=0)
        _dy = (_dq @ self.readout_w.T).reshape(cache.activations[-1].shape)

        _layer_grads: List[Dict[str, Tensor]] = [{} for _ in self.layers]
        for _idx in range(len(self.layers) - 1, -1, -1):
            _layer = self.layers[_idx]
            _dy = _dy + cache.penalty_grads[_idx]
            _dr = _dy * step_surrogate_grad(cache.responses[_idx])
            _dz, _dgamma, _dbeta = _layer.bn.backward(_dr, cache.bn_caches[_idx])
            _dx, _dw = conv2d_backward(
                cache.inputs[_idx],
                _layer.weights,
                _dz,
                stride=_layer.spec.stride,
                pad=_layer.spec.pad,
                groups=_layer.spec.groups,
                need_input_grad=(0 < _idx),
            )
            _layer_grads[_idx] = {"proxy": _dw, "gamma": _dgamma, "beta": _dbeta}
            _dy = _dx

        return StudentGrads(layers=_layer_grads, readout_w=_grad_w, readout_b=_grad_b)

    def sgd_momentum_step(
        self,
        grads: StudentGrads,
        lr: float,
        momentum: float,
        float_lr: Optional[float] = None,
    ):
        """v <- momentum*v + grad; param <- param - lr*v; proxies clipped to [-1, 1].

        No weight decay. `float_lr` applies to the full-precision parameters
        (batch-norm affine and readout); it defaults to `lr`.
        """

        if lr <= 0:
            raise UsageError(f"`lr` argument value {lr} is invalid, must be > 0!")
        if not (0.0 <= momentum < 1.0):
            raise UsageError(f"`momentum` argument value {momentum} is invalid, must be in [0, 1)!")

        _float_lr = lr if float_lr is None else float_lr
        for _layer, _grads in zip(self.layers, grads.layers):
            for _name in QuantLayer.PARAM_NAMES:
                _v = momentum * _layer.velocity[_name] + _grads[_name]
                _layer.velocity[_name] = _v
                _step_lr = lr if _name == "proxy" else _float_lr
                _layer.set_param(_name, _layer.get_param(_name) - _step_lr * _v)

            _layer.proxy = np.clip(_layer.proxy, -1.0, 1.0)
            _layer.sync_ternary()

        self.readout_velocity["w"] = momentum * self.readout_velocity["w"] + grads.readout_w
        self.readout_velocity["b"] = momentum * self.readout_velocity["b"] + grads.readout_b
        self.readout_w = self.readout_w - _float_lr * self.readout_velocity["w"]
        self.readout_b = self.readout_b - _float_lr * self.readout_velocity["b"]
        self.version += 1

        if self.debug:
            self.check_invariants()

    def check_invariants(self):
        for _idx, _layer in enumerate(self.layers):
            try:
                _layer.check_invariants()
            except RuntimeError:
                logger.error(f"Layer {_idx} of '{self.spec.tier}' student broke its invariants.")
                raise

    def state_arrays(self) -> Dict[str, Tensor]:
        """Flat name -> array map of everything needed to restore the network."""

        _arrays: Dict[str, Tensor] = {}
        for _idx, _layer in enumerate(self.layers):
            _arrays[f"layer{_idx}.proxy"] = _layer.proxy
            _arrays[f"layer{_idx}.gamma"] = _layer.bn.gamma
            _arrays[f"layer{_idx}.beta"] = _layer.bn.beta
            _arrays[f"layer{_idx}.running_mean"] = _layer.bn.running_mean
            _arrays[f"layer{_idx}.running_var"] = _layer.bn.running_var

        _arrays["readout.w"] = self.readout_w
        _arrays["readout.b"] = self.readout_b
        return _arrays

    def load_state_arrays(self, arrays: Dict[str, Tensor]):
        for _idx, _layer in enumerate(self.layers):
            _layer.proxy = np.array(arrays[f"layer{_idx}.proxy"], dtype=np.float64).reshape(_layer.proxy.shape)
            _layer.bn.gamma = np.array(arrays[f"layer{_idx}.gamma"], dtype=np.float64)
            _layer.bn.beta = np.array(arrays[f"layer{_idx}.beta"], dtype=np.float64)
            _layer.bn.running_mean = np.array(arrays[f"layer{_idx}.running_mean"], dtype=np.float64)
            _layer.bn.running_var = np.array(arrays[f"layer{_idx}.running_var"], dtype=np.float64)
            _layer.sync_ternary()

        self.readout_w = np.array(arrays["readout.w"], dtype=np.float64).reshape(self.readout_w.shape)
        self.readout_b = np.array(arrays["readout.b"], dtype=np.float64).reshape(self.readout_b.shape)
        self.version += 1


STUDENT_CHECKPOINT_KIND = "student"


def save_student(net: StudentNetwork, file_path: str) -> str:
    _meta = {
        "spec": spec_to_text(net.spec),
        "eta": net.eta,
        "bn_momentum": net.layers[0].bn.momentum,
        "bn_eps": net.layers[0].bn.eps,
    }
    return save_checkpoint(file_path, STUDENT_CHECKPOINT_KIND, net.state_arrays(), meta=_meta)


def load_student(file_path: str) -> StudentNetwork:
    _meta, _arrays = load_checkpoint(file_path, expected_kind=STUDENT_CHECKPOINT_KIND)
    try:
        _net = StudentNetwork(
            spec_from_text(_meta["spec"]),
            eta=_meta["eta"],
            bn_momentum=_meta["bn_momentum"],
            bn_eps=_meta["bn_eps"],
        )
        _net.load_state_arrays(_arrays)
    except (KeyError, TypeError, ValueError) as err:
        logger.critical(f"Failed to restore student from '{file_path}' checkpoint file.")
        raise CorruptFileError(f"Student checkpoint '{file_path}' is malformed: {err!r}") from err
    _net.version = 0
    return _net


__all__ = [
    "ternarize",
    "binary_step",
    "step_surrogate_grad",
    "step_relaxation",
    "sparsity_penalty",
    "QuantLayer",
    "ForwardCache",
    "StudentGrads",
    "StudentNetwork",
    "save_student",
    "load_student",
]
