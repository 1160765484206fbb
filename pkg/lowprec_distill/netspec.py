# -*- coding: utf-8 -*-
"""Declarative layer tables for constrained student networks and their fan-in check."""

from typing import Dict, List, Tuple

import yaml
import pydantic
from pydantic import BaseModel, conint, constr

if "2.0.0" <= pydantic.__version__:
    from pydantic import ConfigDict, field_validator
else:
    from pydantic import validator

from ._consts import FANIN_LIMIT, INPUT_FANIN_LIMIT, HISTORY_LENGTH, NUM_ACTIONS
from .exceptions import ShapeError
from .tensor_core import conv_output_size


class FrozenBaseModel(BaseModel):
    if "2.0.0" <= pydantic.__version__:
        model_config = ConfigDict(extra="forbid", frozen=True)
    else:

        class Config:
            extra = "forbid"
            allow_mutation = False


class LayerSpec(FrozenBaseModel):
    features: conint(ge=1)
    kernel: conint(ge=1)
    stride: conint(ge=1) = 1
    pad: conint(ge=0) = 0
    groups: conint(ge=1) = 1


class NetworkSpec(FrozenBaseModel):
    layers: List[LayerSpec]
    input_shape: Tuple[conint(ge=1), conint(ge=1), conint(ge=1)]
    actions: conint(ge=1) = NUM_ACTIONS
    tier: constr(strip_whitespace=True, min_length=1) = "custom"

    if "2.0.0" <= pydantic.__version__:

        @field_validator("layers")
        @classmethod
        def _check_layers(cls, val):
            if not val:
                raise ValueError("`layers` must contain at least one layer!")
            return val

    else:

        @validator("layers")
        def _check_layers(cls, val):
            if not val:
                raise ValueError("`layers` must contain at least one layer!")
            return val

    def feature_shapes(self) -> List[Tuple[int, int, int]]:
        """Output [C,H,W] of every layer.

        Raises:
            ShapeError: A layer's kernel does not fit its input.
        """

        _c, _h, _w = self.input_shape
        _shapes = []
        for _layer in self.layers:
            _h = conv_output_size(_h, _layer.kernel, _layer.stride, _layer.pad)
            _w = conv_output_size(_w, _layer.kernel, _layer.stride, _layer.pad)
            _c = _layer.features
            _shapes.append((_c, _h, _w))

        return _shapes

    @property
    def readout_features(self) -> int:
        _c, _h, _w = self.feature_shapes()[-1]
        return _c * _h * _w

    def source_features(self, index: int) -> int:
        return self.input_shape[0] if index == 0 else self.layers[index - 1].features


class FanInViolation(BaseModel):
    layer_index: int
    fan_in: int
    bound: int
    reason: str = "fan-in"


def validate_fanin(spec: NetworkSpec) -> List[FanInViolation]:
    """Check the per-neuron fan-in bound of every layer.

    A neuron in a layer with G groups reads kernel²·(source_features/G) inputs;
    the bound is 128 for hidden layers and 256 for the input layer. Groups that do
    not divide the source or output features are reported too. Never raises.

    Args:
        spec (NetworkSpec, required): Network to check.

    Returns:
        List[FanInViolation]: Empty when the spec satisfies every constraint.
    """

    _violations: List[FanInViolation] = []
    for _idx, _layer in enumerate(spec.layers):
        _source = spec.source_features(_idx)
        _bound = INPUT_FANIN_LIMIT if _idx == 0 else FANIN_LIMIT

        if (_source % _layer.groups) or (_layer.features % _layer.groups):
            _violations.append(
                FanInViolation(
                    layer_index=_idx,
                    fan_in=_layer.kernel * _layer.kernel * -(-_source // _layer.groups),
                    bound=_bound,
                    reason="groups",
                )
            )
            continue

        _fan_in = _layer.kernel * _layer.kernel * (_source // _layer.groups)
        if _fan_in > _bound:
            _violations.append(FanInViolation(layer_index=_idx, fan_in=_fan_in, bound=_bound))

    return _violations


def spec_to_text(spec: NetworkSpec) -> str:
    """Serialize a spec to YAML text with one flow record per layer."""

    _lines = [
        f"tier: {spec.tier}",
        f"input_shape: [{', '.join(str(_d) for _d in spec.input_shape)}]",
        f"actions: {spec.actions}",
        "layers:",
    ]
    for _layer in spec.layers:
        _lines.append(
            f"  - {{features: {_layer.features}, kernel: {_layer.kernel}, stride: {_layer.stride}, pad: {_layer.pad}, groups: {_layer.groups}}}"
        )

    return "\n".join(_lines) + "\n"


def spec_from_text(text: str) -> NetworkSpec:
    if not isinstance(text, str):
        raise TypeError(f"`text` argument type {type(text).__name__} is invalid, must be str!")

    try:
        _data = yaml.safe_load(text) or {}
    except yaml.YAMLError as err:
        raise ValueError(f"Network spec text is not valid YAML: {err}") from err
    if not isinstance(_data, dict):
        raise ValueError("Network spec text must be a mapping!")

    if "tier" in _data:
        _data["tier"] = str(_data["tier"])
    return NetworkSpec(**_data)


def _stack(*rows: Tuple[int, int, int, int, int]) -> List[LayerSpec]:
    return [
        LayerSpec(features=_f, kernel=_k, stride=_s, pad=_p, groups=_g)
        for _f, _k, _s, _p, _g in rows
    ]


## Rows are (features, kernel, stride, pad, groups) for 84x84x4 grayscale input.
CHIP_SPECS: Dict[str, NetworkSpec] = {
    "1-chip": NetworkSpec(
        tier="1-chip",
        input_shape=(HISTORY_LENGTH, 84, 84),
        actions=18,
        layers=_stack(
            (32, 8, 4, 2, 1),
            (256, 4, 2, 2, 4),
            (256, 1, 1, 0, 2),
            (512, 3, 1, 1, 32),
            (512, 1, 1, 0, 4),
            (1024, 4, 4, 0, 64),
            (1024, 1, 1, 0, 8),
            (2048, 2, 1, 0, 32),
            (2048, 1, 1, 0, 16),
        ),
    ),
    "2-chip": NetworkSpec(
        tier="2-chip",
        input_shape=(HISTORY_LENGTH, 84, 84),
        actions=18,
        layers=_stack(
            (32, 8, 4, 2, 1),
            (256, 4, 2, 2, 4),
            (256, 1, 1, 0, 2),
            (256, 1, 1, 0, 2),
            (512, 3, 1, 1, 32),
            (512, 1, 1, 0, 4),
            (512, 1, 1, 0, 4),
            (1024, 4, 3, 0, 64),
            (1024, 1, 1, 0, 8),
            (1024, 1, 1, 0, 8),
            (2048, 2, 1, 0, 32),
            (4096, 1, 1, 0, 16),
            (4096, 1, 1, 0, 32),
        ),
    ),
    "4-chip": NetworkSpec(
        tier="4-chip",
        input_shape=(HISTORY_LENGTH, 84, 84),
        actions=18,
        layers=_stack(
            (128, 8, 2, 1, 1),
            (512, 3, 2, 1, 16),
            (512, 1, 1, 0, 4),
            (512, 2, 2, 0, 16),
            (1024, 3, 1, 1, 64),
            (1024, 1, 1, 0, 8),
            (1024, 2, 2, 0, 32),
            (2048, 3, 1, 1, 128),
            (2048, 1, 1, 0, 16),
            (2048, 2, 2, 0, 64),
            (4096, 2, 1, 0, 128),
            (4096, 1, 1, 0, 32),
            (4096, 1, 1, 0, 32),
            (4096, 1, 1, 0, 32),
        ),
    ),
    "8-chip": NetworkSpec(
        tier="8-chip",
        input_shape=(HISTORY_LENGTH, 84, 84),
        actions=18,
        layers=_stack(
            (256, 8, 2, 1, 1),
            (1024, 3, 2, 1, 32),
            (1024, 1, 1, 0, 8),
            (1024, 2, 2, 0, 32),
            (2048, 3, 1, 1, 128),
            (2048, 1, 1, 0, 16),
            (2048, 2, 2, 0, 64),
            (4096, 3, 1, 1, 256),
            (4096, 1, 1, 0, 32),
            (4096, 2, 2, 0, 128),
            (8192, 2, 1, 0, 256),
            (8192, 1, 1, 0, 64),
            (8192, 1, 1, 0, 64),
            (8192, 1, 1, 0, 64),
        ),
    ),
}


## Desk tiers keep the chip tier pattern (wide kernel with many groups, then a
## 1x1 mixing layer) at sizes that train on a CPU in minutes.
_DESK_LAYERS: Dict[str, List[Tuple[int, int, int, int, int]]] = {
    "desk-1": [
        (16, 4, 2, 1, 1),
        (32, 3, 2, 1, 2),
        (32, 1, 1, 0, 1),
    ],
    "desk-2": [
        (32, 4, 2, 1, 1),
        (64, 3, 2, 1, 4),
        (64, 1, 1, 0, 1),
        (64, 3, 2, 1, 8),
    ],
    "desk-3": [
        (64, 4, 2, 1, 1),
        (128, 3, 2, 1, 8),
        (128, 1, 1, 0, 1),
        (128, 3, 2, 1, 16),
        (128, 1, 1, 0, 1),
    ],
    "desk-4": [
        (128, 4, 2, 1, 1),
        (256, 3, 2, 1, 16),
        (256, 1, 1, 0, 2),
        (256, 3, 2, 1, 32),
        (256, 1, 1, 0, 2),
    ],
}

DESK_TIERS: Tuple[str, ...] = tuple(_DESK_LAYERS.keys())


def desk_spec(
    tier: str, input_shape: Tuple[int, int, int] = (16, 24, 24), actions: int = NUM_ACTIONS
) -> NetworkSpec:
    """Build one of the desk-scale tiers for a given transduced input shape.

    Raises:
        ValueError: Unknown tier name.
        ShapeError: The tier does not fit `input_shape`.
    """

    if tier not in _DESK_LAYERS:
        raise ValueError(f"`tier` argument value '{tier}' is invalid, must be one of {list(DESK_TIERS)}!")

    _spec = NetworkSpec(
        tier=tier,
        input_shape=tuple(input_shape),
        actions=actions,
        layers=_stack(*_DESK_LAYERS[tier]),
    )
    try:
        _spec.feature_shapes()
    except ShapeError as err:
        raise ShapeError(f"Tier '{tier}' does not fit input shape {tuple(input_shape)}: {err}") from err

    return _spec


__all__ = [
    "LayerSpec",
    "NetworkSpec",
    "FanInViolation",
    "validate_fanin",
    "spec_to_text",
    "spec_from_text",
    "CHIP_SPECS",
    "DESK_TIERS",
    "desk_spec",
]
