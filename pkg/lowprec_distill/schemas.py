# -*- coding: utf-8 -*-

import json
from typing import Any, Dict, List, Optional, Tuple

import pydantic
from pydantic import BaseModel, Field, confloat, conint, constr

if "2.0.0" <= pydantic.__version__:
    from pydantic import field_validator, model_validator, ConfigDict
else:
    from pydantic import validator, root_validator

from ._consts import LogLevelEnum, LossKindEnum, EnvNameEnum, TeacherArchEnum
from .netspec import DESK_TIERS, CHIP_SPECS


class StrictBaseModel(BaseModel):
    if "2.0.0" <= pydantic.__version__:
        model_config = ConfigDict(extra="forbid", validate_assignment=True)
    else:

        class Config:
            extra = "forbid"
            validate_assignment = True


class EnvPM(StrictBaseModel):
    name: EnvNameEnum = Field(default=EnvNameEnum.CATCH, description="[desk] Game to play: catch or minipong.")
    grid: conint(ge=5) = Field(default=12, description="[desk] Catch grid size (cells).")
    height: conint(ge=5) = Field(default=12, description="[desk] MiniPong grid height (cells).")
    width: conint(ge=5) = Field(default=12, description="[desk] MiniPong grid width (cells).")
    rallies: conint(ge=1) = Field(default=1, description="[desk] MiniPong rally ends per episode.")
    scale: conint(ge=1) = Field(default=2, description="[desk] Pixels per grid cell when rendering.")
    target_shape: Optional[Tuple[conint(ge=1), conint(ge=1)]] = Field(
        default=None, description="[desk] Preprocessed frame size [H, W]; native size when unset ([84, 84] in the paper)."
    )
    levels: conint(ge=1) = Field(default=4, description="[desk] Thermometer levels per pixel for the student input.")

    def env_params(self, name: Optional[EnvNameEnum] = None) -> Dict[str, Any]:
        _name = EnvNameEnum(name or self.name)
        if _name == EnvNameEnum.CATCH:
            return {"grid": self.grid, "scale": self.scale}

        return {"height": self.height, "width": self.width, "rallies": self.rallies, "scale": self.scale}


class TeacherPM(StrictBaseModel):
    arch: TeacherArchEnum = Field(default=TeacherArchEnum.DESK, description="[desk] Network preset: desk or atari.")
    gamma: confloat(ge=0.0, le=1.0) = Field(default=0.99, description="[paper] Discount factor.")
    lr: confloat(gt=0.0) = Field(default=0.00025, description="[paper] RMSProp learning rate.")
    rms_decay: confloat(ge=0.0, lt=1.0) = Field(default=0.95, description="[paper] RMSProp momentum (gradient average decay).")
    rms_eps: confloat(gt=0.0) = Field(default=1e-6, description="[desk] RMSProp denominator epsilon.")
    eps_start: confloat(ge=0.0, le=1.0) = Field(default=1.0, description="[paper] Initial exploration epsilon.")
    eps_end: confloat(ge=0.0, le=1.0) = Field(default=0.1, description="[paper] Final exploration epsilon.")
    eps_anneal_steps: conint(ge=1) = Field(default=20_000, description="[desk] Steps of linear epsilon decay (paper: 1,000,000).")
    target_sync_steps: conint(ge=1) = Field(default=1_000, description="[desk] Steps between target syncs (paper: 10,000).")
    replay_capacity: conint(ge=1) = Field(default=50_000, description="[desk] Replay memory size (paper: 1,000,000).")
    batch_size: conint(ge=1) = Field(default=32, description="[paper] Transitions per TD step.")
    total_steps: conint(ge=0) = Field(default=150_000, description="[desk] Environment steps (paper: 50M frames).")
    warmup: conint(ge=0) = Field(default=1_000, description="[desk] Transitions collected before learning starts.")
    eval_every: conint(ge=0) = Field(default=5_000, description="[desk] Steps between greedy evaluations; 0 disables.")
    eval_episodes: conint(ge=1) = Field(default=20, description="[desk] Episodes per periodic greedy evaluation.")
    checkpoint_every: conint(ge=0) = Field(default=0, description="[desk] Steps between extra checkpoints; 0 keeps only the final one.")
    hidden: Optional[conint(ge=1)] = Field(default=None, description="[desk] Dense layer width; preset value when unset.")


class StudentPM(StrictBaseModel):
    tier: constr(strip_whitespace=True) = Field(default="desk-2", description="[desk] Network tier: desk-1..desk-4 or a chip tier name.")
    eta: confloat(ge=0.0) = Field(default=1e-4, description="[paper] Spike sparsity penalty weight.")
    lr: confloat(gt=0.0) = Field(default=20.0, description="[paper] SGD learning rate of the ternary proxies.")
    float_lr: confloat(gt=0.0) = Field(default=0.01, description="[desk] SGD learning rate of batch-norm and readout parameters.")
    momentum: confloat(ge=0.0, lt=1.0) = Field(default=0.9, description="[paper] SGD momentum.")
    bn_momentum: confloat(ge=0.0, lt=1.0) = Field(default=0.9, description="[desk] Running statistics momentum.")
    bn_eps: confloat(gt=0.0) = Field(default=1e-5, description="[desk] Batch-norm epsilon.")

    if "2.0.0" <= pydantic.__version__:

        @field_validator("tier")
        @classmethod
        def _check_tier(cls, val):
            if (val not in DESK_TIERS) and (val not in CHIP_SPECS):
                raise ValueError(
                    f"`tier` field value '{val}' is invalid, must be one of {list(DESK_TIERS) + list(CHIP_SPECS)}!"
                )
            return val

    else:

        @validator("tier")
        def _check_tier(cls, val):
            if (val not in DESK_TIERS) and (val not in CHIP_SPECS):
                raise ValueError(
                    f"`tier` field value '{val}' is invalid, must be one of {list(DESK_TIERS) + list(CHIP_SPECS)}!"
                )
            return val


class DistillPM(StrictBaseModel):
    loss: LossKindEnum = Field(default=LossKindEnum.KL, description="[paper] Distillation loss: kl, nll or mse.")
    tau: confloat(gt=0.0) = Field(default=0.01, description="[paper] KL teacher temperature.")
    tau_grid: List[confloat(gt=0.0)] = Field(
        default=[0.05, 0.01, 0.005, 0.001], description="[paper] Temperatures searched by `sweep`."
    )
    games: List[EnvNameEnum] = Field(default=[EnvNameEnum.CATCH], description="[desk] Games to distill; two or more merge into one offline dataset.")
    epsilon: confloat(ge=0.0, le=1.0) = Field(default=0.05, description="[paper] Teacher exploration while generating data.")
    buffer_capacity: conint(ge=1) = Field(default=100_000, description="[desk] Distillation buffer size (paper: 1,000,000).")
    batch_size: conint(ge=1) = Field(default=32, description="[paper] Samples per student batch.")
    n_batches: conint(ge=0) = Field(default=50_000, description="[desk] Student SGD steps (paper: 1.5M).")
    train_every: conint(ge=1) = Field(default=4, description="[paper] Generated frames per student batch in online mode.")
    warmup_frames: conint(ge=0) = Field(default=1_000, description="[desk] Frames generated before the first student batch.")
    offline_frames: conint(ge=1) = Field(default=50_000, description="[desk] Frames per game for offline (multi-game) datasets.")
    log_every: conint(ge=1) = Field(default=100, description="[desk] Batches averaged into one metrics row.")
    eval_every: conint(ge=0) = Field(default=5_000, description="[desk] Batches between greedy evaluations; 0 disables.")
    deployed_eval: bool = Field(default=True, description="[desk] Evaluate the student through its deployed integer network.")
    calibration_states: conint(ge=1) = Field(default=10_000, description="[desk] Buffer states used to pick the readout scale.")
    teacher_dir: Optional[constr(strip_whitespace=True, min_length=1)] = Field(
        default=None, description="[desk] Directory holding '<game>/teacher.ckpt'; the output directory's 'teacher' folder when unset."
    )

    if "2.0.0" <= pydantic.__version__:

        @field_validator("tau_grid", "games")
        @classmethod
        def _check_not_empty(cls, val):
            if not val:
                raise ValueError("must contain at least one entry!")
            return val

    else:

        @validator("tau_grid", "games")
        def _check_not_empty(cls, val):
            if not val:
                raise ValueError("must contain at least one entry!")
            return val


class EvalPM(StrictBaseModel):
    episodes: conint(ge=1) = Field(default=100, description="[desk] Episodes per normalized evaluation.")
    seed: conint(ge=0) = Field(default=10_000, description="[desk] First episode seed; episode i uses seed + i.")
    workers: conint(ge=1) = Field(default=1, description="[desk] Evaluation worker threads.")


class LoggingPM(StrictBaseModel):
    level: LogLevelEnum = Field(default=LogLevelEnum.INFO, description="[desk] Minimum log level.")
    use_color: bool = Field(default=True, description="[desk] Colour the stream handler.")
    format_str: constr(strip_whitespace=True, min_length=3, max_length=511) = Field(
        default="[<c>{time:YYYY-MM-DD HH:mm:ss.SSS}</c> | <level>{level_short:<5}</level> | <w>{name}:{line}</w>]: <level>{message}</level>",
        description="[desk] Stream handler format.",
    )
    file_enabled: bool = Field(default=True, description="[desk] Write 'run.log' into the run directory.")
    json_enabled: bool = Field(default=False, description="[desk] Write serialized 'run.json.log' into the run directory.")


class ExperimentConfigPM(StrictBaseModel):
    seed: conint(ge=0) = Field(default=0, description="[desk] Master seed for networks, environments and sampling.")
    output_dir: Optional[constr(strip_whitespace=True, min_length=1)] = Field(
        default=None, description="[desk] Output root; 'LOWPREC_DISTILL_OUTPUT_DIR' or './runs' when unset."
    )
    env: EnvPM = Field(default_factory=EnvPM)
    teacher: TeacherPM = Field(default_factory=TeacherPM)
    student: StudentPM = Field(default_factory=StudentPM)
    distill: DistillPM = Field(default_factory=DistillPM)
    eval: EvalPM = Field(default_factory=EvalPM)
    logging: LoggingPM = Field(default_factory=LoggingPM)

    if "2.0.0" <= pydantic.__version__:

        @model_validator(mode="after")
        def _check_epsilon(self) -> "ExperimentConfigPM":
            if self.teacher.eps_end > self.teacher.eps_start:
                raise ValueError(
                    f"`teacher.eps_end` value {self.teacher.eps_end} is invalid, must be <= `teacher.eps_start` ({self.teacher.eps_start})!"
                )
            return self

    else:

        @root_validator(skip_on_failure=True)
        def _check_epsilon(cls, values):
            _teacher = values.get("teacher")
            if _teacher and (_teacher.eps_end > _teacher.eps_start):
                raise ValueError(
                    f"`teacher.eps_end` value {_teacher.eps_end} is invalid, must be <= `teacher.eps_start` ({_teacher.eps_start})!"
                )
            return values


def model_to_dict(model: BaseModel) -> Dict[str, Any]:
    """JSON-compatible dictionary of a config model."""

    if "2.0.0" <= pydantic.__version__:
        return model.model_dump(mode="json")

    return json.loads(model.json())


def describe_fields(model_cls=ExperimentConfigPM, prefix: str = "") -> List[Tuple[str, Any, str]]:
    """(dotted name, default, description) of every leaf config field."""

    _rows: List[Tuple[str, Any, str]] = []
    if "2.0.0" <= pydantic.__version__:
        _fields = [
            (_name, _info.annotation, _info.get_default(call_default_factory=True), _info.description or "")
            for _name, _info in model_cls.model_fields.items()
        ]
    else:
        _fields = [
            (_name, _field.outer_type_, _field.get_default(), _field.field_info.description or "")
            for _name, _field in model_cls.__fields__.items()
        ]

    for _name, _type, _default, _description in _fields:
        if isinstance(_type, type) and issubclass(_type, BaseModel):
            _rows.extend(describe_fields(_type, prefix=f"{prefix}{_name}."))
            continue

        if isinstance(_default, list):
            _default = [getattr(_v, "value", _v) for _v in _default]
        _rows.append((f"{prefix}{_name}", getattr(_default, "value", _default), _description))

    return _rows


__all__ = [
    "EnvPM",
    "TeacherPM",
    "StudentPM",
    "DistillPM",
    "EvalPM",
    "LoggingPM",
    "ExperimentConfigPM",
    "model_to_dict",
    "describe_fields",
]
