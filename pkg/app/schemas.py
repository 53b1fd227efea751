import math
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config.sim_config import sim_config


# Margin schemas
class MarginParams(BaseModel):
    """Параметры маргинального распределения для JSON-файла"""
    kind: Literal["student_t", "empirical"]
    df: Optional[float] = None
    loc: Optional[float] = None
    scale: Optional[float] = None
    sample: Optional[List[float]] = None

    @model_validator(mode="after")
    def validate_kind_fields(self):
        if self.kind == "student_t":
            if self.df is None or self.loc is None or self.scale is None:
                raise ValueError("student_t requires df, loc and scale")
            if not self.df > 0 or not self.scale > 0 or not math.isfinite(self.loc):
                raise ValueError("student_t requires df > 0, scale > 0 and finite loc")
        elif not self.sample:
            raise ValueError("empirical margin requires a non-empty sample")
        return self


class ThresholdParams(BaseModel):
    u: List[float]
    level: float = Field(gt=0, lt=1)

    @field_validator("u")
    def validate_finite(cls, v):
        if not all(math.isfinite(x) for x in v):
            raise ValueError("thresholds must be finite")
        return v


class MarginsDocument(BaseModel):
    columns: List[str]
    margins: List[MarginParams]
    threshold: Optional[ThresholdParams] = None

    @model_validator(mode="after")
    def validate_lengths(self):
        if len(self.columns) != len(self.margins):
            raise ValueError("columns and margins must have the same length")
        if self.threshold is not None and len(self.threshold.u) != len(self.columns):
            raise ValueError("threshold vector length must match the number of columns")
        return self


# Simulation configs
class JointSimConfig(BaseModel):
    m: int = Field(default=sim_config.JOINT_M, ge=1)
    q: int = Field(default=0, ge=0)
    seed: int = sim_config.DEFAULT_SEED


class SynthConfig(BaseModel):
    nu: List[float] = Field(min_length=1)
    theta: float = Field(ge=1)
    n: int = Field(ge=1)
    seed: int = sim_config.DEFAULT_SEED

    @field_validator("nu")
    def validate_nu(cls, v):
        if not all(x > 0 for x in v):
            raise ValueError("all degrees of freedom must be positive")
        return v

    @property
    def d(self) -> int:
        return len(self.nu)


class ExperimentConfig(BaseModel):
    """Конфигурация эксперимента: параметры SynthConfig плюс сетка"""
    model_config = ConfigDict(populate_by_name=True)

    nu: List[float] = Field(default_factory=lambda: [2.0, 3.0, 2.5], min_length=1)
    theta: List[float] = Field(default_factory=lambda: [2.6], min_length=1)
    alpha: List[float] = Field(default_factory=lambda: [0.9975], min_length=1)
    n: int = Field(default=1500, ge=2)
    m: int = Field(default=sim_config.JOINT_M, ge=1)
    r_orig: int = Field(default=50, ge=1, alias="R_orig")
    r_sim: int = Field(default=50, ge=1, alias="R_sim")
    seed: int = sim_config.DEFAULT_SEED
    target: int = Field(default=0, ge=0)
    q: int = Field(default=0, ge=0)
    threshold_level: float = Field(default=sim_config.EXPERIMENT_THRESHOLD_LEVEL, gt=0, lt=1)
    margin_source: Literal["true", "fit"] = "true"
    var_method: Literal["theoretical", "empirical", "gpd_tail"] = "theoretical"
    input: Optional[str] = None

    @field_validator("theta", "alpha", mode="before")
    def coerce_to_list(cls, v):
        if isinstance(v, (int, float)):
            return [v]
        return v

    @field_validator("theta")
    def validate_theta(cls, v):
        if not all(x >= 1 for x in v):
            raise ValueError("theta must be >= 1")
        return v

    @field_validator("alpha")
    def validate_alpha(cls, v):
        if not all(0 < x < 1 for x in v):
            raise ValueError("alpha must lie in (0, 1)")
        return v

    @field_validator("nu")
    def validate_nu(cls, v):
        if not all(x > 0 for x in v):
            raise ValueError("all degrees of freedom must be positive")
        return v

    @model_validator(mode="after")
    def validate_indices(self):
        d = len(self.nu)
        if self.input is None and (self.target >= d or self.q >= d):
            raise ValueError("target and q must be valid component indices")
        return self


# Result schemas
class TrmMetric(str, Enum):
    ES = "ES"
    MES = "MES"
    DCTE = "DCTE"
    MU = "MU"


class TrmEstimate(BaseModel):
    """Оценка метрики хвостового риска; value отсутствует при пустом событии"""
    metric: TrmMetric
    value: Optional[float] = None
    n_exceed: int = Field(ge=0)
    sufficient: bool

    @model_validator(mode="after")
    def validate_value_presence(self):
        if (self.value is None) == self.sufficient:
            raise ValueError("value must be present exactly when the estimate is sufficient")
        return self


class ReferenceMethod(str, Enum):
    CLOSED_FORM = "closed_form"
    QUADRATURE = "quadrature"
    MONTE_CARLO = "monte_carlo"


class ReferenceValue(BaseModel):
    metric: str
    alpha: Optional[float] = None
    value: float
    method: ReferenceMethod
    tolerance: float = Field(ge=0)
    requested_tolerance: Optional[float] = None

    @model_validator(mode="after")
    def validate_tolerance(self):
        if (self.method == ReferenceMethod.QUADRATURE and self.requested_tolerance is not None
                and self.tolerance > self.requested_tolerance):
            raise ValueError("quadrature error estimate exceeds the requested tolerance")
        return self


# CLI
class RunConfig(BaseModel):
    command: str
    inputs: List[str] = Field(default_factory=list)
    output: str
    seed: int = sim_config.DEFAULT_SEED
    params: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("inputs")
    def validate_inputs_exist(cls, v):
        missing = [p for p in v if not Path(p).is_file()]
        if missing:
            raise ValueError(f"input files not found: {', '.join(missing)}")
        return v
