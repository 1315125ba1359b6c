# cli/models.py

from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config.config import Config
from models.contract import EnrichedAlmostParams, ParamGrid, SamplingPlan
from models.iterate import StoppingRule
from models.space import GALLERY

ExperimentKind = Literal["certify", "search", "iterate", "sweep", "vip", "reproduce"]
TableFormat = Literal["csv", "json", "markdown"]

CONDITIONS = (
    "enriched-almost", "almost", "enriched-contraction", "enriched-nonexpansive", "reduced-almost",
    "uniqueness", "kannan", "chatterjea", "bianchini", "kannan-to-almost", "chatterjea-to-almost",
    "bianchini-to-almost", "quasi-nonexpansive", "monotone",
)
SUITES = (
    "piecewise-certification", "piecewise-iteration", "vip-interval", "identity",
    "class-conversions", "uniqueness",
)


def _vector(v):
    if v is None or isinstance(v, list):
        return v
    return [v]


class MapSpec(BaseModel):
    """A gallery map id, or "affine" with its coefficients"""
    id: str = Field(..., description="Gallery id or 'affine'")
    A: Optional[List[List[float]]] = Field(None, description="Matrix of an affine map")
    c: Optional[List[float]] = Field(None, description="Offset of an affine map")
    lo: Optional[List[float]] = Field(None, description="Lower corner of the domain box")
    hi: Optional[List[float]] = Field(None, description="Upper corner of the domain box")

    @field_validator('id')
    def validate_id(cls, v):
        if v != "affine" and v not in GALLERY:
            raise ValueError(f"Unknown map id '{v}'. Known ids: {sorted(GALLERY) + ['affine']}")
        return v

    @field_validator('A', mode='before')
    def coerce_matrix(cls, v):
        if v is None:
            return v
        if not isinstance(v, list):
            return [[v]]
        if v and not isinstance(v[0], list):
            return [v]
        return v

    @field_validator('c', 'lo', 'hi', mode='before')
    def coerce_vector(cls, v):
        return _vector(v)

    @model_validator(mode='after')
    def validate_affine(self):
        if self.id == "affine":
            missing = [name for name in ("A", "c") if getattr(self, name) is None]
            if missing:
                raise ValueError(f"Affine map is missing {missing}")
        return self


class SetSpec(BaseModel):
    """Convex set description: interval, box, ball or halfspace"""
    kind: Literal["interval", "box", "ball", "halfspace"]
    lo: Optional[List[float]] = None
    hi: Optional[List[float]] = None
    center: Optional[List[float]] = None
    radius: Optional[float] = Field(None, gt=0)
    normal: Optional[List[float]] = None
    offset: Optional[float] = None

    @field_validator('lo', 'hi', 'center', 'normal', mode='before')
    def coerce_vector(cls, v):
        return _vector(v)

    @model_validator(mode='after')
    def validate_fields(self):
        required = {
            "interval": ("lo", "hi"), "box": ("lo", "hi"),
            "ball": ("center", "radius"), "halfspace": ("normal", "offset"),
        }[self.kind]
        missing = [name for name in required if getattr(self, name) is None]
        if missing:
            raise ValueError(f"Set of kind '{self.kind}' is missing {missing}")
        return self


class VipSpec(BaseModel):
    """Variational inequality: operator G on set C with step gamma"""
    operator: MapSpec
    set: SetSpec
    gamma: float = Field(1.0, gt=0)
    lam: Optional[float] = Field(None, gt=0, le=1, description="Defaults to 1/(k+1), k = certify.b when certifying")
    k: Optional[float] = Field(None, ge=0, description="Enrichment constant certified for the composite")
    delta: Optional[float] = Field(None, gt=0, lt=1)
    certify: Optional[EnrichedAlmostParams] = Field(
        None, description="(b, theta, L) checked for the composite before solving; k = b")
    starts: List[List[float]] = Field(..., min_length=1)
    scan_step: Optional[float] = Field(None, gt=0, description="Grid step of the brute-force oracle")

    @field_validator('starts', mode='before')
    def coerce_starts(cls, v):
        return [_vector(x) for x in (v or [])]

    @model_validator(mode='after')
    def validate_lambda(self):
        if self.lam is None and self.k is None and self.certify is None:
            raise ValueError("One of lam, k or certify must be given")
        if self.k is not None and self.certify is not None and self.k != self.certify.b:
            raise ValueError(f"k = {self.k} disagrees with certify.b = {self.certify.b}")
        return self

    @property
    def step_lambda(self) -> float:
        if self.lam is not None:
            return self.lam
        k = self.k if self.k is not None else self.certify.b
        return 1.0 / (k + 1.0)


class ExperimentConfig(BaseModel):
    """One experiment file; every kind reads only the sections it needs"""
    model_config = ConfigDict(extra='forbid')

    schema_version: int = Field(..., description="Experiment schema version")
    kind: ExperimentKind
    name: Optional[str] = Field(None, description="Label used in artifacts")
    map: Optional[MapSpec] = None
    condition: str = Field("enriched-almost", description="Condition checked by 'certify'")
    params: List[Dict[str, float]] = Field(default_factory=list, description="One certification task per entry")
    fixed_points: List[List[float]] = Field(default_factory=list)
    sampling: Optional[SamplingPlan] = None
    grid: Optional[ParamGrid] = None
    rule: StoppingRule = Field(default_factory=StoppingRule)
    method: Literal["picard", "krasnoselskij"] = "krasnoselskij"
    lambdas: List[float] = Field(default_factory=lambda: [1.0])
    starts: List[List[float]] = Field(default_factory=list)
    delta: Optional[float] = Field(None, gt=0, lt=1)
    vip: Optional[VipSpec] = None
    suites: List[str] = Field(default_factory=lambda: ["all"])
    expect: Optional[str] = Field(None, description="Expected verdict or iteration status")
    seed: Optional[int] = None
    out_dir: Optional[str] = None
    format: TableFormat = "csv"

    @model_validator(mode='before')
    @classmethod
    def inherit_seed(cls, data: Any):
        # a randomized plan without its own seed takes the experiment seed
        if isinstance(data, dict) and isinstance(data.get("sampling"), dict):
            sampling = data["sampling"]
            if sampling.get("random_pairs") and sampling.get("seed") is None and data.get("seed") is not None:
                data = {**data, "sampling": {**sampling, "seed": data["seed"]}}
        return data

    @field_validator('schema_version')
    def validate_schema_version(cls, v):
        if v != Config.SCHEMA_VERSION:
            raise ValueError(f"Unsupported schema_version {v}; expected {Config.SCHEMA_VERSION}")
        return v

    @field_validator('condition')
    def validate_condition(cls, v):
        if v not in CONDITIONS:
            raise ValueError(f"Unknown condition '{v}'. Known conditions: {list(CONDITIONS)}")
        return v

    @field_validator('suites')
    def validate_suites(cls, v):
        unknown = [s for s in v if s != "all" and s not in SUITES]
        if unknown:
            raise ValueError(f"Unknown suites {unknown}. Known suites: {list(SUITES) + ['all']}")
        return v

    @field_validator('starts', 'fixed_points', mode='before')
    def coerce_points(cls, v):
        return [_vector(x) for x in (v or [])]

    @field_validator('lambdas')
    def validate_lambdas(cls, v):
        if not v or any(not (0 < lam <= 1) for lam in v):
            raise ValueError("Every lambda must lie in (0, 1]")
        return v

    @model_validator(mode='after')
    def validate_sections(self):
        needs = {
            "certify": ("map", "sampling"),
            "search": ("map", "sampling", "grid"),
            "iterate": ("map",),
            "sweep": ("map",),
            "vip": ("vip",),
            "reproduce": (),
        }[self.kind]
        missing = [name for name in needs if getattr(self, name) is None]
        if missing:
            raise ValueError(f"Experiment kind '{self.kind}' needs sections {missing}")
        if self.kind in ("iterate", "sweep") and not self.starts:
            raise ValueError(f"Experiment kind '{self.kind}' needs at least one start")
        if self.kind == "certify" and self.condition not in ("enriched-nonexpansive", "quasi-nonexpansive",
                                                              "monotone") and not self.params:
            raise ValueError(f"Condition '{self.condition}' needs at least one params entry")
        if self.kind == "certify" and self.condition == "quasi-nonexpansive" and not self.fixed_points:
            raise ValueError("Condition 'quasi-nonexpansive' needs fixed_points")
        return self

    @property
    def label(self) -> str:
        return self.name or self.kind


class SuiteCheck(BaseModel):
    """Named pass/fail check of a reproduction suite"""
    suite: str = Field(..., description="Suite the check belongs to")
    name: str = Field(..., description="Stable check name")
    passed: bool
    value: Optional[float] = Field(None, description="Measured quantity, when there is one")
    detail: str = ""


class TaskResult(BaseModel):
    """Outcome of one task of an experiment"""
    name: str = Field(..., description="Task label, unique within the run")
    kind: str
    passed: Optional[bool] = Field(None, description="None when the task asserts nothing")
    result: Dict[str, Any] = Field(default_factory=dict, description="Serialized report or trace summary")
    error: Optional[str] = Field(None, description="Error message if the task failed to run")


class RunReport(BaseModel):
    """Everything an experiment produced"""
    config: Dict[str, Any]
    results: List[TaskResult] = Field(default_factory=list)
    checks: List[SuiteCheck] = Field(default_factory=list)
    status: Literal["passed", "failed", "error"] = "passed"
    wall_time: Optional[float] = Field(None, description="Seconds; left out of report.json")
    tool_version: str = Config.TOOL_VERSION

    @property
    def exit_code(self) -> int:
        return {"passed": 0, "failed": 2, "error": 1}[self.status]


__all__ = [
    'CONDITIONS', 'SUITES', 'MapSpec', 'SetSpec', 'VipSpec', 'ExperimentConfig', 'SuiteCheck',
    'TaskResult', 'RunReport',
]
