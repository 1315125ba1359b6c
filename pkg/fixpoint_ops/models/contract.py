import itertools
import logging
import math
from enum import Enum
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config.config import Config
from .exceptions import ConfigError
from .space import MapDescriptor, Point, as_array, grid_points

logger = logging.getLogger(__name__)

# (X, Y, TX, TY) -> (lhs, rhs), all row-wise
Condition = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]


def _norm(V: np.ndarray) -> np.ndarray:
    return np.linalg.norm(V, axis=1)


class EnrichedAlmostParams(BaseModel):
    """Constants (b, theta, L) of an enriched almost contraction."""
    model_config = ConfigDict(frozen=True)

    b: float = Field(..., ge=0, description="Enrichment coefficient")
    theta: float = Field(..., description="Contraction factor, 0 < theta < b + 1")
    L: float = Field(..., ge=0, description="Slack coefficient")
    clamped: bool = Field(False, description="theta was raised from 0 to keep it positive")

    @model_validator(mode='after')
    def check_theta(self):
        if not (0 < self.theta < self.b + 1):
            raise ValueError(f"theta must lie in (0, b+1) = (0, {self.b + 1}), got {self.theta}")
        if not all(math.isfinite(v) for v in (self.b, self.theta, self.L)):
            raise ValueError("Parameters must be finite")
        return self

    @property
    def delta(self) -> float:
        return self.theta / (self.b + 1)

    def as_tuple(self) -> Tuple[float, float, float]:
        return self.b, self.theta, self.L


class KannanParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    k: float = Field(..., ge=0)
    a: float = Field(..., ge=0, lt=0.5)


class ChatterjeaParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    k: float = Field(..., ge=0)
    b: float = Field(..., ge=0, lt=0.5)


class BianchiniParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    k: float = Field(..., ge=0)
    h: float = Field(..., ge=0, lt=1)


class UniquenessParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    delta1: float = Field(..., gt=0, lt=1)
    L1: float = Field(..., ge=0)


class SamplingPlan(BaseModel):
    """Which (x, y) pairs a certifier evaluates: grid, uniform random pairs and probes."""
    model_config = ConfigDict(frozen=True)

    grid_step: Optional[float] = Field(None, gt=0)
    random_pairs: int = Field(0, ge=0)
    seed: Optional[int] = None
    include_breakpoints: bool = True
    probes: List[Tuple[Tuple[float, ...], Tuple[float, ...]]] = Field(default_factory=list)
    max_grid_points: Optional[int] = Field(None, gt=1)

    @field_validator('probes', mode='before')
    @classmethod
    def coerce_probes(cls, v):
        out = []
        for pair in v or []:
            x, y = pair
            out.append((tuple(np.atleast_1d(np.asarray(x, dtype=float)).tolist()),
                        tuple(np.atleast_1d(np.asarray(y, dtype=float)).tolist())))
        return out

    @model_validator(mode='after')
    def check_seed(self):
        if self.random_pairs > 0 and self.seed is None:
            raise ValueError("A seed is mandatory when random_pairs > 0")
        return self

    @property
    def is_empty(self) -> bool:
        return self.grid_step is None and self.random_pairs == 0 and not self.probes


class ParamGrid(BaseModel):
    """Candidate values for a (b, theta, L) search."""
    b: List[float]
    theta: List[float]
    L: List[float]

    def validate_bounds(self) -> None:
        diagnostics = []
        for name in ("b", "theta", "L"):
            values = getattr(self, name)
            if not values:
                diagnostics.append({"field": f"grid.{name}", "message": "empty"})
            elif not all(math.isfinite(v) for v in values):
                diagnostics.append({"field": f"grid.{name}", "message": "non-finite value"})
        if any(v < 0 for v in self.b):
            diagnostics.append({"field": "grid.b", "message": "b must be >= 0"})
        if any(v < 0 for v in self.L):
            diagnostics.append({"field": "grid.L", "message": "L must be >= 0"})
        if self.theta and all(v <= 0 for v in self.theta):
            diagnostics.append({"field": "grid.theta", "message": "no positive theta"})
        if diagnostics:
            raise ConfigError("Degenerate parameter grid", diagnostics)


class Verdict(str, Enum):
    certified = "certified"
    falsified = "falsified"
    inconclusive = "inconclusive"


class Witness(BaseModel):
    label: str
    x: Point
    y: Point
    lhs: float
    rhs: float
    case: str

    @property
    def violated(self) -> bool:
        return self.lhs > self.rhs


class CertificationReport(BaseModel):
    condition: str
    verdict: Verdict
    params: Dict[str, float]
    worst_pair: Optional[Tuple[Point, Point]] = None
    margin: float
    samples_used: int
    witnesses: List[Witness] = Field(default_factory=list)
    clamped: bool = False

    @property
    def certified(self) -> bool:
        return self.verdict == Verdict.certified

    @property
    def falsified(self) -> bool:
        return self.verdict == Verdict.falsified


# Pair sampling

PairBlock = Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, bool]


def plan_points(map: MapDescriptor, plan: SamplingPlan) -> np.ndarray:
    extra = [[b] for b in map.breakpoints] if (plan.include_breakpoints and map.dim == 1) else None
    return grid_points(map.domain, plan.grid_step, plan.max_grid_points, extra)


def _random_points(map: MapDescriptor, n: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi = map.domain.bounding_box()
    pts = np.empty((0, map.dim))
    while pts.shape[0] < n:
        cand = rng.uniform(lo, hi, size=(2 * n, map.dim))
        pts = np.vstack([pts, cand[map.domain.contains_batch(cand)]])
    return pts[:n]


def sample_pairs(map: MapDescriptor, plan: SamplingPlan, chunk: Optional[int] = None) -> Iterator[PairBlock]:
    """
    Yield blocks (X, Y, TX, TY, case_x, case_y, is_probe) of ordered pairs.

    Grid pairs cover every ordered pair of distinct grid points, so both
    orientations are present. Random pairs and probes are emitted in both
    orders. Diagonal pairs are skipped.
    """
    if plan.is_empty:
        raise ConfigError("Sampling plan is empty", [{"field": "sampling", "message": "no grid, random pairs or probes"}])
    if map.domain.bounding_box() is None:
        raise ConfigError("Certification needs a bounded domain", [{"field": "map.domain", "message": "unbounded"}])
    chunk = chunk or Config.PAIR_CHUNK

    if plan.grid_step is not None:
        G = plan_points(map, plan)
        TG = map.apply(G)
        CG = map.cases(G)
        n = G.shape[0]
        for start in range(0, n, chunk):
            rows = np.arange(start, min(start + chunk, n))
            i = np.repeat(rows, n)
            j = np.tile(np.arange(n), rows.size)
            keep = i != j
            i, j = i[keep], j[keep]
            yield G[i], G[j], TG[i], TG[j], CG[i], CG[j], False

    if plan.random_pairs > 0:
        rng = np.random.default_rng(plan.seed)
        X = _random_points(map, plan.random_pairs, rng)
        Y = _random_points(map, plan.random_pairs, rng)
        keep = np.any(X != Y, axis=1)
        X, Y = X[keep], Y[keep]
        for start in range(0, X.shape[0], chunk * 64):
            xs, ys = X[start:start + chunk * 64], Y[start:start + chunk * 64]
            A = np.vstack([xs, ys])
            B = np.vstack([ys, xs])
            yield A, B, map.apply(A), map.apply(B), map.cases(A), map.cases(B), False

    if plan.probes:
        xs = np.array([map.domain.clamp(x) for x, _ in plan.probes])
        ys = np.array([map.domain.clamp(y) for _, y in plan.probes])
        A = np.vstack([xs, ys])
        B = np.vstack([ys, xs])
        keep = np.any(A != B, axis=1)
        A, B = A[keep], B[keep]
        if A.shape[0]:
            yield A, B, map.apply(A), map.apply(B), map.cases(A), map.cases(B), True


# Certification engine

class _Reduction:
    """Associative reduction of per-pair results into the report fields."""

    def __init__(self):
        self.count = 0
        self.margin = math.inf
        self.by_margin = None
        self.by_score = None
        self.score = -math.inf
        self.score_margin = math.inf
        self.cases: Dict[str, Tuple[float, tuple]] = {}
        self.probes: List[tuple] = []

    def add(self, X, Y, lhs, rhs, cx, cy, is_probe: bool) -> None:
        if lhs.size == 0:
            return
        self.count += lhs.size
        margin = rhs - lhs
        scale = np.abs(lhs) + np.abs(rhs)
        score = np.where(scale > 0, (lhs - rhs) / np.where(scale > 0, scale, 1.0), 0.0)

        k = int(np.argmin(margin))
        if margin[k] < self.margin:
            self.margin = float(margin[k])
            self.by_margin = (X[k], Y[k], float(lhs[k]), float(rhs[k]), f"{cx[k]}|{cy[k]}")
        # ties on the score go to the smaller margin
        top = np.flatnonzero(score == score.max())
        k = int(top[np.argmin(margin[top])])
        if score[k] > self.score or (score[k] == self.score and margin[k] < self.score_margin):
            self.score = float(score[k])
            self.score_margin = float(margin[k])
            self.by_score = (X[k], Y[k], float(lhs[k]), float(rhs[k]), f"{cx[k]}|{cy[k]}")

        codes = cx.astype(np.int64) * 65536 + cy.astype(np.int64)
        for code in np.unique(codes):
            idx = np.flatnonzero(codes == code)
            k = int(idx[np.argmin(margin[idx])])
            label = f"{cx[k]}|{cy[k]}"
            best = self.cases.get(label)
            if best is None or margin[k] < best[0]:
                self.cases[label] = (float(margin[k]), (X[k], Y[k], float(lhs[k]), float(rhs[k]), label))

        if is_probe:
            for k in np.flatnonzero(lhs > rhs):
                self.probes.append((X[k], Y[k], float(lhs[k]), float(rhs[k]), f"{cx[k]}|{cy[k]}"))


def _witness(label: str, entry: tuple) -> Witness:
    x, y, lhs, rhs, case = entry
    return Witness(label=label, x=Point.from_array(x), y=Point.from_array(y), lhs=lhs, rhs=rhs, case=case)


def certify(map: MapDescriptor, condition: Condition, sampling: SamplingPlan, params: Dict[str, float],
            name: str, margin_scale: float = 1.0, tau: Optional[float] = None,
            blocks: Optional[Iterator[PairBlock]] = None, clamped: bool = False,
            rounding: Optional[float] = None) -> CertificationReport:
    """
    Evaluate ``lhs <= rhs`` on every sampled pair.

    The verdict is falsified as soon as one pair has lhs > rhs by more than
    float rounding, i.e. (lhs - rhs) / (|lhs| + |rhs|) above
    Config.TAU_ROUNDING. Otherwise it is inconclusive when the smallest
    margin rhs - lhs is below tau and certified when it is not. tau is
    Config.TAU_MARGIN times margin_scale, so homogeneous rescalings of a
    condition keep their verdict.
    """
    tau = (Config.TAU_MARGIN if tau is None else tau) * margin_scale
    rounding = Config.TAU_ROUNDING if rounding is None else rounding
    red = _Reduction()
    for X, Y, TX, TY, cx, cy, is_probe in (blocks if blocks is not None else sample_pairs(map, sampling)):
        lhs, rhs = condition(X, Y, TX, TY)
        red.add(X, Y, lhs, rhs, cx, cy, is_probe)
    if red.count == 0:
        raise ConfigError("Sampling plan produced no pairs", [{"field": "sampling", "message": "no distinct pairs"}])

    if red.score > rounding:
        verdict = Verdict.falsified
    elif red.margin < tau:
        verdict = Verdict.inconclusive
    else:
        verdict = Verdict.certified

    witnesses = [_witness("worst-ratio", red.by_score), _witness("worst-margin", red.by_margin)]
    witnesses += [_witness(f"case {code}", entry) for code, (_, entry) in sorted(red.cases.items())]
    witnesses += [_witness("probe", entry) for entry in red.probes]

    x, y = red.by_score[0], red.by_score[1]
    report = CertificationReport(
        condition=name,
        verdict=verdict,
        params=params,
        worst_pair=(Point.from_array(x), Point.from_array(y)),
        margin=red.margin,
        samples_used=red.count,
        witnesses=witnesses,
        clamped=clamped,
    )
    logger.info(f"{name} on {map.name} with {params}: {verdict.value} (margin {red.margin:.3e}, {red.count} pairs)")
    return report


# Conditions

def enriched_almost_condition(b: float, theta: float, L: float) -> Condition:
    def condition(X, Y, TX, TY):
        lhs = _norm(b * (X - Y) + TX - TY)
        rhs = theta * _norm(X - Y) + L * _norm(b * (X - Y) + TX - Y)
        return lhs, rhs
    return condition


def uniqueness_condition(delta1: float, L1: float) -> Condition:
    def condition(X, Y, TX, TY):
        return _norm(TX - TY), delta1 * _norm(X - Y) + L1 * _norm(X - TX)
    return condition


def kannan_condition(k: float, a: float) -> Condition:
    def condition(X, Y, TX, TY):
        return _norm(k * (X - Y) + TX - TY), a * (_norm(X - TX) + _norm(Y - TY))
    return condition


def chatterjea_condition(k: float, b: float) -> Condition:
    def condition(X, Y, TX, TY):
        lhs = _norm(k * (X - Y) + TX - TY)
        rhs = b * (_norm((k + 1) * (X - Y) + Y - TY) + _norm((k + 1) * (Y - X) + X - TX))
        return lhs, rhs
    return condition


def bianchini_condition(k: float, h: float) -> Condition:
    def condition(X, Y, TX, TY):
        return _norm(k * (X - Y) + TX - TY), h * np.maximum(_norm(X - TX), _norm(Y - TY))
    return condition


def check_enriched_almost(map: MapDescriptor, p: EnrichedAlmostParams, sampling: SamplingPlan) -> CertificationReport:
    return certify(map, enriched_almost_condition(p.b, p.theta, p.L), sampling,
                   {"b": p.b, "theta": p.theta, "L": p.L}, "enriched-almost", clamped=p.clamped)


def check_almost(map: MapDescriptor, delta: float, L: float, sampling: SamplingPlan) -> CertificationReport:
    if not (0 < delta < 1) or L < 0:
        raise ConfigError(f"Almost contraction needs delta in (0,1) and L >= 0, got ({delta}, {L})",
                          [{"field": "params", "message": "delta/L out of range"}])
    return certify(map, enriched_almost_condition(0.0, delta, L), sampling,
                   {"delta": delta, "L": L}, "almost")


def check_enriched_contraction(map: MapDescriptor, b: float, theta: float, sampling: SamplingPlan) -> CertificationReport:
    if b < 0 or not (0 <= theta < b + 1):
        raise ConfigError(f"Enriched contraction needs b >= 0 and theta in [0, b+1), got ({b}, {theta})",
                          [{"field": "params", "message": "b/theta out of range"}])
    return certify(map, enriched_almost_condition(b, theta, 0.0), sampling,
                   {"b": b, "theta": theta}, "enriched-contraction")


def check_enriched_nonexpansive(map: MapDescriptor, b: float, sampling: SamplingPlan) -> CertificationReport:
    return certify(map, enriched_almost_condition(b, b + 1.0, 0.0), sampling,
                   {"b": b}, "enriched-nonexpansive")


def check_uniqueness_condition(map: MapDescriptor, u: UniquenessParams, sampling: SamplingPlan) -> CertificationReport:
    return certify(map, uniqueness_condition(u.delta1, u.L1), sampling,
                   {"delta1": u.delta1, "L1": u.L1}, "uniqueness")


def check_kannan(map: MapDescriptor, p: KannanParams, sampling: SamplingPlan) -> CertificationReport:
    return certify(map, kannan_condition(p.k, p.a), sampling, {"k": p.k, "a": p.a}, "enriched-kannan")


def check_chatterjea(map: MapDescriptor, p: ChatterjeaParams, sampling: SamplingPlan) -> CertificationReport:
    return certify(map, chatterjea_condition(p.k, p.b), sampling, {"k": p.k, "b": p.b}, "enriched-chatterjea")


def check_bianchini(map: MapDescriptor, p: BianchiniParams, sampling: SamplingPlan) -> CertificationReport:
    return certify(map, bianchini_condition(p.k, p.h), sampling, {"k": p.k, "h": p.h}, "enriched-bianchini")


def check_quasi_nonexpansive(map: MapDescriptor, fixed_points: Sequence, sampling: SamplingPlan) -> CertificationReport:
    """‖Tx − x*‖ <= ‖x − x*‖ for every sampled x and every supplied fixed point x*."""
    if not fixed_points:
        raise ConfigError("No fixed points supplied", [{"field": "fixed_points", "message": "empty"}])
    if sampling.grid_step is None and sampling.random_pairs == 0:
        raise ConfigError("Sampling plan is empty", [{"field": "sampling", "message": "no grid or random points"}])
    points = []
    if sampling.grid_step is not None:
        points.append(plan_points(map, sampling))
    if sampling.random_pairs > 0:
        points.append(_random_points(map, sampling.random_pairs, np.random.default_rng(sampling.seed)))
    X = np.vstack(points)
    TX = map.apply(X)
    CX = map.cases(X)

    def blocks():
        for fp in fixed_points:
            star = as_array(fp)
            Y = np.broadcast_to(star, X.shape)
            keep = np.any(X != Y, axis=1)
            yield X[keep], Y[keep], TX[keep], Y[keep], CX[keep], map.cases(Y[keep]), False

    def condition(X, Y, TX, TY):
        return _norm(TX - Y), _norm(X - Y)

    params = {f"x*{i}": float(as_array(fp)[0]) for i, fp in enumerate(fixed_points)}
    return certify(map, condition, sampling, params, "quasi-nonexpansive", blocks=blocks())


# Class conversions

def _enriched(b: float, theta: float, L: float) -> EnrichedAlmostParams:
    if theta <= 0:
        logger.warning(f"Conversion produced theta = {theta}; clamping to {Config.CLAMP_THETA}")
        return EnrichedAlmostParams(b=b, theta=Config.CLAMP_THETA, L=L, clamped=True)
    return EnrichedAlmostParams(b=b, theta=theta, L=L)


def from_almost(delta: float, L: float) -> EnrichedAlmostParams:
    return _enriched(0.0, delta, L)


def from_enriched_contraction(b: float, theta: float) -> EnrichedAlmostParams:
    return _enriched(b, theta, 0.0)


def from_kannan(p: KannanParams) -> EnrichedAlmostParams:
    return _enriched(p.k, p.a / (1 - p.a), 2 * p.a / (1 - p.a))


def from_chatterjea(p: ChatterjeaParams) -> EnrichedAlmostParams:
    return _enriched(p.k, p.b / (1 - p.b), 2 * p.b / (1 - p.b))


def from_bianchini(p: BianchiniParams) -> EnrichedAlmostParams:
    return _enriched(p.k, p.h, 2 * p.h)


def lift_averaged_almost(b: float, delta: float, L: float) -> EnrichedAlmostParams:
    """
    Constants for T when its averaged map T_lambda, lambda = 1/(b+1), is a
    (delta, L)-almost contraction: theta = (b+1) * delta.
    """
    return _enriched(b, (b + 1) * delta, L)


def kannan_via_averaged(p: KannanParams) -> EnrichedAlmostParams:
    """Kannan constants routed through the averaged map; valid for every k."""
    return lift_averaged_almost(p.k, p.a / (1 - p.a), 2 * p.a / (1 - p.a))


# Parameter search

def search_params(map: MapDescriptor, sampling: SamplingPlan,
                  grid: ParamGrid) -> List[Tuple[EnrichedAlmostParams, CertificationReport]]:
    """Certified grid triples, sorted by delta = theta/(b+1) ascending."""
    grid.validate_bounds()
    found = []
    for b, theta, L in itertools.product(grid.b, grid.theta, grid.L):
        if not (0 < theta < b + 1):
            logger.debug(f"Skipping infeasible triple ({b}, {theta}, {L})")
            continue
        params = EnrichedAlmostParams(b=b, theta=theta, L=L)
        report = check_enriched_almost(map, params, sampling)
        if report.certified:
            found.append((params, report))
    found.sort(key=lambda item: (item[0].delta, item[0].b, item[0].theta, item[0].L))
    logger.info(f"Search on {map.name}: {len(found)} certified triples")
    return found


def required_slack(map: MapDescriptor, b: float, theta: float, sampling: SamplingPlan,
                   tau: Optional[float] = None) -> float:
    """Smallest L for which (b, theta, L) holds on the sampled pairs; inf if none does."""
    tau = Config.TAU_MARGIN if tau is None else tau
    needed = 0.0
    for X, Y, TX, TY, _, _, _ in sample_pairs(map, sampling):
        lhs = _norm(b * (X - Y) + TX - TY)
        excess = lhs - theta * _norm(X - Y)
        slack = _norm(b * (X - Y) + TX - Y)
        over = excess > tau
        if np.any(over & (slack <= tau)):
            return math.inf
        if np.any(over):
            needed = max(needed, float(np.max(excess[over] / slack[over])))
    return needed


__all__ = [
    'EnrichedAlmostParams', 'KannanParams', 'ChatterjeaParams', 'BianchiniParams', 'UniquenessParams',
    'SamplingPlan', 'ParamGrid', 'Verdict', 'Witness', 'CertificationReport',
    'sample_pairs', 'certify', 'enriched_almost_condition', 'uniqueness_condition',
    'check_enriched_almost', 'check_almost', 'check_enriched_contraction', 'check_enriched_nonexpansive',
    'check_uniqueness_condition', 'check_kannan', 'check_chatterjea', 'check_bianchini',
    'check_quasi_nonexpansive', 'from_almost', 'from_enriched_contraction', 'from_kannan',
    'from_chatterjea', 'from_bianchini', 'lift_averaged_almost', 'kannan_via_averaged',
    'search_params', 'required_slack',
]
