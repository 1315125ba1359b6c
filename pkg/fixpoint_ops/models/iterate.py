import logging
from collections import deque
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from config.config import Config
from .contract import (
    CertificationReport,
    EnrichedAlmostParams,
    SamplingPlan,
    certify,
    enriched_almost_condition,
)
from .exceptions import ConfigError, DomainError
from .space import MapDescriptor, Point, as_array

logger = logging.getLogger(__name__)


class AveragedMap(MapDescriptor):
    """T_lambda x = (1 - lambda) x + lambda T x; shares its fixed points with T."""

    kind = "averaged"

    def __init__(self, base: MapDescriptor, lam: float):
        if not (0 < lam <= 1):
            raise ConfigError(f"lambda must lie in (0, 1], got {lam}", [{"field": "lambda", "message": str(lam)}])
        super().__init__(base.domain, name=f"{base.name}@{lam:g}")
        self.base = base
        self.lam = lam

    @property
    def breakpoints(self) -> List[float]:
        return self.base.breakpoints

    def cases(self, X: np.ndarray) -> np.ndarray:
        return self.base.cases(X)

    def apply(self, X: np.ndarray) -> np.ndarray:
        TX = self.base.apply(X)
        if self.lam == 1:
            return TX
        return (1 - self.lam) * np.atleast_2d(X) + self.lam * TX

    def describe(self) -> dict:
        return {"kind": self.kind, "lambda": self.lam, "base": self.base.describe()}


class StoppingMode(str, Enum):
    residual = "residual"
    aposteriori = "aposteriori-bound"
    step_norm = "step-norm"


class StoppingRule(BaseModel):
    model_config = ConfigDict(frozen=True)

    tol: float = Field(1e-9, gt=0)
    max_iter: int = Field(10_000, ge=1)
    mode: Optional[StoppingMode] = Field(None, description="Defaults to the a posteriori bound when delta is known")


class IterationStatus(str, Enum):
    converged = "converged"
    stopped = "stopped"
    max_iter = "max_iter"
    cycle_detected = "cycle_detected"
    domain_exit = "domain_exit"


class NamedCheck(BaseModel):
    name: str
    passed: bool
    value: Optional[float] = None
    detail: str = ""


class IterationTrace(BaseModel):
    """
    One iteration run. converged means the final residual is within tau_fix;
    stopped means the stopping rule fired first, and limit is then the
    rule's estimate.
    """
    method: str
    map_name: str
    lam: float = 1.0
    delta: Optional[float] = None
    iterates: List[Point]
    step_norms: List[float]
    residuals: List[float]
    status: IterationStatus
    limit: Optional[Point] = None
    apriori: List[Optional[float]] = Field(default_factory=list)
    aposteriori: List[Optional[float]] = Field(default_factory=list)
    cycle: List[Point] = Field(default_factory=list)
    steps: int = 0
    thin: bool = False
    checks: List[NamedCheck] = Field(default_factory=list)
    error: Optional[str] = None
    certification: Optional[CertificationReport] = Field(None, description="Report the step parameters came from")

    @property
    def converged(self) -> bool:
        return self.status == IterationStatus.converged

    @property
    def final(self) -> Point:
        return self.iterates[-1]

    @property
    def bounds(self) -> Optional[List[tuple]]:
        if self.delta is None:
            return None
        return list(zip(self.apriori, self.aposteriori))

    def history(self) -> np.ndarray:
        if self.thin:
            raise ConfigError("Thin traces keep no iterate history", [{"field": "trace.thin", "message": "true"}])
        return np.array([p.coords for p in self.iterates], dtype=float)


def _check_delta(delta: float) -> None:
    if delta is None or not (0 < delta < 1):
        raise ConfigError(f"delta must lie in (0, 1), got {delta}", [{"field": "delta", "message": str(delta)}])


def apriori_bound(delta: float, d01: float, n: int) -> float:
    """delta^n / (1 - delta) * d(x0, x1)."""
    _check_delta(delta)
    if d01 < 0 or n < 0:
        raise ConfigError("d01 and n must be nonnegative", [{"field": "d01/n", "message": f"{d01}, {n}"}])
    return delta ** n * d01 / (1 - delta)


def aposteriori_bound(delta: float, d_prev: float) -> float:
    """delta / (1 - delta) * d(x_{n-1}, x_n)."""
    _check_delta(delta)
    if d_prev < 0:
        raise ConfigError("d_prev must be nonnegative", [{"field": "d_prev", "message": str(d_prev)}])
    return delta * d_prev / (1 - delta)


def merged_bound(delta: float, d_prev: float, i: int) -> float:
    """Bound on d(x_{n+i-1}, x*) from d(x_{n-1}, x_n): delta^i / (1 - delta) * d_prev."""
    _check_delta(delta)
    if i < 1:
        raise ConfigError("i must be >= 1", [{"field": "i", "message": str(i)}])
    return delta ** i * d_prev / (1 - delta)


def canonical_lambda(p: EnrichedAlmostParams) -> float:
    return 1.0 / (p.b + 1.0)


def reduced_delta(p: EnrichedAlmostParams) -> float:
    return p.theta / (p.b + 1.0)


def reduced_condition_check(map: MapDescriptor, p: EnrichedAlmostParams, sampling: SamplingPlan) -> CertificationReport:
    """
    Almost-contraction check of T_lambda at lambda = 1/(b+1) with
    delta = theta/(b+1). Both sides are lambda times those of the enriched
    condition, so the margin threshold is scaled by lambda as well.
    """
    lam = canonical_lambda(p)
    delta = reduced_delta(p)
    return certify(AveragedMap(map, lam), enriched_almost_condition(0.0, delta, p.L), sampling,
                   {"lambda": lam, "delta": delta, "L": p.L}, "reduced-almost", margin_scale=lam,
                   clamped=p.clamped)


def _record(iterates: list, first: np.ndarray, x_next: np.ndarray, thin: bool) -> None:
    if thin:
        iterates[:] = [first, x_next]
    else:
        iterates.append(x_next)


def _run(step_map: MapDescriptor, residual_map: MapDescriptor, x0, rule: StoppingRule, method: str,
         lam: float, delta: Optional[float], tau_fix: Optional[float], tau_cycle: Optional[float],
         window: Optional[int], thin: bool) -> IterationTrace:
    tau_fix = Config.TAU_FIX if tau_fix is None else tau_fix
    tau_cycle = Config.TAU_CYCLE if tau_cycle is None else tau_cycle
    window = window or Config.CYCLE_WINDOW
    drop = Config.CYCLE_RESIDUAL_DROP

    mode = rule.mode
    if mode is None:
        mode = StoppingMode.aposteriori if delta is not None else StoppingMode.residual
    if mode == StoppingMode.aposteriori and delta is None:
        logger.warning("A posteriori stopping needs delta; falling back to the residual")
        mode = StoppingMode.residual
    if delta is not None:
        _check_delta(delta)

    x = step_map.domain.clamp(x0)
    first = x
    iterates = [x]
    step_norms: List[float] = []
    residuals: List[float] = []
    recent = deque(maxlen=window)
    cycle: List[np.ndarray] = []
    status = IterationStatus.max_iter
    error = None

    for n in range(rule.max_iter + 1):
        r = float(np.linalg.norm(x - residual_map.apply(x[None, :])[0]))
        residuals.append(r)
        if r <= tau_fix:
            status = IterationStatus.converged
            break
        if n > 0:
            s = step_norms[-1]
            if mode == StoppingMode.residual:
                fired = r <= rule.tol
            elif mode == StoppingMode.step_norm:
                fired = s <= rule.tol
            else:
                fired = delta * s / (1 - delta) <= rule.tol
            if fired:
                # the rule fired before the residual reached tau_fix
                status = IterationStatus.stopped
                break
        if n == rule.max_iter:
            break

        x_next = step_map.apply(x[None, :])[0]
        if not np.all(np.isfinite(x_next)):
            status, error = IterationStatus.domain_exit, f"Non-finite iterate at step {n + 1}"
            break
        try:
            x_next = step_map.domain.clamp(x_next)
        except DomainError as e:
            status, error = IterationStatus.domain_exit, str(e)
            step_norms.append(float(np.linalg.norm(x_next - x)))
            _record(iterates, first, x_next, thin)
            break
        step_norms.append(float(np.linalg.norm(x_next - x)))

        # a period of at least two: compare against iterates older than x
        if recent:
            past = np.array([p for _, p in recent])
            hits = np.flatnonzero(np.linalg.norm(past - x_next, axis=1) <= tau_cycle)
            if hits.size:
                j = recent[int(hits[0])][0]
                segment = [p for i, p in recent if i >= j] + [x]
                spread = max(float(np.linalg.norm(p - x_next)) for p in segment)
                r_next = float(np.linalg.norm(x_next - residual_map.apply(x_next[None, :])[0]))
                # a tail whose residual still shrinks over the period is converging, not cycling
                if spread > tau_cycle and r_next >= residuals[j] * (1 - drop):
                    cycle = segment
                    status = IterationStatus.cycle_detected
                    _record(iterates, first, x_next, thin)
                    break
        recent.append((n, x))
        _record(iterates, first, x_next, thin)
        x = x_next

    steps = len(step_norms)
    trace = IterationTrace(
        method=method,
        map_name=residual_map.name,
        lam=lam,
        delta=delta,
        iterates=[Point.from_array(p) for p in iterates],
        step_norms=step_norms,
        residuals=residuals,
        status=status,
        cycle=[Point.from_array(p) for p in cycle],
        steps=steps,
        thin=thin,
        error=error,
    )
    if status in (IterationStatus.converged, IterationStatus.stopped):
        trace.limit = Point.from_array(x)
    if delta is not None and step_norms:
        d01 = step_norms[0]
        trace.apriori = [delta ** n * d01 / (1 - delta) for n in range(len(residuals))]
        trace.aposteriori = [None] + [delta * s / (1 - delta) for s in step_norms[:len(residuals) - 1]]
    logger.info(f"{method} on {residual_map.name} (lambda={lam:g}): {status.value} after {steps} steps")
    return trace


def picard(map: MapDescriptor, x0, rule: StoppingRule, delta: Optional[float] = None,
           tau_fix: Optional[float] = None, tau_cycle: Optional[float] = None,
           window: Optional[int] = None, thin: bool = False) -> IterationTrace:
    """x_{n+1} = T x_n."""
    return _run(map, map, x0, rule, "picard", 1.0, delta, tau_fix, tau_cycle, window, thin)


def krasnoselskij(map: MapDescriptor, lam: float, x0, rule: StoppingRule, delta: Optional[float] = None,
                  tau_fix: Optional[float] = None, tau_cycle: Optional[float] = None,
                  window: Optional[int] = None, thin: bool = False) -> IterationTrace:
    """x_{n+1} = (1 - lambda) x_n + lambda T x_n; lambda = 1 is exactly Picard."""
    if not (0 < lam <= 1):
        raise ConfigError(f"lambda must lie in (0, 1], got {lam}", [{"field": "lambda", "message": str(lam)}])
    step_map = map if lam == 1 else AveragedMap(map, lam)
    return _run(step_map, map, x0, rule, "krasnoselskij", lam, delta, tau_fix, tau_cycle, window, thin)


def sweep(map: MapDescriptor, lambdas: Sequence[float], starts: Sequence, rule: StoppingRule,
          delta: Optional[float] = None) -> List[IterationTrace]:
    """Krasnoselskij runs over every (lambda, x0) combination, in that order."""
    return [krasnoselskij(map, lam, x0, rule, delta=delta) for lam in lambdas for x0 in starts]


class RateReport(BaseModel):
    delta: float
    passed: bool
    first_violation: Optional[int] = None
    ratios: List[Optional[float]]
    step_passed: bool
    first_step_violation: Optional[int] = None
    step_ratios: List[Optional[float]]


def _resolve_limit(trace: IterationTrace, limit) -> np.ndarray:
    if limit is None:
        limit = trace.limit
    if limit is None:
        raise ConfigError("Trace has no limit", [{"field": "limit", "message": "missing"}])
    return as_array(limit)


def _ratios(num: np.ndarray, den: np.ndarray) -> List[Optional[float]]:
    return [None] + [float(a / b) if b > 0 else None for a, b in zip(num[1:], den[:-1])]


def rate_check(trace: IterationTrace, limit=None, delta: float = None, tau: Optional[float] = None) -> RateReport:
    """
    d(x_n, x*) <= delta d(x_{n-1}, x*) for every n, and the step contraction
    d(x_n, x_{n+1}) <= delta d(x_{n-1}, x_n), each up to tau.
    """
    _check_delta(delta)
    tau = Config.TAU_FIX if tau is None else tau
    star = _resolve_limit(trace, limit)
    X = trace.history()
    err = np.linalg.norm(X - star, axis=1)
    bad = np.flatnonzero(err[1:] > delta * err[:-1] + tau)
    steps = np.asarray(trace.step_norms, dtype=float)
    bad_steps = np.flatnonzero(steps[1:] > delta * steps[:-1] + tau) if steps.size > 1 else np.array([], dtype=int)
    return RateReport(
        delta=delta,
        passed=bad.size == 0,
        first_violation=int(bad[0]) + 1 if bad.size else None,
        ratios=_ratios(err, err),
        step_passed=bad_steps.size == 0,
        first_step_violation=int(bad_steps[0]) + 1 if bad_steps.size else None,
        step_ratios=_ratios(steps, steps) if steps.size else [],
    )


class BoundReport(BaseModel):
    delta: float
    apriori_ok: bool
    aposteriori_ok: bool
    merged_ok: bool
    cauchy_ok: bool
    first_apriori_violation: Optional[int] = None
    first_aposteriori_violation: Optional[int] = None
    first_merged_violation: Optional[tuple] = None
    first_cauchy_violation: Optional[tuple] = None

    @property
    def passed(self) -> bool:
        return self.apriori_ok and self.aposteriori_ok and self.merged_ok and self.cauchy_ok


def bound_check(trace: IterationTrace, limit=None, delta: float = None, tau: Optional[float] = None) -> BoundReport:
    """Verify the a priori, a posteriori, merged and Cauchy estimates along a trace."""
    _check_delta(delta)
    tau = Config.TAU_FIX if tau is None else tau
    star = _resolve_limit(trace, limit)
    X = trace.history()
    N = X.shape[0] - 1
    err = np.linalg.norm(X - star, axis=1)
    steps = np.linalg.norm(np.diff(X, axis=0), axis=1)
    d01 = steps[0] if N > 0 else 0.0
    powers = delta ** np.arange(N + 1)

    apriori = powers * d01 / (1 - delta)
    bad = np.flatnonzero(err > apriori + tau)
    first_apriori = int(bad[0]) if bad.size else None

    first_apost = None
    first_merged = None
    if N > 0:
        apost = delta * steps / (1 - delta)
        bad = np.flatnonzero(err[1:] > apost + tau)
        first_apost = int(bad[0]) + 1 if bad.size else None
        for n in range(1, N + 1):
            m = np.arange(n, N + 1)
            bound = delta ** (m - n + 1) * steps[n - 1] / (1 - delta)
            bad = np.flatnonzero(err[m] > bound + tau)
            if bad.size:
                first_merged = (n, int(m[bad[0]] - n + 1))
                break

    first_cauchy = None
    if N > 0:
        for n in range(N):
            p = np.arange(1, N - n + 1)
            bound = delta ** n * (1 - delta ** p) / (1 - delta) * d01
            gaps = np.linalg.norm(X[n + 1:] - X[n], axis=1)
            bad = np.flatnonzero(gaps > bound + tau)
            if bad.size:
                first_cauchy = (n, int(p[bad[0]]))
                break

    return BoundReport(
        delta=delta,
        apriori_ok=first_apriori is None,
        aposteriori_ok=first_apost is None,
        merged_ok=first_merged is None,
        cauchy_ok=first_cauchy is None,
        first_apriori_violation=first_apriori,
        first_aposteriori_violation=first_apost,
        first_merged_violation=first_merged,
        first_cauchy_violation=first_cauchy,
    )


__all__ = [
    'AveragedMap', 'StoppingMode', 'StoppingRule', 'IterationStatus', 'NamedCheck', 'IterationTrace',
    'apriori_bound', 'aposteriori_bound', 'merged_bound', 'canonical_lambda', 'reduced_delta',
    'reduced_condition_check', 'picard', 'krasnoselskij', 'sweep', 'RateReport', 'rate_check',
    'BoundReport', 'bound_check',
]
