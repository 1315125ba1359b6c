import logging
from typing import List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from config.config import Config
from .contract import CertificationReport, EnrichedAlmostParams, SamplingPlan, certify, check_enriched_almost
from .exceptions import ConfigError, DimensionError, DomainError
from .iterate import IterationTrace, NamedCheck, StoppingRule, canonical_lambda, krasnoselskij, reduced_delta
from .space import Box, MapDescriptor, Point, Region, as_array, grid_points, interval

logger = logging.getLogger(__name__)


class Ball(Region):
    """Closed Euclidean ball ‖x - center‖ <= radius."""

    kind = "ball"

    def __init__(self, center, radius: float):
        self.center = as_array(center)
        self.radius = float(radius)
        if not self.radius > 0:
            raise ConfigError(f"Ball radius must be positive, got {radius}",
                              [{"field": "radius", "message": str(radius)}])

    @property
    def dim(self) -> int:
        return self.center.size

    def contains_batch(self, X: np.ndarray, tol: float = 0.0) -> np.ndarray:
        return np.linalg.norm(np.atleast_2d(X) - self.center, axis=1) <= self.radius + tol

    def project_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        offset = X - self.center
        dist = np.linalg.norm(offset, axis=1)
        scale = np.where(dist > self.radius, self.radius / np.where(dist > 0, dist, 1.0), 1.0)
        return self.center + offset * scale[:, None]

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    def describe(self) -> dict:
        return {"kind": self.kind, "center": self.center.tolist(), "radius": self.radius}


class Halfspace(Region):
    """{x : <a, x> <= beta}."""

    kind = "halfspace"

    def __init__(self, normal, offset: float):
        self.normal = as_array(normal)
        self.offset = float(offset)
        if not np.any(self.normal != 0):
            raise ConfigError("Halfspace normal must be nonzero", [{"field": "normal", "message": "zero vector"}])

    @property
    def dim(self) -> int:
        return self.normal.size

    def contains_batch(self, X: np.ndarray, tol: float = 0.0) -> np.ndarray:
        return np.atleast_2d(X) @ self.normal <= self.offset + tol * np.linalg.norm(self.normal)

    def project_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        excess = np.maximum(X @ self.normal - self.offset, 0.0)
        return X - np.outer(excess / (self.normal @ self.normal), self.normal)

    def bounding_box(self):
        return None

    def describe(self) -> dict:
        return {"kind": self.kind, "normal": self.normal.tolist(), "offset": self.offset}


ConvexSet = Union[Box, Ball, Halfspace]


def make_set(kind: str, **spec) -> Region:
    """Build a convex set from its serialized description."""
    try:
        if kind == "interval":
            region = interval(spec["lo"], spec["hi"])
            if region.dim != 1:
                raise DimensionError(1, region.dim)
            return region
        if kind == "box":
            return Box(spec["lo"], spec["hi"])
        if kind == "ball":
            return Ball(spec["center"], spec["radius"])
        if kind == "halfspace":
            return Halfspace(spec["normal"], spec["offset"])
    except KeyError as e:
        raise ConfigError(f"Set of kind '{kind}' is missing {e}", [{"field": f"set.{e.args[0]}", "message": "missing"}])
    raise ConfigError(f"Unknown set kind '{kind}'", [{"field": "set.kind", "message": kind}])


def project(C: Region, x) -> Point:
    arr = as_array(x)
    if arr.size != C.dim:
        raise DimensionError(C.dim, arr.size)
    return Point.from_array(C.project_batch(arr[None, :])[0])


class VipProblem(BaseModel):
    """Find x* in C with <G(x*), c - x*> >= 0 for all c in C."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    G: MapDescriptor
    C: Region
    gamma: float = Field(1.0, gt=0)

    def model_post_init(self, __context) -> None:
        if self.G.dim != self.C.dim:
            raise DimensionError(self.C.dim, self.G.dim)


class ProjectionComposite(MapDescriptor):
    """x -> P_C(x - gamma G(x)) on C."""

    kind = "projection-composite"

    def __init__(self, C: Region, G: MapDescriptor, gamma: float):
        super().__init__(C, name=f"P_C(I-{gamma:g}*{G.name})")
        self.C = C
        self.G = G
        self.gamma = gamma

    @property
    def breakpoints(self) -> List[float]:
        return self.G.breakpoints

    def cases(self, X: np.ndarray) -> np.ndarray:
        return self.G.cases(X)

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return self.C.project_batch(X - self.gamma * self.G.apply(X))

    def describe(self) -> dict:
        return {"kind": self.kind, "set": self.C.describe(), "operator": self.G.describe(), "gamma": self.gamma}


def vip_operator(p: VipProblem) -> MapDescriptor:
    return ProjectionComposite(p.C, p.G, p.gamma)


def check_monotone(G: MapDescriptor, sampling: SamplingPlan) -> CertificationReport:
    """<Gx - Gy, x - y> >= 0 on sampled pairs."""

    def condition(X, Y, GX, GY):
        # |a||b| - <a, b> <= |a||b| keeps the margin at <a, b> and gives rounding a scale
        inner = np.einsum('ij,ij->i', GX - GY, X - Y)
        size = np.linalg.norm(GX - GY, axis=1) * np.linalg.norm(X - Y, axis=1)
        return size - inner, size

    return certify(G, condition, sampling, {}, "monotone")


def sample_set(C: Region, sampling: SamplingPlan, anchor=None, radius: float = 1.0) -> np.ndarray:
    """
    Points of C used to test the variational inequality. Unbounded sets are
    sampled in a box of the given radius around the anchor and projected.
    """
    region = C
    if C.bounding_box() is None:
        if anchor is None:
            raise ConfigError("Sampling an unbounded set needs an anchor", [{"field": "anchor", "message": "missing"}])
        center = as_array(anchor)
        region = Box(center - radius, center + radius)
    parts = []
    if sampling.grid_step is not None:
        pts = grid_points(region, sampling.grid_step, sampling.max_grid_points)
        parts.append(pts)
    if sampling.random_pairs > 0:
        lo, hi = region.bounding_box()
        rng = np.random.default_rng(sampling.seed)
        parts.append(rng.uniform(lo, hi, size=(sampling.random_pairs, C.dim)))
    if not parts:
        raise ConfigError("Sampling plan is empty", [{"field": "sampling", "message": "no grid or random points"}])
    pts = C.project_batch(np.vstack(parts))
    return pts


def vip_gap(p: VipProblem, x, sampling: SamplingPlan, points: Optional[np.ndarray] = None) -> float:
    """min over sampled c in C of <G(x), c - x>; nonnegative at a solution."""
    arr = as_array(x)
    if points is None:
        points = sample_set(p.C, sampling, anchor=arr)
    g = p.G.apply(arr[None, :])[0]
    return float(np.min((points - arr) @ g))


def scan_vip_solutions(p: VipProblem, step: float, tau: Optional[float] = None,
                       extra: Optional[Sequence] = None, chunk: int = 512) -> List[Point]:
    """
    Brute-force oracle: grid points of C (plus any extra candidates lying in
    C) whose inequality holds against every other candidate up to tau.
    """
    tau = Config.TAU_VIP if tau is None else tau
    pts = grid_points(p.C, step, max_points=10 ** 7, extra=extra)
    G = p.G.apply(pts)
    # min_c <g, c> over the grid, then subtract <g, x>
    solutions = []
    for start in range(0, pts.shape[0], chunk):
        block = G[start:start + chunk]
        lowest = np.min(block @ pts.T, axis=1)
        gaps = lowest - np.einsum('ij,ij->i', block, pts[start:start + chunk])
        for k in np.flatnonzero(gaps >= -tau):
            solutions.append(Point.from_array(pts[start + k]))
    return solutions


def solve_vip(p: VipProblem, lam: float, x0, rule: StoppingRule, sampling: Optional[SamplingPlan] = None,
              delta: Optional[float] = None, tau_fix: Optional[float] = None,
              tau_vip: Optional[float] = None) -> IterationTrace:
    """
    Krasnoselskij iteration on P_C(I - gamma G). A converged or stopped limit is
    checked against the fixed-point identity and the sampled inequality; the
    results are attached to the trace as named checks.
    """
    tau_fix = Config.TAU_FIX if tau_fix is None else tau_fix
    tau_vip = Config.TAU_VIP if tau_vip is None else tau_vip
    start = as_array(x0)
    if start.size != p.C.dim:
        raise DimensionError(p.C.dim, start.size)
    if not p.C.contains(start, Config.TAU_DOM):
        raise DomainError(f"Starting point {start.tolist()} is not in C = {p.C.describe()}")
    sampling = sampling or SamplingPlan(grid_step=1e-3)

    T = vip_operator(p)
    trace = krasnoselskij(T, lam, start, rule, delta=delta, tau_fix=tau_fix)
    trace.method = "vip"
    if trace.limit is not None:
        star = trace.limit.array
        fp_gap = float(np.linalg.norm(star - T.apply(star[None, :])[0]))
        gap = vip_gap(p, star, sampling)
        trace.checks = [
            NamedCheck(name="fixed-point-identity", passed=fp_gap <= tau_fix, value=fp_gap,
                       detail="x* = P_C(x* - gamma G(x*))"),
            NamedCheck(name="vip-inequality", passed=gap >= -tau_vip, value=gap,
                       detail="min over sampled c of <G(x*), c - x*>"),
        ]
        logger.info(f"VIP limit {star.tolist()}: fixed-point gap {fp_gap:.3e}, inequality gap {gap:.3e}")
    else:
        logger.warning(f"VIP iteration ended with status {trace.status.value}")
    return trace


def certify_vip_operator(p: VipProblem, params: EnrichedAlmostParams, sampling: SamplingPlan) -> CertificationReport:
    """Check P_C(I - gamma G) as a (b, theta, L) enriched almost contraction on C."""
    return check_enriched_almost(vip_operator(p), params, sampling)


def solve_vip_certified(p: VipProblem, params: EnrichedAlmostParams, x0, rule: StoppingRule,
                        sampling: Optional[SamplingPlan] = None, lam: Optional[float] = None,
                        tau_fix: Optional[float] = None, tau_vip: Optional[float] = None) -> IterationTrace:
    """
    Certify the composite first, then solve with k = b: lambda defaults to
    1/(k+1) and, once certified, delta = theta/(k+1) drives the bounds. The
    report is kept on the trace and its verdict becomes an extra check.
    """
    sampling = sampling or SamplingPlan(grid_step=1e-3)
    report = certify_vip_operator(p, params, sampling)
    step = canonical_lambda(params) if lam is None else lam
    delta = reduced_delta(params) if report.certified else None
    if not report.certified:
        logger.warning(f"Composite is {report.verdict.value} for {params.as_tuple()}; solving without bounds")
    trace = solve_vip(p, step, x0, rule, sampling=sampling, delta=delta, tau_fix=tau_fix, tau_vip=tau_vip)
    trace.certification = report
    trace.checks.append(NamedCheck(name="operator-certified", passed=report.certified, value=report.margin,
                                   detail=f"(b, theta, L) = {params.as_tuple()}: {report.verdict.value}"))
    return trace


__all__ = [
    'Ball', 'Halfspace', 'ConvexSet', 'make_set', 'project', 'VipProblem', 'ProjectionComposite',
    'vip_operator', 'check_monotone', 'sample_set', 'vip_gap', 'scan_vip_solutions', 'solve_vip',
    'certify_vip_operator', 'solve_vip_certified',
]
