# cli/suites.py

"""
Named reproduction suites. Each suite returns a list of pass/fail checks and
depends only on its seed, so reruns produce identical results.
"""

import logging
from typing import Callable, Dict, List, Optional

import numpy as np

from models.contract import (
    BianchiniParams,
    ChatterjeaParams,
    EnrichedAlmostParams,
    KannanParams,
    SamplingPlan,
    UniquenessParams,
    certify,
    check_almost,
    check_bianchini,
    check_chatterjea,
    check_enriched_almost,
    check_enriched_nonexpansive,
    check_kannan,
    check_quasi_nonexpansive,
    check_uniqueness_condition,
    enriched_almost_condition,
    from_bianchini,
    from_chatterjea,
    from_kannan,
    kannan_via_averaged,
    required_slack,
    sample_pairs,
)
from models.iterate import (
    IterationStatus,
    StoppingMode,
    StoppingRule,
    bound_check,
    krasnoselskij,
    picard,
    rate_check,
    reduced_condition_check,
)
from models.space import AffineMap, fixed_point_set, gallery_map, interval
from models.vip import VipProblem, check_monotone, scan_vip_solutions, solve_vip_certified, vip_operator
from .models import SUITES, SuiteCheck
from .utils import convergence_frame

logger = logging.getLogger(__name__)

DELTAS = [round(0.1 * i, 10) for i in range(1, 10)]
SLACKS = [float(L) for L in range(11)]
EXACT = StoppingRule(tol=1e-12, max_iter=10_000, mode=StoppingMode.residual)


def _near(point, target: float, tol: float) -> bool:
    return abs(point[0] - target) <= tol


def _pairs_near(T, plan: SamplingPlan, a: float, b: float, radius: float):
    """Grid pairs of the plan within radius of (a, b) or (b, a)."""
    for X, Y, TX, TY, cx, cy, listed in sample_pairs(T, plan):
        x, y = X[:, 0], Y[:, 0]
        keep = ((np.abs(x - a) <= radius) & (np.abs(y - b) <= radius)) | \
               ((np.abs(x - b) <= radius) & (np.abs(y - a) <= radius))
        if np.any(keep):
            yield X[keep], Y[keep], TX[keep], TY[keep], cx[keep], cy[keep], listed


def piecewise_certification(seed: int) -> List[SuiteCheck]:
    suite = "piecewise-certification"
    T = gallery_map("ex2-piecewise")
    fine = SamplingPlan(grid_step=1e-3)
    checks = []

    for theta in (0.5, 1.0, 1.5):
        r = check_enriched_almost(T, EnrichedAlmostParams(b=1.0, theta=theta, L=3.0), fine)
        checks.append(SuiteCheck(suite=suite, name=f"enriched-almost-b1-theta{theta:g}-L3", passed=r.certified,
                                 value=r.margin, detail=f"{r.verdict.value} on {r.samples_used} pairs"))

    coarse = SamplingPlan(grid_step=1e-2)
    falsified, witnessed = 0, 0
    for delta in DELTAS:
        for L in SLACKS:
            falsified += check_almost(T, delta, L, coarse).falsified
            # the same grid, restricted to pairs around (7/15, 8/15)
            local = certify(T, enriched_almost_condition(0.0, delta, L), coarse, {"delta": delta, "L": L}, "almost",
                            blocks=_pairs_near(T, coarse, 7 / 15, 8 / 15, 1e-2))
            x, y = local.worst_pair
            witnessed += local.falsified and (
                (_near(x, 7 / 15, 1e-2) and _near(y, 8 / 15, 1e-2))
                or (_near(x, 8 / 15, 1e-2) and _near(y, 7 / 15, 1e-2))
            )
    total = len(DELTAS) * len(SLACKS)
    checks.append(SuiteCheck(suite=suite, name="almost-falsified-on-grid", passed=falsified == total,
                             value=float(falsified), detail=f"{falsified}/{total} (delta, L) falsified"))
    checks.append(SuiteCheck(suite=suite, name="almost-witness-near-7/15-8/15", passed=witnessed == total,
                             value=float(witnessed),
                             detail=f"{witnessed}/{total} falsified by grid pairs around the target"))

    L = required_slack(T, 1.0, 1e-6, fine)
    checks.append(SuiteCheck(suite=suite, name="required-slack-b1", passed=2.99 <= L <= 3.0 + 1e-9, value=L,
                             detail="smallest L for b = 1, theta -> 0"))

    for b in (0.0, 0.5, 1.0, 2.0):
        r = check_enriched_nonexpansive(T, b, coarse)
        checks.append(SuiteCheck(suite=suite, name=f"nonexpansive-falsified-b{b:g}", passed=r.falsified,
                                 value=r.margin, detail=r.verdict.value))

    r = check_quasi_nonexpansive(T, [0.5], coarse)
    checks.append(SuiteCheck(suite=suite, name="quasi-nonexpansive-falsified-at-1/2", passed=r.falsified,
                             value=r.margin, detail=r.verdict.value))
    return checks


def piecewise_iteration(seed: int) -> List[SuiteCheck]:
    suite = "piecewise-iteration"
    T = gallery_map("ex2-piecewise")
    checks = []

    trace = picard(T, 0.2, EXACT)
    cycle = sorted(p[0] for p in trace.cycle)
    ok = (trace.status == IterationStatus.cycle_detected and len(cycle) == 2
          and abs(cycle[0] - 0.8) <= 1e-12 and abs(cycle[1] - 1.2) <= 1e-12)
    checks.append(SuiteCheck(suite=suite, name="picard-two-cycle-from-0.2", passed=ok,
                             detail=f"{trace.status.value}, cycle {cycle}"))

    for lam in (0.1, 0.25, 0.4):
        for y0, star in ((0.0, 0.5), (0.2, 0.5), (0.6, 0.5), (2 / 3, 1.0), (1.3, 1.0)):
            trace = krasnoselskij(T, lam, y0, EXACT)
            X = trace.history()[:, 0]
            closed = star + (1 - 2 * lam) ** np.arange(X.size) * (y0 - star)
            err = float(np.max(np.abs(X - closed)))
            ok = trace.converged and abs(trace.limit[0] - star) <= 1e-9 and err <= 1e-12
            checks.append(SuiteCheck(suite=suite, name=f"krasnoselskij-lambda{lam:g}-from{y0:.4g}", passed=ok,
                                     value=err, detail=f"{trace.status.value} after {trace.steps} steps"))

    for lam in (0.25, 0.5):
        for y0, star in ((0.0, 0.5), (0.2, 0.5), (0.6, 0.5), (2 / 3, 1.0), (1.3, 1.0)):
            trace = krasnoselskij(T, lam, y0, EXACT, delta=0.5)
            bounds = bound_check(trace, limit=star, delta=0.5, tau=1e-9)
            rate = rate_check(trace, limit=star, delta=0.5, tau=1e-9)
            checks.append(SuiteCheck(suite=suite, name=f"bounds-lambda{lam:g}-from{y0:.4g}",
                                     passed=trace.converged and bounds.passed and rate.passed and rate.step_passed,
                                     detail=f"a priori {bounds.apriori_ok}, a posteriori {bounds.aposteriori_ok}, "
                                            f"merged {bounds.merged_ok}, cauchy {bounds.cauchy_ok}"))

    frame = convergence_frame(krasnoselskij(T, 0.25, 0.0, EXACT))
    ratios = frame["rate_ratio"].dropna().to_numpy()
    spread = float(np.max(np.abs(ratios - 0.5))) if ratios.size else float("inf")
    checks.append(SuiteCheck(suite=suite, name="rate-ratio-constant-lambda0.25", passed=spread <= 1e-5,
                             value=spread, detail=f"{ratios.size} ratios"))
    return checks


def vip_interval(seed: int) -> List[SuiteCheck]:
    suite = "vip-interval"
    C = interval(2 / 3, 4 / 3)
    problem = VipProblem(G=AffineMap([[2.0]], [-2.0], C, name="G"), C=C, gamma=1.0)
    sampling = SamplingPlan(grid_step=1e-3)
    checks = []

    grid = np.linspace(2 / 3, 4 / 3, 1001)[:, None]
    gap = float(np.max(np.abs(vip_operator(problem).apply(grid) - (2 - grid))))
    checks.append(SuiteCheck(suite=suite, name="composite-equals-2-minus-x", passed=gap <= 1e-12, value=gap))

    r = check_monotone(AffineMap([[2.0]], [-2.0], interval(0.0, 2.0), name="G"), SamplingPlan(grid_step=1e-2))
    checks.append(SuiteCheck(suite=suite, name="operator-monotone", passed=r.certified, value=r.margin,
                             detail=r.verdict.value))

    # G(x) = 2x - 2 makes the composite 2 - x, an enriched almost contraction with b = 1
    params = EnrichedAlmostParams(b=1.0, theta=1.0, L=0.0)
    for x0 in (2 / 3, 1.3):
        trace = solve_vip_certified(problem, params, x0, EXACT, sampling=sampling)
        named = {c.name: c for c in trace.checks}
        ok = (trace.converged and trace.lam == 0.5 and abs(trace.limit[0] - 1.0) <= 1e-9
              and named["operator-certified"].passed
              and named["fixed-point-identity"].value <= 1e-12
              and named["vip-inequality"].value >= -1e-7)
        checks.append(SuiteCheck(suite=suite, name=f"solve-from{x0:.4g}", passed=ok,
                                 value=trace.limit[0] if trace.limit is not None else None, detail=trace.status.value))

    solutions = scan_vip_solutions(problem, 1e-4, extra=[(1.0,)])
    ok = len(solutions) == 1 and abs(solutions[0][0] - 1.0) <= 1e-9
    checks.append(SuiteCheck(suite=suite, name="oracle-unique-solution", passed=ok, value=float(len(solutions)),
                             detail=f"solutions {[p[0] for p in solutions][:5]}"))
    return checks


def identity(seed: int) -> List[SuiteCheck]:
    suite = "identity"
    T = gallery_map("identity-01")
    checks = []

    r = check_almost(T, 0.9, 0.1, SamplingPlan(grid_step=1e-2))
    checks.append(SuiteCheck(suite=suite, name="identity-almost-not-falsified", passed=not r.falsified,
                             value=r.margin, detail=f"{r.verdict.value}; the condition holds with equality"))

    found = fixed_point_set(T, step=1e-2)
    checks.append(SuiteCheck(suite=suite, name="identity-fixes-whole-grid", passed=len(found) == 101,
                             value=float(len(found))))

    trace = krasnoselskij(T, 0.5, 0.3, EXACT)
    checks.append(SuiteCheck(suite=suite, name="identity-immediate-convergence",
                             passed=trace.converged and trace.steps == 0 and trace.limit[0] == 0.3))

    trace = picard(gallery_map("halving-01"), 1.0, EXACT, delta=0.5)
    rate = rate_check(trace, limit=0.0, delta=0.5, tau=1e-12)
    checks.append(SuiteCheck(suite=suite, name="halving-rate-one-half",
                             passed=trace.converged and rate.passed and abs(trace.limit[0]) <= 1e-9,
                             detail=f"{trace.steps} steps"))

    trace = picard(gallery_map("constant-01"), 0.0, EXACT)
    checks.append(SuiteCheck(suite=suite, name="constant-one-step",
                             passed=trace.converged and trace.steps == 1 and trace.limit[0] == 0.5))
    return checks


def _synthetic(kind: str, i: int, rng: np.random.Generator):
    """An affine map x -> (m - k) x + c on [0, 1] inside the regime where the source condition and its conversion hold."""
    k = float(rng.uniform(0.0, 3.0))
    if kind == "kannan":
        a = float(rng.uniform(0.05, 0.45))
        p, bound = KannanParams(k=k, a=a), min(a / (1 - a), a * (1 + k) / (1 + a))
        source, convert = check_kannan, from_kannan
    elif kind == "chatterjea":
        b = float(rng.uniform(0.05, 0.45))
        p, bound = ChatterjeaParams(k=k, b=b), b / (1 - b)
        source, convert = check_chatterjea, from_chatterjea
    else:
        h = float(rng.uniform(0.05, 0.95))
        p, bound = BianchiniParams(k=k, h=h), min(h, h * (1 + k) / (2 + h))
        source, convert = check_bianchini, from_bianchini
    m = float(rng.uniform(0.1, 0.9)) * bound
    c = float(rng.uniform(-0.5, 0.5))
    T = AffineMap([[m - k]], [c], interval(0.0, 1.0), name=f"{kind}-{i}")
    return T, p, source, convert


def class_conversions(seed: int) -> List[SuiteCheck]:
    suite = "class-conversions"
    rng = np.random.default_rng(seed)
    plan = SamplingPlan(grid_step=1e-3)
    checks = []

    kinds = ("kannan", "chatterjea", "bianchini")
    for i in range(20):
        kind = kinds[i % 3]
        T, p, source, convert = _synthetic(kind, i, rng)
        src = source(T, p, plan)
        conv = check_enriched_almost(T, convert(p), plan)
        checks.append(SuiteCheck(suite=suite, name=f"{kind}-{i}-converted", passed=src.certified and conv.certified,
                                 value=conv.margin, detail=f"source {src.verdict.value}, converted {conv.verdict.value}"))

    # x -> -8x/7 meets the Kannan condition with k = 2, a = 0.4, but the direct
    # conversion fails at y = 2x/7; the averaged route keeps the (k+1) factor
    T = AffineMap([[-8 / 7]], [0.0], interval(-1.0, 1.0), name="kannan-gap")
    p = KannanParams(k=2.0, a=0.4)
    spot = SamplingPlan(grid_step=1e-2, probes=[((0.7,), (0.2,))])
    src = check_kannan(T, p, spot)
    direct = check_enriched_almost(T, from_kannan(p), spot)
    lifted = check_enriched_almost(T, kannan_via_averaged(p), spot)
    checks.append(SuiteCheck(suite=suite, name="kannan-direct-conversion-gap",
                             passed=not src.falsified and direct.falsified and lifted.certified,
                             value=direct.margin,
                             detail=f"source {src.verdict.value}, direct {direct.verdict.value}, "
                                    f"averaged {lifted.verdict.value}"))

    coarse = SamplingPlan(grid_step=1e-2)
    cases = [(gallery_map("ex2-piecewise"), EnrichedAlmostParams(b=1.0, theta=1.0, L=3.0))]
    cases += [(gallery_map(name), EnrichedAlmostParams(b=0.5, theta=1.0, L=0.5))
              for name in ("identity-01", "halving-01", "constant-01")]
    for i in range(10):
        A = float(rng.uniform(-2.0, 2.0))
        c = float(rng.uniform(-1.0, 1.0))
        b = float(rng.uniform(0.0, 2.0))
        theta = float(rng.uniform(0.05, 0.95)) * (b + 1)
        L = float(rng.uniform(0.0, 2.0))
        cases.append((AffineMap([[A]], [c], interval(-1.0, 1.0), name=f"affine-{i}"),
                      EnrichedAlmostParams(b=b, theta=theta, L=L)))
    agree = 0
    for T, params in cases:
        direct = check_enriched_almost(T, params, coarse)
        reduced = reduced_condition_check(T, params, coarse)
        agree += direct.verdict == reduced.verdict
    checks.append(SuiteCheck(suite=suite, name="reduction-verdicts-agree", passed=agree == len(cases),
                             value=float(agree), detail=f"{agree}/{len(cases)} maps"))
    return checks


def uniqueness(seed: int) -> List[SuiteCheck]:
    suite = "uniqueness"
    T = gallery_map("ex2-piecewise")
    plan = SamplingPlan(grid_step=1e-2, probes=[((0.5,), (1.0,))])
    falsified = 0
    for delta1 in DELTAS:
        for L1 in SLACKS:
            falsified += check_uniqueness_condition(T, UniquenessParams(delta1=delta1, L1=L1), plan).falsified
    total = len(DELTAS) * len(SLACKS)
    found = [p[0] for p in fixed_point_set(T)]
    ok_fix = len(found) == 2 and abs(found[0] - 0.5) <= 1e-12 and abs(found[1] - 1.0) <= 1e-12
    return [
        SuiteCheck(suite=suite, name="uniqueness-condition-falsified", passed=falsified == total,
                   value=float(falsified), detail=f"{falsified}/{total} (delta1, L1) falsified"),
        SuiteCheck(suite=suite, name="two-fixed-points", passed=ok_fix, detail=f"fixed points {found}"),
    ]


SUITE_RUNNERS: Dict[str, Callable[[int], List[SuiteCheck]]] = {
    "piecewise-certification": piecewise_certification,
    "piecewise-iteration": piecewise_iteration,
    "vip-interval": vip_interval,
    "identity": identity,
    "class-conversions": class_conversions,
    "uniqueness": uniqueness,
}


def resolve_suites(names: Optional[List[str]]) -> List[str]:
    if not names or "all" in names:
        return list(SUITES)
    return [name for name in SUITES if name in names]


def run_suite(name: str, seed: int) -> List[SuiteCheck]:
    checks = SUITE_RUNNERS[name](seed)
    failed = [c.name for c in checks if not c.passed]
    if failed:
        logger.error(f"Suite {name}: {len(failed)} failed check(s): {failed}")
    else:
        logger.info(f"Suite {name}: all {len(checks)} checks passed")
    return checks


__all__ = ['SUITE_RUNNERS', 'resolve_suites', 'run_suite']
