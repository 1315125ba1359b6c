# test_iterate.py

import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from config.config import Config
from models.contract import EnrichedAlmostParams
from models.exceptions import ConfigError
from models.iterate import (
    AveragedMap,
    IterationStatus,
    StoppingMode,
    StoppingRule,
    aposteriori_bound,
    apriori_bound,
    bound_check,
    canonical_lambda,
    krasnoselskij,
    merged_bound,
    picard,
    rate_check,
    reduced_delta,
    sweep,
)
from models.space import AffineMap, gallery_map, interval, residual

EXACT = StoppingRule(tol=1e-12, max_iter=10_000, mode=StoppingMode.residual)


@pytest.fixture(scope="module")
def piecewise():
    return gallery_map("ex2-piecewise")


def test_picard_cycles_on_piecewise(piecewise):
    trace = picard(piecewise, 0.2, EXACT)
    assert trace.status == IterationStatus.cycle_detected
    assert trace.limit is None
    assert [p[0] for p in trace.cycle] == pytest.approx([0.8, 1.2])
    assert [p[0] for p in trace.iterates[:4]] == pytest.approx([0.2, 0.8, 1.2, 0.8])


def test_picard_on_negation_cycles():
    T = AffineMap([[-1.0]], [0.0], interval(-1.0, 1.0))
    trace = picard(T, 0.5, EXACT)
    assert trace.status == IterationStatus.cycle_detected
    assert sorted(p[0] for p in trace.cycle) == [-0.5, 0.5]


@pytest.mark.parametrize("lam", [0.9, 0.99])
def test_alternating_approach_is_not_a_cycle(piecewise, lam):
    # on the right piece x_{n+1} - 1 = (1 - 2 lambda)(x_n - 1) flips sides of 1 every step
    trace = krasnoselskij(piecewise, lam, 0.2, EXACT)
    assert trace.status == IterationStatus.converged
    assert trace.cycle == []
    assert trace.limit[0] == pytest.approx(1.0, abs=1e-9)


def test_slow_alternating_picard_converges():
    T = AffineMap([[-0.99]], [0.0], interval(-1.0, 1.0))
    trace = picard(T, 0.5, EXACT)
    assert trace.status == IterationStatus.converged
    assert trace.steps > 2000
    assert trace.limit[0] == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("x0, expected", [(0.2, 0.5), (0.0, 0.5), (1.2, 1.0), (4 / 3, 1.0)])
def test_krasnoselskij_half_lands_in_one_step(piecewise, x0, expected):
    trace = krasnoselskij(piecewise, 0.5, x0, EXACT)
    assert trace.converged
    assert trace.limit[0] == pytest.approx(expected, abs=1e-12)
    assert trace.steps == 1


def test_krasnoselskij_closed_form(piecewise):
    # on the left piece x_{n+1} - 1/2 = (1 - 2 lambda)(x_n - 1/2)
    trace = krasnoselskij(piecewise, 0.25, 0.2, EXACT)
    assert trace.converged
    X = trace.history()[:, 0]
    expected = 0.5 - 0.3 * 0.5 ** np.arange(X.size)
    assert np.allclose(X, expected, atol=1e-12)
    assert trace.limit[0] == pytest.approx(0.5, abs=1e-9)


def test_lambda_one_is_picard():
    T = gallery_map("halving-01")
    a = picard(T, 1.0, EXACT)
    b = krasnoselskij(T, 1.0, 1.0, EXACT)
    assert a.method == "picard" and b.method == "krasnoselskij"
    assert [p.coords for p in a.iterates] == [p.coords for p in b.iterates]
    assert a.status == b.status


@pytest.mark.parametrize("lam", [0.0, -0.5, 1.5])
def test_lambda_outside_unit_interval(piecewise, lam):
    with pytest.raises(ConfigError):
        krasnoselskij(piecewise, lam, 0.2, EXACT)
    with pytest.raises(ConfigError):
        AveragedMap(piecewise, lam)


def test_averaged_map_shares_fixed_points(piecewise):
    T = AveragedMap(piecewise, 0.3)
    assert T(0.5)[0] == pytest.approx(0.5)
    assert T(1.0)[0] == pytest.approx(1.0)
    assert T.breakpoints == piecewise.breakpoints
    assert T.describe()["lambda"] == 0.3


@settings(max_examples=200, deadline=None)
@given(x=st.floats(min_value=0.0, max_value=4 / 3), lam=st.floats(min_value=1e-3, max_value=1.0))
def test_averaged_residual_scales_with_lambda(x, lam):
    T = gallery_map("ex2-piecewise")
    assert residual(AveragedMap(T, lam), [x]) == pytest.approx(lam * residual(T, [x]), rel=1e-12, abs=1e-14)


def test_bounds_hold_along_contracting_trace(piecewise):
    trace = krasnoselskij(piecewise, 0.25, 0.2, EXACT, delta=0.6)
    report = bound_check(trace, limit=[0.5], delta=0.6)
    assert report.passed
    assert rate_check(trace, limit=[0.5], delta=0.6).passed


def test_rate_violated_with_too_small_delta(piecewise):
    trace = krasnoselskij(piecewise, 0.25, 0.2, EXACT)
    report = rate_check(trace, limit=[0.5], delta=0.3)
    assert not report.passed
    assert report.first_violation == 1
    assert report.ratios[1] == pytest.approx(0.5)
    assert not report.step_passed
    assert not bound_check(trace, limit=[0.5], delta=0.3).passed


def test_cauchy_check_matches_pairwise_scan(piecewise):
    trace = krasnoselskij(piecewise, 0.25, 0.2, EXACT)
    delta = 0.3
    X = trace.history()[:, 0]
    d01 = abs(X[1] - X[0])
    expected = next(((n, p) for n in range(X.size - 1) for p in range(1, X.size - n)
                     if abs(X[n + p] - X[n]) > delta ** n * (1 - delta ** p) / (1 - delta) * d01 + Config.TAU_FIX),
                    None)
    assert expected == (0, 2)
    assert bound_check(trace, limit=[0.5], delta=delta).first_cauchy_violation == expected


def test_bound_check_on_a_long_trace():
    T = AffineMap([[0.999]], [0.0], interval(0.0, 1.0))
    rule = StoppingRule(tol=1e-12, max_iter=20_000, mode=StoppingMode.residual)
    trace = picard(T, 1.0, rule, delta=0.999)
    assert trace.converged
    assert trace.steps > 10_000
    report = bound_check(trace, limit=[0.0], delta=0.999)
    assert report.passed


def test_trace_carries_bound_columns(piecewise):
    trace = krasnoselskij(piecewise, 0.25, 0.2, EXACT, delta=0.6)
    d01 = trace.step_norms[0]
    assert d01 == pytest.approx(0.15)
    assert len(trace.apriori) == len(trace.residuals) == len(trace.aposteriori)
    assert trace.apriori[0] == pytest.approx(d01 / 0.4)
    assert trace.aposteriori[0] is None
    assert trace.aposteriori[1] == pytest.approx(0.6 * d01 / 0.4)
    assert trace.bounds[0] == (trace.apriori[0], None)


def test_bound_formulas():
    assert apriori_bound(0.5, 1.0, 2) == pytest.approx(0.5)
    assert aposteriori_bound(0.5, 0.2) == pytest.approx(0.2)
    assert merged_bound(0.5, 0.2, 1) == aposteriori_bound(0.5, 0.2)
    assert merged_bound(0.5, 0.2, 3) == pytest.approx(0.05)
    with pytest.raises(ConfigError):
        merged_bound(0.5, 0.2, 0)
    with pytest.raises(ConfigError):
        apriori_bound(1.0, 1.0, 1)
    with pytest.raises(ConfigError):
        aposteriori_bound(0.5, -1.0)


def test_reduced_parameters():
    p = EnrichedAlmostParams(b=1.0, theta=1.0, L=3.0)
    assert canonical_lambda(p) == 0.5
    assert reduced_delta(p) == 0.5


def test_max_iter_status():
    trace = picard(gallery_map("halving-01"), 1.0, StoppingRule(tol=1e-12, max_iter=5, mode=StoppingMode.residual))
    assert trace.status == IterationStatus.max_iter
    assert trace.steps == 5
    assert len(trace.iterates) == 6
    assert len(trace.residuals) == 6
    assert trace.final[0] == pytest.approx(1 / 32)


@pytest.mark.parametrize("mode", list(StoppingMode))
def test_stopping_modes_stop_before_max_iter(mode):
    rule = StoppingRule(tol=1e-6, max_iter=1000, mode=mode)
    trace = picard(gallery_map("halving-01"), 1.0, rule, delta=0.5)
    # the rule fires long before the residual reaches tau_fix
    assert trace.status == IterationStatus.stopped
    assert not trace.converged
    assert trace.residuals[-1] > Config.TAU_FIX
    assert trace.steps < 1000
    assert trace.final[0] <= 2e-6
    assert trace.limit == trace.final


def test_default_mode_follows_delta():
    T = gallery_map("halving-01")
    rule = StoppingRule(tol=1e-6, max_iter=1000)
    with_delta = picard(T, 1.0, rule, delta=0.5)
    # the a posteriori estimate equals the last step for delta = 1/2
    assert with_delta.step_norms[-1] <= 1e-6
    assert with_delta.step_norms[-2] > 1e-6
    without = picard(T, 1.0, rule)
    assert without.residuals[-1] <= 1e-6
    assert without.residuals[-2] > 1e-6


def test_aposteriori_without_delta_falls_back(caplog):
    rule = StoppingRule(tol=1e-6, max_iter=1000, mode=StoppingMode.aposteriori)
    with caplog.at_level(logging.WARNING):
        trace = picard(gallery_map("halving-01"), 1.0, rule)
    assert "falling back" in caplog.text
    assert trace.status == IterationStatus.stopped


@settings(max_examples=50, deadline=None)
@given(tol=st.floats(min_value=1e-12, max_value=1e-3), lam=st.floats(min_value=0.05, max_value=0.95),
       x0=st.floats(min_value=0.0, max_value=4 / 3))
def test_status_agrees_with_final_residual(tol, lam, x0):
    rule = StoppingRule(tol=tol, max_iter=2000, mode=StoppingMode.residual)
    trace = krasnoselskij(gallery_map("ex2-piecewise"), lam, x0, rule)
    last = trace.residuals[-1]
    if trace.status == IterationStatus.converged:
        assert last <= Config.TAU_FIX
    if trace.status == IterationStatus.stopped:
        assert Config.TAU_FIX < last <= tol
    assert (trace.limit is not None) == (trace.status in (IterationStatus.converged, IterationStatus.stopped))


def test_domain_exit():
    T = AffineMap([[2.0]], [0.0], interval(0.0, 1.0))
    trace = picard(T, 0.8, EXACT)
    assert trace.status == IterationStatus.domain_exit
    assert trace.error
    assert trace.final[0] == pytest.approx(1.6)
    assert trace.limit is None


def test_thin_trace_keeps_endpoints():
    trace = picard(gallery_map("halving-01"), 1.0, EXACT, thin=True)
    assert trace.converged
    assert len(trace.iterates) == 2
    assert trace.iterates[0][0] == 1.0
    assert len(trace.residuals) == trace.steps + 1
    with pytest.raises(ConfigError):
        trace.history()


def test_fixed_start_converges_immediately(piecewise):
    trace = picard(piecewise, 1.0, EXACT)
    assert trace.converged
    assert trace.steps == 0
    assert trace.limit[0] == 1.0


def test_sweep_order(piecewise):
    traces = sweep(piecewise, [0.25, 0.5], [0.2, 1.2, 0.0], EXACT)
    assert [(t.lam, t.iterates[0][0]) for t in traces] == [
        (0.25, 0.2), (0.25, 1.2), (0.25, 0.0), (0.5, 0.2), (0.5, 1.2), (0.5, 0.0)]
    assert all(t.converged for t in traces)
    assert [t.limit[0] for t in traces] == pytest.approx([0.5, 1.0, 0.5, 0.5, 1.0, 0.5], abs=1e-8)
