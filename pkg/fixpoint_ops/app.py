import asyncio
import logging
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import pandas as pd

from cli.models import ExperimentConfig, RunReport, SuiteCheck, TaskResult
from cli.suites import resolve_suites, run_suite
from cli.utils import build_map, build_vip, emit_convergence_table, table_suffix, write_atomic
from config.config import Config
from models.contract import (
    BianchiniParams,
    ChatterjeaParams,
    EnrichedAlmostParams,
    KannanParams,
    UniquenessParams,
    check_almost,
    check_bianchini,
    check_chatterjea,
    check_enriched_almost,
    check_enriched_contraction,
    check_enriched_nonexpansive,
    check_kannan,
    check_quasi_nonexpansive,
    check_uniqueness_condition,
    from_bianchini,
    from_chatterjea,
    from_kannan,
    search_params,
)
from models.exceptions import ConfigError, FixpointError
from models.iterate import (
    IterationTrace,
    bound_check,
    krasnoselskij,
    picard,
    rate_check,
    reduced_condition_check,
    sweep,
)
from models.space import MapDescriptor
from models.vip import check_monotone, scan_vip_solutions, solve_vip, solve_vip_certified

logger = logging.getLogger(__name__)

# a task returns its result and the artifacts (file name -> content) it produced
TaskOutput = Tuple[TaskResult, Dict[str, str]]


def _value(values: Dict[str, float], key: str, default: Optional[float] = None) -> float:
    if key in values:
        return values[key]
    if default is None:
        raise ConfigError(f"params entry is missing '{key}'", [{"field": f"params.{key}", "message": "missing"}])
    return default


def _params(model, values: Dict[str, float], label: str):
    try:
        return model(**values)
    except ValueError as e:
        raise ConfigError(f"Invalid params for {label}: {values}", [{"field": "params", "message": str(e)}])


def run_condition(T: MapDescriptor, condition: str, values: Dict[str, float], sampling,
                  fixed_points: Optional[List] = None):
    """Dispatch a named condition to its certifier."""
    if condition == "enriched-almost":
        return check_enriched_almost(T, _params(EnrichedAlmostParams, values, condition), sampling)
    if condition == "reduced-almost":
        return reduced_condition_check(T, _params(EnrichedAlmostParams, values, condition), sampling)
    if condition == "almost":
        return check_almost(T, _value(values, "delta"), _value(values, "L", 0.0), sampling)
    if condition == "enriched-contraction":
        return check_enriched_contraction(T, _value(values, "b", 0.0), _value(values, "theta"), sampling)
    if condition == "enriched-nonexpansive":
        return check_enriched_nonexpansive(T, _value(values, "b", 0.0), sampling)
    if condition == "uniqueness":
        return check_uniqueness_condition(T, _params(UniquenessParams, values, condition), sampling)
    if condition == "kannan":
        return check_kannan(T, _params(KannanParams, values, condition), sampling)
    if condition == "chatterjea":
        return check_chatterjea(T, _params(ChatterjeaParams, values, condition), sampling)
    if condition == "bianchini":
        return check_bianchini(T, _params(BianchiniParams, values, condition), sampling)
    if condition == "kannan-to-almost":
        return check_enriched_almost(T, from_kannan(_params(KannanParams, values, condition)), sampling)
    if condition == "chatterjea-to-almost":
        return check_enriched_almost(T, from_chatterjea(_params(ChatterjeaParams, values, condition)), sampling)
    if condition == "bianchini-to-almost":
        return check_enriched_almost(T, from_bianchini(_params(BianchiniParams, values, condition)), sampling)
    if condition == "quasi-nonexpansive":
        return check_quasi_nonexpansive(T, fixed_points or [], sampling)
    if condition == "monotone":
        return check_monotone(T, sampling)
    raise ConfigError(f"Unknown condition '{condition}'", [{"field": "condition", "message": condition}])


def trace_summary(trace: IterationTrace) -> dict:
    return {
        "method": trace.method,
        "map": trace.map_name,
        "lambda": trace.lam,
        "x0": list(trace.iterates[0].coords),
        "status": trace.status.value,
        "steps": trace.steps,
        "limit": list(trace.limit.coords) if trace.limit is not None else None,
        "final_residual": trace.residuals[-1] if trace.residuals else None,
        "cycle": [list(p.coords) for p in trace.cycle],
        "checks": [c.model_dump() for c in trace.checks],
        "error": trace.error,
        "certification": trace.certification.model_dump(mode="json") if trace.certification is not None else None,
    }


class AsyncExperimentApp:
    def __init__(self, config: ExperimentConfig, out_dir: Optional[str] = None, seed: Optional[int] = None,
                 format: Optional[str] = None):
        self.config = self._apply_overrides(config, seed, format)
        self.out_dir = Path(out_dir or config.out_dir or Config.OUTPUT_DIR)
        self.seed = self.config.seed if self.config.seed is not None else Config.SEED

    @staticmethod
    def _apply_overrides(config: ExperimentConfig, seed: Optional[int], format: Optional[str]) -> ExperimentConfig:
        data = config.model_dump(mode="json")
        if seed is not None:
            data["seed"] = seed
            if data.get("sampling") and data["sampling"].get("random_pairs"):
                data["sampling"]["seed"] = seed
        if format is not None:
            data["format"] = format
        return ExperimentConfig.model_validate(data)

    async def _arun_task(self, name: str, kind: str, fn: Callable[[], TaskOutput]) -> TaskOutput:
        """Run one CPU-bound task in the default executor; failures become error results."""
        loop = asyncio.get_event_loop()
        try:
            return await loop.run_in_executor(None, fn)
        except FixpointError as e:
            logger.error(f"Task {name} failed: {e}")
            return TaskResult(name=name, kind=kind, passed=False, error=str(e)), {}

    def _tasks(self) -> List[Tuple[str, str, Callable[[], TaskOutput]]]:
        cfg = self.config
        builders = {
            "certify": self._certify_tasks,
            "search": self._search_tasks,
            "iterate": self._iterate_tasks,
            "sweep": self._sweep_tasks,
            "vip": self._vip_tasks,
            "reproduce": self._reproduce_tasks,
        }
        return builders[cfg.kind]()

    # certify

    def _certify_tasks(self):
        cfg = self.config
        T = build_map(cfg.map)
        entries = cfg.params or [{}]

        def task(i: int, values: Dict[str, float]):
            def run() -> TaskOutput:
                report = run_condition(T, cfg.condition, values, cfg.sampling, cfg.fixed_points)
                passed = None if cfg.expect is None else report.verdict.value == cfg.expect
                return TaskResult(name=f"certify-{i}", kind="certify", passed=passed,
                                  result=report.model_dump(mode="json")), {}
            return run

        return [(f"certify-{i}", "certify", task(i, values)) for i, values in enumerate(entries)]

    # search

    def _search_tasks(self):
        cfg = self.config

        def run() -> TaskOutput:
            found = search_params(build_map(cfg.map), cfg.sampling, cfg.grid)
            rows = [{"b": p.b, "theta": p.theta, "L": p.L, "delta": p.delta, "margin": r.margin,
                     "samples_used": r.samples_used} for p, r in found]
            frame = pd.DataFrame(rows, columns=["b", "theta", "L", "delta", "margin", "samples_used"])
            passed = None if cfg.expect is None else (len(found) > 0) == (cfg.expect == "certified")
            result = {"certified": rows, "best": rows[0] if rows else None}
            return TaskResult(name="search", kind="search", passed=passed, result=result), \
                {"search.csv": frame.to_csv(index=False)}

        return [("search", "search", run)]

    # iterate

    def _run_iteration(self, T: MapDescriptor, lam: float, x0) -> IterationTrace:
        cfg = self.config
        if cfg.method == "picard":
            return picard(T, x0, cfg.rule, delta=cfg.delta)
        return krasnoselskij(T, lam, x0, cfg.rule, delta=cfg.delta)

    def _iterate_tasks(self):
        cfg = self.config
        T = build_map(cfg.map)
        lambdas = [1.0] if cfg.method == "picard" else cfg.lambdas
        suffix = table_suffix(cfg.format)

        def task(i: int, lam: float, x0):
            def run() -> TaskOutput:
                trace = self._run_iteration(T, lam, x0)
                result = trace_summary(trace)
                passed = None if cfg.expect is None else trace.status.value == cfg.expect
                if cfg.delta is not None and trace.limit is not None:
                    bounds = bound_check(trace, delta=cfg.delta)
                    rate = rate_check(trace, delta=cfg.delta)
                    result["bounds"] = bounds.model_dump()
                    result["rate"] = rate.model_dump()
                    passed = (passed is not False) and bounds.passed and rate.passed
                artifacts = {f"trace-{i}{suffix}": emit_convergence_table(trace, cfg.format)}
                return TaskResult(name=f"iterate-{i}", kind="iterate", passed=passed, result=result), artifacts
            return run

        combos = [(lam, x0) for lam in lambdas for x0 in cfg.starts]
        return [(f"iterate-{i}", "iterate", task(i, lam, x0)) for i, (lam, x0) in enumerate(combos)]

    # sweep

    def _sweep_tasks(self):
        cfg = self.config

        def run() -> TaskOutput:
            traces = sweep(build_map(cfg.map), cfg.lambdas, cfg.starts, cfg.rule, delta=cfg.delta)
            rows = []
            for trace in traces:
                summary = trace_summary(trace)
                rows.append({
                    "lambda": trace.lam,
                    "x0": summary["x0"][0] if len(summary["x0"]) == 1 else str(summary["x0"]),
                    "status": summary["status"],
                    "steps": summary["steps"],
                    "limit": (summary["limit"][0] if summary["limit"] and len(summary["limit"]) == 1
                              else summary["limit"]),
                    "final_residual": summary["final_residual"],
                })
            frame = pd.DataFrame(rows, columns=["lambda", "x0", "status", "steps", "limit", "final_residual"])
            return TaskResult(name="sweep", kind="sweep", result={"runs": rows}), \
                {"sweep.csv": frame.to_csv(index=False)}

        return [("sweep", "sweep", run)]

    # vip

    def _vip_tasks(self):
        cfg = self.config
        spec = cfg.vip
        problem = build_vip(spec)
        lam = spec.step_lambda
        suffix = table_suffix(cfg.format)

        def task(i: int, x0):
            def run() -> TaskOutput:
                if spec.certify is not None:
                    trace = solve_vip_certified(problem, spec.certify, x0, cfg.rule, sampling=cfg.sampling, lam=lam)
                else:
                    trace = solve_vip(problem, lam, x0, cfg.rule, sampling=cfg.sampling, delta=spec.delta)
                passed = trace.converged and all(c.passed for c in trace.checks)
                artifacts = {f"vip-{i}{suffix}": emit_convergence_table(trace, cfg.format)}
                return TaskResult(name=f"vip-{i}", kind="vip", passed=passed, result=trace_summary(trace)), artifacts
            return run

        tasks = [(f"vip-{i}", "vip", task(i, x0)) for i, x0 in enumerate(spec.starts)]
        if spec.scan_step is not None:
            def oracle() -> TaskOutput:
                solutions = scan_vip_solutions(problem, spec.scan_step)
                result = {"scan_step": spec.scan_step, "solutions": [list(p.coords) for p in solutions]}
                return TaskResult(name="vip-oracle", kind="vip", passed=len(solutions) > 0, result=result), {}
            tasks.append(("vip-oracle", "vip", oracle))
        return tasks

    # reproduce

    def _reproduce_tasks(self):
        def task(name: str):
            def run() -> TaskOutput:
                checks = run_suite(name, self.seed)
                result = {"checks": [c.model_dump() for c in checks]}
                return TaskResult(name=name, kind="reproduce", passed=all(c.passed for c in checks),
                                  result=result), {}
            return run

        return [(name, "reproduce", task(name)) for name in resolve_suites(self.config.suites)]

    async def arun(self) -> RunReport:
        """Run every task of the experiment concurrently and write the artifacts."""
        start = time.perf_counter()
        report = RunReport(config=self.config.model_dump(mode="json", exclude={"out_dir"}))
        try:
            tasks = self._tasks()
        except FixpointError as e:
            logger.error(f"Could not set up {self.config.kind} experiment: {e}")
            report.status = "error"
            report.results = [TaskResult(name=self.config.label, kind=self.config.kind, passed=False, error=str(e))]
            await self.awrite_artifacts(report, {})
            return report

        outputs = await asyncio.gather(*[self._arun_task(name, kind, fn) for name, kind, fn in tasks])

        artifacts: Dict[str, str] = {}
        for result, files in outputs:
            report.results.append(result)
            artifacts.update(files)
            if result.kind == "reproduce":
                report.checks.extend(SuiteCheck(**c) for c in result.result.get("checks", []))

        if any(r.error for r in report.results):
            report.status = "error"
        elif any(r.passed is False for r in report.results):
            report.status = "failed"
        if report.checks:
            frame = pd.DataFrame([c.model_dump() for c in report.checks],
                                 columns=["suite", "name", "passed", "value", "detail"])
            artifacts["checks.csv"] = frame.to_csv(index=False)

        report.wall_time = time.perf_counter() - start
        await self.awrite_artifacts(report, artifacts)
        logger.info(f"{self.config.label}: {report.status} ({len(report.results)} tasks, "
                    f"{report.wall_time:.2f}s), artifacts in {self.out_dir}")
        return report

    async def awrite_artifacts(self, report: RunReport, artifacts: Dict[str, str]) -> List[Path]:
        """Write every artifact atomically; report.json leaves out the wall time."""
        files = dict(sorted(artifacts.items()))
        files["report.json"] = report.model_dump_json(indent=2, exclude={"wall_time"}) + "\n"
        return await asyncio.gather(*[write_atomic(self.out_dir / name, content) for name, content in files.items()])


__all__ = ['AsyncExperimentApp', 'run_condition', 'trace_summary']
