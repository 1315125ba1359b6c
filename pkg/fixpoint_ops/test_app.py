# test_app.py

import json

import pandas as pd
import pytest

from app import AsyncExperimentApp
from cli.models import ExperimentConfig


def _config(**fields) -> ExperimentConfig:
    return ExperimentConfig.model_validate({"schema_version": 1, **fields})


def _files(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


@pytest.mark.asyncio
async def test_reproduce_all_passes(tmp_path):
    """Every reproduction suite passes with the default seed"""
    report = await AsyncExperimentApp(_config(kind="reproduce"), out_dir=str(tmp_path)).arun()
    failed = [f"{c.suite}/{c.name}: {c.detail}" for c in report.checks if not c.passed]
    assert failed == []
    assert report.status == "passed"
    assert report.exit_code == 0
    assert [r.name for r in report.results] == [
        "piecewise-certification", "piecewise-iteration", "vip-interval", "identity",
        "class-conversions", "uniqueness",
    ]
    checks = pd.read_csv(tmp_path / "checks.csv")
    assert len(checks) == len(report.checks)


@pytest.mark.asyncio
async def test_reruns_are_byte_identical(tmp_path):
    """Same seed, same artifacts, across every suite"""
    config = _config(kind="reproduce", seed=3)
    await AsyncExperimentApp(config, out_dir=str(tmp_path / "a")).arun()
    await AsyncExperimentApp(config, out_dir=str(tmp_path / "b")).arun()
    first, second = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert sorted(first) == ["checks.csv", "report.json"]
    assert first == second


@pytest.mark.asyncio
async def test_certify_without_expectation(tmp_path):
    config = _config(kind="certify", map={"id": "ex2-piecewise"}, condition="almost",
                     params=[{"delta": 0.5, "L": 1.0}],
                     sampling={"grid_step": 0.01, "probes": [[7 / 15, 8 / 15]]})
    report = await AsyncExperimentApp(config, out_dir=str(tmp_path)).arun()
    assert report.status == "passed"
    assert report.results[0].passed is None
    assert report.results[0].result["verdict"] == "falsified"
    assert _files(tmp_path).keys() == {"report.json"}


@pytest.mark.asyncio
async def test_iterate_writes_tables_and_checks_bounds(tmp_path):
    config = _config(kind="iterate", map={"id": "ex2-piecewise"}, lambdas=[0.25], starts=[0.2, 1.2],
                     delta=0.6, rule={"tol": 1e-12, "mode": "residual"})
    report = await AsyncExperimentApp(config, out_dir=str(tmp_path), format="markdown").arun()
    assert report.status == "passed"
    assert [r.result["limit"][0] for r in report.results] == pytest.approx([0.5, 1.0], abs=1e-8)
    assert all(r.result["bounds"] is not None for r in report.results)
    assert {"trace-0.md", "trace-1.md"} <= set(_files(tmp_path))
    assert report.config["format"] == "markdown"


@pytest.mark.asyncio
async def test_iterate_expected_cycle(tmp_path):
    config = _config(kind="iterate", map={"id": "ex2-piecewise"}, method="picard", starts=[0.2],
                     expect="cycle_detected")
    report = await AsyncExperimentApp(config, out_dir=str(tmp_path)).arun()
    assert report.status == "passed"
    assert report.results[0].result["cycle"] == [[pytest.approx(0.8)], [pytest.approx(1.2)]]
    table = pd.read_csv(tmp_path / "trace-0.csv")
    assert table["x_n"].tolist()[:3] == pytest.approx([0.2, 0.8, 1.2])


@pytest.mark.asyncio
async def test_sweep_and_search_tables(tmp_path):
    sweep = _config(kind="sweep", map={"id": "ex2-piecewise"}, lambdas=[0.25, 0.5], starts=[0.0, 1.3],
                    rule={"tol": 1e-12, "mode": "residual"})
    await AsyncExperimentApp(sweep, out_dir=str(tmp_path / "sweep")).arun()
    runs = pd.read_csv(tmp_path / "sweep" / "sweep.csv")
    assert runs["lambda"].tolist() == [0.25, 0.25, 0.5, 0.5]
    assert (runs["status"] == "converged").all()

    search = _config(kind="search", map={"id": "ex2-piecewise"}, sampling={"grid_step": 0.02},
                     grid={"b": [0.0, 1.0], "theta": [0.5, 1.0], "L": [0.0, 3.0]}, expect="certified")
    report = await AsyncExperimentApp(search, out_dir=str(tmp_path / "search")).arun()
    assert report.status == "passed"
    found = pd.read_csv(tmp_path / "search" / "search.csv")
    assert found["delta"].is_monotonic_increasing
    assert report.results[0].result["best"]["L"] == 3.0


@pytest.mark.asyncio
async def test_vip_with_oracle(tmp_path):
    config = _config(kind="vip", vip={
        "operator": {"id": "affine", "A": 2.0, "c": -2.0},
        "set": {"kind": "interval", "lo": 0.0, "hi": 2.0},
        "k": 1.0,
        "starts": [0.5, 2.0],
        "scan_step": 0.25,
    }, rule={"tol": 1e-12, "mode": "residual"})
    report = await AsyncExperimentApp(config, out_dir=str(tmp_path)).arun()
    assert report.status == "passed"
    by_name = {r.name: r for r in report.results}
    assert by_name["vip-0"].result["limit"] == [1.0]
    assert {c["name"] for c in by_name["vip-0"].result["checks"]} == {"fixed-point-identity", "vip-inequality"}
    assert by_name["vip-oracle"].result["solutions"] == [[1.0]]
    assert {"vip-0.csv", "vip-1.csv", "report.json"} == set(_files(tmp_path))


@pytest.mark.asyncio
async def test_vip_certifies_composite_before_solving(tmp_path):
    """With certify given, lambda = 1/(b+1) and the certificate rides along with the trace"""
    config = _config(kind="vip", vip={
        "operator": {"id": "affine", "A": 2.0, "c": -2.0},
        "set": {"kind": "interval", "lo": 2 / 3, "hi": 4 / 3},
        "certify": {"b": 1.0, "theta": 1.0, "L": 0.0},
        "starts": [2 / 3, 1.3],
    }, sampling={"grid_step": 0.01}, rule={"tol": 1e-12, "mode": "residual"})
    report = await AsyncExperimentApp(config, out_dir=str(tmp_path)).arun()
    assert report.status == "passed"
    for result in report.results:
        assert result.result["lambda"] == 0.5
        assert result.result["limit"] == [pytest.approx(1.0, abs=1e-12)]
        assert result.result["certification"]["verdict"] == "certified"
        checks = {c["name"]: c["passed"] for c in result.result["checks"]}
        assert checks == {"fixed-point-identity": True, "vip-inequality": True, "operator-certified": True}


def test_vip_spec_needs_a_step():
    with pytest.raises(ValueError):
        _config(kind="vip", vip={"operator": {"id": "affine", "A": 2.0, "c": -2.0},
                                 "set": {"kind": "interval", "lo": 0.0, "hi": 2.0}, "starts": [0.5]})
    with pytest.raises(ValueError):
        _config(kind="vip", vip={"operator": {"id": "affine", "A": 2.0, "c": -2.0},
                                 "set": {"kind": "interval", "lo": 0.0, "hi": 2.0}, "starts": [0.5],
                                 "k": 2.0, "certify": {"b": 1.0, "theta": 1.0, "L": 0.0}})


@pytest.mark.asyncio
async def test_setup_error_still_writes_report(tmp_path):
    """A map that cannot be built turns the whole run into an error"""
    config = _config(kind="certify", map={"id": "affine", "A": [[1.0, 0.0], [0.0, 1.0]], "c": [0.0, 0.0],
                                          "lo": [0.0], "hi": [1.0]},
                     params=[{"b": 1.0, "theta": 1.0, "L": 0.0}], sampling={"grid_step": 0.1})
    report = await AsyncExperimentApp(config, out_dir=str(tmp_path)).arun()
    assert report.status == "error"
    assert report.exit_code == 1
    written = json.loads((tmp_path / "report.json").read_text())
    assert written["results"][0]["error"]


def test_seed_override_reaches_random_sampling():
    config = _config(kind="certify", map={"id": "halving-01"}, condition="almost", params=[{"delta": 0.6}],
                     sampling={"random_pairs": 10, "seed": 1})
    app = AsyncExperimentApp(config, seed=7)
    assert app.seed == 7
    assert app.config.sampling.seed == 7
