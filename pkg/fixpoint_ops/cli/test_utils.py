# test_utils.py

import io
import json

import pandas as pd
import pytest

from cli.models import ExperimentConfig, VipSpec
from cli.utils import (
    TABLE_COLUMNS,
    build_vip,
    convergence_frame,
    emit_convergence_table,
    load_config,
    parse_config,
    write_atomic,
)
from models.exceptions import ConfigError
from models.iterate import StoppingMode, StoppingRule, picard
from models.space import gallery_map

CERTIFY = """\
schema_version: 1
kind: certify
map:
  id: ex2-piecewise
params:
  - {b: 1.0, theta: 1.0, L: 3.0}
sampling:
  grid_step: 0.01
"""


@pytest.fixture
def two_steps():
    """Picard on x -> x/2 from 1, stopped after two steps"""
    rule = StoppingRule(tol=1e-12, max_iter=2, mode=StoppingMode.residual)
    return picard(gallery_map("halving-01"), 1.0, rule)


def test_parse_valid_certify():
    """A well-formed file validates into an experiment"""
    config = parse_config(CERTIFY)
    assert config.kind == "certify"
    assert config.map.id == "ex2-piecewise"
    assert config.params == [{"b": 1.0, "theta": 1.0, "L": 3.0}]
    assert config.sampling.grid_step == 0.01


def test_parse_reports_field_and_line():
    """Every failing field is reported with its YAML line"""
    text = CERTIFY.replace("id: ex2-piecewise", "id: nope").replace("grid_step: 0.01", "grid_step: -0.5")
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    found = {d["field"]: d["line"] for d in info.value.diagnostics}
    assert found == {"map.id": 4, "sampling.grid_step": 8}
    assert "line 8" in str(info.value)


def test_parse_rejects_unknown_keys_and_schema_version():
    text = CERTIFY.replace("schema_version: 1", "schema_version: 2") + "colour: red\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    found = {d["field"]: d["line"] for d in info.value.diagnostics}
    assert found == {"schema_version": 1, "colour": 9}


def test_parse_missing_sections():
    """Cross-field problems are reported against the root"""
    with pytest.raises(ConfigError) as info:
        parse_config("schema_version: 1\nkind: iterate\nmap: {id: identity-01}\n")
    assert info.value.diagnostics[0]["field"] == "<root>"
    assert "start" in info.value.diagnostics[0]["message"]


def test_parse_syntax_errors():
    with pytest.raises(ConfigError) as info:
        parse_config("schema_version: 1\nkind: [certify\n")
    assert info.value.diagnostics[0]["line"] is not None
    with pytest.raises(ConfigError) as info:
        parse_config('{"schema_version": 1,', ".json")
    assert info.value.diagnostics[0]["line"] == 1
    with pytest.raises(ConfigError):
        parse_config("- 1\n- 2\n")


def test_parse_json():
    config = parse_config(json.dumps({"schema_version": 1, "kind": "reproduce", "suites": ["identity"]}), ".json")
    assert config.suites == ["identity"]


def test_sampling_inherits_experiment_seed():
    config = parse_config("schema_version: 1\nkind: reproduce\nseed: 5\nsampling: {random_pairs: 100}\n")
    assert config.sampling.seed == 5


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    path = tmp_path / "certify.yaml"
    path.write_text(CERTIFY)
    assert isinstance(load_config(path), ExperimentConfig)


def test_convergence_frame_columns(two_steps):
    """Rows are iterates; the last row has no step and bounds stay empty without delta"""
    frame = convergence_frame(two_steps)
    assert list(frame.columns) == TABLE_COLUMNS
    assert frame["n"].tolist() == [0, 1, 2]
    assert frame["x_n"].tolist() == [1.0, 0.5, 0.25]
    assert frame["step_norm"].tolist()[:2] == [0.5, 0.25]
    assert pd.isna(frame["step_norm"].iloc[2])
    assert frame["residual"].tolist() == [0.5, 0.25, 0.125]
    assert frame["rate_ratio"].iloc[1] == 0.5
    assert frame["apriori"].isna().all()
    assert frame["aposteriori"].isna().all()


def test_convergence_frame_with_delta():
    rule = StoppingRule(tol=1e-12, max_iter=2, mode=StoppingMode.residual)
    trace = picard(gallery_map("halving-01"), 1.0, rule, delta=0.5)
    frame = convergence_frame(trace)
    assert frame["apriori"].tolist() == [1.0, 0.5, 0.25]
    assert pd.isna(frame["aposteriori"].iloc[0])
    assert frame["aposteriori"].iloc[1] == 0.5


def test_emit_formats(two_steps):
    csv = emit_convergence_table(two_steps, "csv")
    assert csv.splitlines()[0] == ",".join(TABLE_COLUMNS)
    back = pd.read_csv(io.StringIO(csv))
    assert back.shape == (3, len(TABLE_COLUMNS))

    records = json.loads(emit_convergence_table(two_steps, "json"))
    assert len(records) == 3
    assert records[1]["rate_ratio"] == 0.5
    assert records[0]["apriori"] is None

    lines = emit_convergence_table(two_steps, "markdown").splitlines()
    assert len(lines) == 5
    assert lines[0] == "| " + " | ".join(TABLE_COLUMNS) + " |"

    with pytest.raises(ConfigError):
        emit_convergence_table(two_steps, "xlsx")


def test_build_vip_puts_affine_operator_on_the_set():
    spec = VipSpec.model_validate({
        "operator": {"id": "affine", "A": 1.0, "c": 0.0},
        "set": {"kind": "interval", "lo": 1.0, "hi": 2.0},
        "k": 1.0,
        "starts": [2.0],
    })
    problem = build_vip(spec)
    assert problem.G.domain is problem.C
    assert spec.step_lambda == 0.5
    assert spec.starts == [[2.0]]


def test_vip_step_follows_certified_b():
    base = {"operator": {"id": "affine", "A": 1.0, "c": 0.0}, "set": {"kind": "interval", "lo": 1.0, "hi": 2.0},
            "starts": [2.0]}
    certified = VipSpec.model_validate({**base, "certify": {"b": 2.0, "theta": 1.5, "L": 0.0}})
    assert certified.step_lambda == pytest.approx(1 / 3)
    assert certified.certify.delta == 0.5
    explicit = VipSpec.model_validate({**base, "lam": 0.8, "certify": {"b": 2.0, "theta": 1.5, "L": 0.0}})
    assert explicit.step_lambda == 0.8


@pytest.mark.asyncio
async def test_write_atomic(tmp_path):
    """Content lands in place and no temporary file is left behind"""
    target = tmp_path / "nested" / "report.json"
    await write_atomic(target, "first\n")
    await write_atomic(target, "second\n")
    assert target.read_text() == "second\n"
    assert [p.name for p in target.parent.iterdir()] == ["report.json"]
