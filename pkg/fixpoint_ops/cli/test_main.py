# test_main.py

import json

import pytest

from cli.main import build_parser, main

CERTIFY = """\
schema_version: 1
kind: certify
map:
  id: ex2-piecewise
params:
  - {b: 1.0, theta: 1.0, L: 3.0}
sampling:
  grid_step: 0.01
expect: {expect}
"""


def _write(tmp_path, text, name="experiment.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_certify_expected_verdict_exits_zero(tmp_path):
    """A certify run whose verdict matches 'expect' passes"""
    config = _write(tmp_path, CERTIFY.replace("{expect}", "certified"))
    out = tmp_path / "out"
    assert main(["certify", "--config", config, "--out-dir", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["status"] == "passed"
    assert report["results"][0]["result"]["verdict"] == "certified"
    assert "out_dir" not in report["config"]
    assert "wall_time" not in report


def test_certify_unexpected_verdict_exits_two(tmp_path, capsys):
    """A verdict other than the expected one is a failed check"""
    config = _write(tmp_path, CERTIFY.replace("{expect}", "falsified"))
    assert main(["certify", "--config", config, "--out-dir", str(tmp_path / "out")]) == 2
    assert "status: failed" in capsys.readouterr().out


def test_task_error_exits_one(tmp_path):
    """Params a condition cannot use make the task, and the run, an error"""
    text = CERTIFY.replace("{expect}", "certified").replace("{b: 1.0, theta: 1.0, L: 3.0}", "{k: 1.0}")
    config = _write(tmp_path, text.replace("kind: certify", "kind: certify\ncondition: kannan"))
    out = tmp_path / "out"
    assert main(["certify", "--config", config, "--out-dir", str(out)]) == 1
    report = json.loads((out / "report.json").read_text())
    assert report["status"] == "error"
    assert report["results"][0]["error"]


def test_kind_mismatch_exits_one(tmp_path):
    config = _write(tmp_path, CERTIFY.replace("{expect}", "certified"))
    assert main(["iterate", "--config", config, "--out-dir", str(tmp_path / "out")]) == 1
    assert not (tmp_path / "out").exists()


def test_invalid_or_missing_config_exits_one(tmp_path):
    bad = _write(tmp_path, CERTIFY.replace("{expect}", "certified").replace("grid_step: 0.01", "grid_step: 0"))
    assert main(["certify", "--config", bad]) == 1
    assert main(["certify", "--config", str(tmp_path / "missing.yaml")]) == 1


def test_reproduce_single_suite(tmp_path):
    """reproduce runs without a config file"""
    out = tmp_path / "out"
    assert main(["reproduce", "--suite", "identity", "--out-dir", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert [r["name"] for r in report["results"]] == ["identity"]
    assert all(c["passed"] for c in report["checks"])
    assert (out / "checks.csv").exists()


def test_parser_requires_config_except_for_reproduce():
    parser = build_parser()
    with pytest.raises(SystemExit):
        parser.parse_args(["certify"])
    with pytest.raises(SystemExit):
        parser.parse_args(["reproduce", "--suite", "no-such-suite"])
    args = parser.parse_args(["reproduce", "--suite", "identity", "--suite", "uniqueness", "--seed", "3"])
    assert args.suite == ["identity", "uniqueness"]
    assert args.seed == 3
    assert args.config is None
