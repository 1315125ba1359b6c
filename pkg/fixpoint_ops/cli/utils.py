# cli/utils.py

import json
import logging
import os
from pathlib import Path
from typing import Optional, Sequence, Union

import aiofiles
import numpy as np
import pandas as pd
import yaml
from pydantic import ValidationError

from models.exceptions import ConfigError
from models.iterate import IterationTrace
from models.space import AffineMap, MapDescriptor, gallery_map
from models.vip import VipProblem, make_set
from .models import ExperimentConfig, MapSpec, SetSpec, VipSpec

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ["n", "x_n", "step_norm", "residual", "apriori", "aposteriori", "rate_ratio"]


def _line_of(node: Optional[yaml.Node], loc: Sequence[Union[str, int]]) -> Optional[int]:
    """1-based line of the deepest YAML node reachable along a validation location."""
    line = None
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            match = next((v for k, v in node.value if k.value == key), None)
            if match is None:
                break
            line = match.start_mark.line + 1
            node = match
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            line = node.start_mark.line + 1
        else:
            break
    return line


def parse_config(text: str, suffix: str = ".yaml") -> ExperimentConfig:
    """
    Decode an experiment from YAML or JSON text.

    Raises:
        ConfigError: with one diagnostic per failing field, carrying the
        line number when the source is YAML
    """
    node = None
    try:
        if suffix == ".json":
            data = json.loads(text)
        else:
            data = yaml.safe_load(text)
            node = yaml.compose(text)
    except json.JSONDecodeError as e:
        raise ConfigError("Experiment file is not valid JSON", [{"field": "<file>", "line": e.lineno, "message": e.msg}])
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError("Experiment file is not valid YAML", [{
            "field": "<file>",
            "line": mark.line + 1 if mark is not None else None,
            "message": str(getattr(e, "problem", e)),
        }])
    if not isinstance(data, dict):
        raise ConfigError("Experiment file must hold a mapping", [{"field": "<file>", "message": type(data).__name__}])

    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        diagnostics = [
            {
                "field": ".".join(str(part) for part in err["loc"]) or "<root>",
                "line": _line_of(node, err["loc"]),
                "message": err["msg"],
            }
            for err in e.errors()
        ]
        raise ConfigError(f"Invalid experiment ({len(diagnostics)} problem(s))", diagnostics)


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Experiment file {path} not found", [{"field": "--config", "message": str(path)}])
    config = parse_config(path.read_text(), path.suffix.lower())
    logger.info(f"Loaded {config.kind} experiment from {path}")
    return config


def build_map(spec: MapSpec) -> MapDescriptor:
    return gallery_map(spec.id, spec.A, spec.c, spec.lo, spec.hi)


def build_set(spec: SetSpec):
    fields = spec.model_dump(exclude={"kind"}, exclude_none=True)
    return make_set(spec.kind, **fields)


def build_vip(spec: VipSpec) -> VipProblem:
    """The operator lives on C unless it is a gallery map with its own domain."""
    C = build_set(spec.set)
    if spec.operator.id == "affine":
        G = AffineMap(spec.operator.A, spec.operator.c, C, name="G")
    else:
        G = build_map(spec.operator)
    return VipProblem(G=G, C=C, gamma=spec.gamma)


def convergence_frame(trace: IterationTrace) -> pd.DataFrame:
    """One row per iterate; bound columns are empty when delta is unknown."""
    X = trace.history()
    rows = X.shape[0]
    steps = np.full(rows, np.nan)
    steps[:len(trace.step_norms)] = trace.step_norms[:rows]
    res = np.full(rows, np.nan)
    res[:len(trace.residuals)] = trace.residuals[:rows]
    ratio = np.full(rows, np.nan)
    with np.errstate(divide='ignore', invalid='ignore'):
        ratio[1:] = np.where(steps[:-1] > 0, steps[1:] / steps[:-1], np.nan)

    frame = pd.DataFrame({"n": np.arange(rows)})
    if X.shape[1] == 1:
        frame["x_n"] = X[:, 0]
    else:
        frame["x_n"] = [json.dumps(row.tolist()) for row in X]
    frame["step_norm"] = steps
    frame["residual"] = res
    frame["apriori"] = pd.array((trace.apriori + [None] * rows)[:rows], dtype="Float64")
    frame["aposteriori"] = pd.array((trace.aposteriori + [None] * rows)[:rows], dtype="Float64")
    frame["rate_ratio"] = ratio
    return frame[TABLE_COLUMNS]


def _markdown(frame: pd.DataFrame) -> str:
    cells = frame.astype(object).where(frame.notna(), "")
    lines = ["| " + " | ".join(frame.columns) + " |", "|" + "---|" * len(frame.columns)]
    lines += ["| " + " | ".join(str(v) for v in row) + " |" for row in cells.itertuples(index=False)]
    return "\n".join(lines) + "\n"


def emit_convergence_table(trace: IterationTrace, format: str = "csv") -> str:
    """Render the per-step convergence table as CSV, JSON records or a markdown table."""
    frame = convergence_frame(trace)
    if format == "csv":
        return frame.to_csv(index=False)
    if format == "json":
        return frame.to_json(orient="records", double_precision=15) + "\n"
    if format == "markdown":
        return _markdown(frame)
    raise ConfigError(f"Unknown table format '{format}'", [{"field": "--format", "message": format}])


def table_suffix(format: str) -> str:
    return {"csv": ".csv", "json": ".json", "markdown": ".md"}[format]


async def write_atomic(path: Union[str, Path], content: str) -> Path:
    """Write to a temporary sibling, then replace the target in one step."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    async with aiofiles.open(tmp, 'w') as f:
        await f.write(content)
    os.replace(tmp, path)
    logger.debug(f"Wrote {path}")
    return path


__all__ = [
    'TABLE_COLUMNS', 'parse_config', 'load_config', 'build_map', 'build_set', 'build_vip',
    'convergence_frame', 'emit_convergence_table', 'table_suffix', 'write_atomic',
]
