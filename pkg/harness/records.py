"""
Run-record files.

One comma-separated file per run. The first line is a `#` followed by a JSON
header (run identity, problem parameters, per-step incumbents and true
optima); the table has the columns step, fe_index, x_1..x_n, y, best_y with
full-precision floats.
"""

import csv
import io
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from core.errors import InputError
from core.optimizer import RunRecord, StepRecord

logger = logging.getLogger(__name__)

RECORD_SUFFIX = ".csv"


def record_filename(problem: str, algorithm: str, repetition: int) -> str:
    return f"{problem}__{algorithm}__r{repetition:03d}{RECORD_SUFFIX}"


def _fmt(value: float) -> str:
    return repr(float(value))


def _header(record: RunRecord, extra: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    header: Dict[str, Any] = {
        "seed": record.seed,
        "algorithm": record.algorithm,
        "problem": record.problem,
        "dim": int(record.steps[0].X.shape[1]) if record.steps else 0,
        "steps": [
            {
                "t": step.t,
                "incumbent": [float(v) for v in step.incumbent],
                "incumbent_value": float(step.incumbent_value),
                "optimum": [float(v) for v in step.optimum],
                "optimum_value": float(step.optimum_value),
                "wall_clock": float(step.wall_clock),
                "fallbacks": step.fallbacks,
                "sources": list(step.sources),
            }
            for step in record.steps
        ],
    }
    if extra:
        header.update(extra)
    return header


def dumps_record(record: RunRecord, extra: Optional[Dict[str, Any]] = None) -> str:
    """Serialize a run record; extra keys are merged into the header."""
    header = _header(record, extra)
    n = header["dim"]
    buffer = io.StringIO()
    buffer.write("# " + json.dumps(header, sort_keys=True) + "\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["step", "fe_index"] + [f"x_{i + 1}" for i in range(n)] + ["y", "best_y"])
    for step in record.steps:
        for index, (x, y, best) in enumerate(zip(step.X, step.y, step.best_so_far), start=1):
            writer.writerow([step.t, index] + [_fmt(v) for v in x] + [_fmt(y), _fmt(best)])
    return buffer.getvalue()


def write_record(record: RunRecord, path: Union[str, Path], extra: Optional[Dict[str, Any]] = None) -> Path:
    """Write a run record file and return its path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(dumps_record(record, extra))
    logger.debug("wrote run record %s", path)
    return path


def loads_record(text: str) -> Tuple[RunRecord, Dict[str, Any]]:
    """
    Parse a run record.

    Returns:
        The record and the full header (including any extra keys)
    """
    first, _, body = text.partition("\n")
    if not first.startswith("#"):
        raise InputError("run record lacks its header line")
    try:
        header = json.loads(first[1:])
    except json.JSONDecodeError as e:
        raise InputError(f"malformed run record header: {e}") from e

    n = header["dim"]
    rows = list(csv.reader(io.StringIO(body)))
    if not rows or rows[0][:2] != ["step", "fe_index"]:
        raise InputError("run record lacks its column header")
    table = np.array([[float(v) for v in row] for row in rows[1:] if row], dtype=float).reshape(-1, n + 4)

    steps = []
    for meta in header["steps"]:
        part = table[table[:, 0] == meta["t"]]
        part = part[np.argsort(part[:, 1], kind="stable")]
        steps.append(
            StepRecord(
                t=int(meta["t"]),
                X=part[:, 2 : 2 + n],
                y=part[:, 2 + n],
                best_so_far=part[:, 3 + n],
                incumbent=np.array(meta["incumbent"], dtype=float),
                incumbent_value=float(meta["incumbent_value"]),
                optimum=np.array(meta["optimum"], dtype=float),
                optimum_value=float(meta["optimum_value"]),
                wall_clock=float(meta["wall_clock"]),
                fallbacks=int(meta["fallbacks"]),
                sources=tuple(meta["sources"]),
            )
        )
    record = RunRecord(seed=header["seed"], algorithm=header["algorithm"], problem=header["problem"], steps=steps)
    return record, header


def read_record(path: Union[str, Path]) -> Tuple[RunRecord, Dict[str, Any]]:
    """Read a run record file."""
    with open(path, "r", encoding="utf-8") as f:
        return loads_record(f.read())
