"""
Summaries, statistics and plot data computed from run-record files.

Every table is derived from the persisted records alone, so a results
directory can be re-reported at any time.
"""

import csv
import io
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.errors import InputError
from core.metrics import a12, a12_category, error_metrics, rho_c, rho_t, wilcoxon_signed_rank
from core.optimizer import RunRecord

from .records import RECORD_SUFFIX, read_record

logger = logging.getLogger(__name__)

RUNS_DIR = "runs"
SUMMARY_FILE = "summary.csv"
STATISTICS_FILE = "statistics.csv"
FAILURES_FILE = "failures.json"
PLOT_KINDS = ("trajectory", "bars", "rho")

SUMMARY_COLUMNS = ["problem", "algorithm", "repetition", "seed", "status", "eps_f", "eps_t"]
STATISTICS_COLUMNS = [
    "problem",
    "algorithm",
    "baseline",
    "pairs",
    "eps_f_p",
    "eps_f_a12",
    "eps_f_effect",
    "eps_t_p",
    "eps_t_a12",
    "eps_t_effect",
    "rho_c",
    "rho_t",
]

RunKey = Tuple[str, str, int]


@dataclass
class Results:
    """Run records of a results directory keyed by (problem, algorithm, repetition)."""

    runs: Dict[RunKey, RunRecord] = field(default_factory=dict)
    failures: List[dict] = field(default_factory=list)
    baseline: Optional[str] = None

    @property
    def problems(self) -> List[str]:
        return sorted({key[0] for key in self.runs})

    def algorithms(self, problem: str) -> List[str]:
        return sorted({key[1] for key in self.runs if key[0] == problem})

    def repetitions(self, problem: str, algorithm: str) -> Dict[int, RunRecord]:
        return {key[2]: record for key, record in sorted(self.runs.items()) if key[:2] == (problem, algorithm)}


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def format_table(columns: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Comma-separated table with a header row."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buffer.getvalue()


def write_table(path: Path, columns: Sequence[str], rows: Sequence[Sequence]) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(format_table(columns, rows))
    logger.info("wrote %s", path)
    return path


def load_results(results_dir: Union[str, Path]) -> Results:
    """
    Read every run record of a results directory.

    Raises:
        InputError: If the directory holds no run records
    """
    results_dir = Path(results_dir)
    results = Results()
    for path in sorted((results_dir / RUNS_DIR).glob(f"*{RECORD_SUFFIX}")):
        record, header = read_record(path)
        results.runs[(record.problem, record.algorithm, int(header["repetition"]))] = record

    failures_path = results_dir / FAILURES_FILE
    if failures_path.exists():
        results.failures = json.loads(failures_path.read_text(encoding="utf-8"))
    config_path = results_dir / "config.json"
    if config_path.exists():
        results.baseline = json.loads(config_path.read_text(encoding="utf-8")).get("baseline")
    elif any(key[1] == "RBO" for key in results.runs):
        results.baseline = "RBO"

    if not results.runs:
        raise InputError(f"no run records found in {results_dir / RUNS_DIR}")
    return results


def summary_rows(results: Results) -> List[list]:
    """One row per run: identity, status and the two error metrics; failed runs have no metrics."""
    rows = []
    for (problem, algorithm, repetition), record in results.runs.items():
        report = error_metrics(record)
        rows.append([problem, algorithm, repetition, record.seed, "ok", report.eps_f, report.eps_t])
    for failure in results.failures:
        rows.append(
            [failure["problem"], failure["algorithm"], failure["repetition"], failure["seed"], "failed", None, None]
        )
    rows.sort(key=lambda row: (row[0], row[1], row[2]))
    return rows


def _errors(results: Results, problem: str, algorithm: str) -> Dict[int, Tuple[float, float]]:
    values = {}
    for repetition, record in results.repetitions(problem, algorithm).items():
        report = error_metrics(record)
        values[repetition] = (report.eps_f, report.eps_t)
    return values


def rho_table(results: Results, problem: str) -> Dict[str, Tuple[float, Optional[float]]]:
    """Mean rho_c (over repetitions run by every algorithm) and mean rho_t against the baseline."""
    algorithms = results.algorithms(problem)
    per_algorithm = {name: results.repetitions(problem, name) for name in algorithms}
    common = sorted(set.intersection(*(set(runs) for runs in per_algorithm.values())))

    rho_c_terms: Dict[str, List[float]] = defaultdict(list)
    for repetition in common:
        values = rho_c({name: per_algorithm[name][repetition] for name in algorithms})
        for name, value in values.items():
            rho_c_terms[name].append(value)

    table = {}
    baseline_runs = per_algorithm.get(results.baseline) if results.baseline else None
    for name in algorithms:
        rc = float(np.mean(rho_c_terms[name])) if rho_c_terms[name] else None
        rt = None
        if baseline_runs:
            shared = sorted(set(per_algorithm[name]) & set(baseline_runs))
            if shared:
                rt = float(np.mean([rho_t(per_algorithm[name][r], baseline_runs[r]) for r in shared]))
        table[name] = (rc, rt)
    return table


def statistics_rows(results: Results) -> List[list]:
    """
    Paired comparison of every algorithm against the baseline per problem.

    The A12 columns give the probability that the algorithm's error is lower
    than the baseline's; the p-values come from the two-sided signed-rank test
    over repetitions run by both.
    """
    rows = []
    for problem in results.problems:
        rhos = rho_table(results, problem)
        baseline = results.baseline if results.baseline in rhos else None
        base_errors = _errors(results, problem, baseline) if baseline else {}
        for algorithm in results.algorithms(problem):
            rc, rt = rhos[algorithm]
            row = [problem, algorithm, baseline or ""]
            if baseline and algorithm != baseline:
                errors = _errors(results, problem, algorithm)
                shared = sorted(set(errors) & set(base_errors))
                row.append(len(shared))
                for column in (0, 1):
                    own = [errors[r][column] for r in shared]
                    base = [base_errors[r][column] for r in shared]
                    if shared:
                        effect = a12(base, own)
                        row += [wilcoxon_signed_rank(own, base), effect, a12_category(effect)]
                    else:
                        row += [None, None, None]
            else:
                row += [None] * 7
            rows.append(row + [rc, rt])
    return rows


def write_summary(results_dir: Union[str, Path], results: Results) -> Path:
    return write_table(Path(results_dir) / SUMMARY_FILE, SUMMARY_COLUMNS, summary_rows(results))


def write_statistics(results_dir: Union[str, Path], results: Results) -> Path:
    return write_table(Path(results_dir) / STATISTICS_FILE, STATISTICS_COLUMNS, statistics_rows(results))


def _band(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and 95% half-width of the mean over repetitions (rows)."""
    mean = values.mean(axis=0)
    if len(values) < 2:
        return mean, np.zeros_like(mean)
    return mean, 1.96 * values.std(axis=0, ddof=1) / np.sqrt(len(values))


def trajectory_rows(results: Results) -> List[list]:
    rows = []
    for problem in results.problems:
        for algorithm in results.algorithms(problem):
            runs = list(results.repetitions(problem, algorithm).values())
            losses = [np.concatenate(error_metrics(record).loss_traj) for record in runs]
            if len({len(loss) for loss in losses}) != 1:
                raise InputError(f"runs of {algorithm} on {problem} have different lengths")
            steps = np.concatenate([np.full(step.evaluations, step.t) for step in runs[0].steps])
            mean, half = _band(np.vstack(losses))
            for index in range(len(mean)):
                rows.append(
                    [problem, algorithm, index + 1, int(steps[index]), mean[index], mean[index] - half[index],
                     mean[index] + half[index]]
                )
    return rows


def bars_rows(results: Results) -> List[list]:
    rows = []
    for problem in results.problems:
        for algorithm in results.algorithms(problem):
            values = np.array(list(_errors(results, problem, algorithm).values()))
            ddof = 1 if len(values) > 1 else 0
            std = values.std(axis=0, ddof=ddof)
            mean = values.mean(axis=0)
            rows.append([problem, algorithm, len(values), mean[0], std[0], mean[1], std[1]])
    return rows


def rho_rows(results: Results) -> List[list]:
    rows = []
    for problem in results.problems:
        for algorithm, (rc, rt) in sorted(rho_table(results, problem).items()):
            rows.append([problem, algorithm, rc, rt])
    return rows


_PLOT_TABLES = {
    "trajectory": (
        ["problem", "algorithm", "fe_index", "step", "mean_loss", "band_low", "band_high"],
        trajectory_rows,
    ),
    "bars": (["problem", "algorithm", "runs", "eps_f_mean", "eps_f_std", "eps_t_mean", "eps_t_std"], bars_rows),
    "rho": (["problem", "algorithm", "rho_c", "rho_t"], rho_rows),
}


def emit_plot_data(results_dir: Union[str, Path], kind: str) -> Path:
    """
    Write the plot table of the given kind next to the run records.

    Raises:
        InputError: If the kind is unknown or the directory holds no records
    """
    if kind not in _PLOT_TABLES:
        raise InputError(f"unknown plot kind {kind!r}; expected one of {', '.join(PLOT_KINDS)}")
    results = load_results(results_dir)
    columns, build = _PLOT_TABLES[kind]
    return write_table(Path(results_dir) / f"plot_{kind}.csv", columns, build(results))
