"""
Seeded experiment sweeps.

Every (problem instance, algorithm, repetition) triple is an independent run
with seeds derived from a hash of its identity, so results do not depend on
the number of workers, the execution order or which other algorithms are
configured. Runs of the same instance and repetition share the landscape.
"""

import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import psutil

from core.metrics import error_metrics
from core.optimizer import AlgorithmConfig, BudgetSchedule, run

from .records import record_filename, write_record
from .reporting import FAILURES_FILE, RUNS_DIR, load_results, write_statistics, write_summary
from .settings import ExperimentConfig, ProblemInstance, save_config

logger = logging.getLogger(__name__)


def derive_seed(master_seed: int, *ids) -> int:
    """Stable 63-bit seed from the master seed and identifying values."""
    digest = hashlib.sha256(json.dumps([master_seed, *ids]).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def default_workers() -> int:
    """Physical core count, falling back to the logical count."""
    return psutil.cpu_count(logical=False) or psutil.cpu_count() or 1


@dataclass(frozen=True)
class RunTask:
    """One run of the sweep."""

    instance: ProblemInstance
    algorithm: AlgorithmConfig
    repetition: int
    T: int
    master_seed: int
    path: Path

    @property
    def problem_seed(self) -> int:
        return derive_seed(self.master_seed, self.instance.id, self.repetition)

    @property
    def seed(self) -> int:
        return derive_seed(self.master_seed, self.instance.id, self.algorithm.name, self.repetition)


@dataclass
class RunOutcome:
    task: RunTask
    ok: bool
    error: str = ""
    eps_t: float = float("nan")
    elapsed: float = 0.0


def execute(task: RunTask) -> RunOutcome:
    """Run one task and persist its record; failures are returned, not raised."""
    started = time.perf_counter()
    try:
        problem = task.instance.make(np.random.default_rng(task.problem_seed))
        schedule = BudgetSchedule.from_dimension(task.instance.n, task.T)
        record = run(task.algorithm, problem, schedule, np.random.default_rng(task.seed), task.seed, task.instance.id)
        header = {
            "repetition": task.repetition,
            "problem_seed": task.problem_seed,
            "problem_params": task.instance.parameters(),
        }
        write_record(record, task.path, header)
        eps_t = error_metrics(record).eps_t
    except Exception as e:
        logger.exception("run %s failed", task.path.name)
        return RunOutcome(task=task, ok=False, error=f"{type(e).__name__}: {e}", elapsed=time.perf_counter() - started)
    return RunOutcome(task=task, ok=True, eps_t=eps_t, elapsed=time.perf_counter() - started)


@dataclass
class ExperimentResult:
    directory: Path
    outcomes: List[RunOutcome] = field(default_factory=list)

    @property
    def failures(self) -> List[RunOutcome]:
        return [outcome for outcome in self.outcomes if not outcome.ok]


def plan(config: ExperimentConfig, directory: Path) -> List[RunTask]:
    """All runs of the sweep in a fixed order."""
    tasks = []
    for instance in config.instances():
        for name, algorithm in config.algorithm_configs():
            for repetition in range(1, config.repetitions + 1):
                tasks.append(
                    RunTask(
                        instance=instance,
                        algorithm=algorithm,
                        repetition=repetition,
                        T=config.T,
                        master_seed=config.master_seed,
                        path=directory / RUNS_DIR / record_filename(instance.id, name, repetition),
                    )
                )
    return tasks


def run_experiment(
    config: ExperimentConfig,
    output_dir: Union[str, Path, None] = None,
    workers: Optional[int] = None,
) -> ExperimentResult:
    """
    Execute every run of the sweep and write the summary and statistics tables.

    Args:
        config: Validated experiment configuration
        output_dir: Results directory; config.output_dir if None
        workers: Worker processes; config.workers, else the physical core count

    Returns:
        ExperimentResult with one outcome per run
    """
    directory = Path(output_dir if output_dir is not None else config.output_dir)
    (directory / RUNS_DIR).mkdir(parents=True, exist_ok=True)
    save_config(config, directory / "config.json")

    tasks = plan(config, directory)
    workers = workers or config.workers or default_workers()
    logger.info("running %d runs on %d worker(s) into %s", len(tasks), workers, directory)

    result = ExperimentResult(directory=directory)
    if workers == 1:
        for outcome in map(execute, tasks):
            _log_outcome(outcome)
            result.outcomes.append(outcome)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for outcome in pool.map(execute, tasks):
                _log_outcome(outcome)
                result.outcomes.append(outcome)

    failures = [
        {
            "problem": o.task.instance.id,
            "algorithm": o.task.algorithm.name,
            "repetition": o.task.repetition,
            "seed": o.task.seed,
            "error": o.error,
        }
        for o in result.failures
    ]
    with open(directory / FAILURES_FILE, "w", encoding="utf-8") as f:
        json.dump(failures, f, indent=4)

    if len(failures) < len(tasks):
        results = load_results(directory)
        write_summary(directory, results)
        write_statistics(directory, results)
    else:
        logger.error("every run failed; no summary written")
    return result


def _log_outcome(outcome: RunOutcome):
    name = outcome.task.path.stem
    if outcome.ok:
        logger.info("finished %s: eps_t=%.4g in %.1fs", name, outcome.eps_t, outcome.elapsed)
    else:
        logger.error("failed %s: %s", name, outcome.error)
