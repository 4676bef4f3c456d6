"""
Dynamic optimizer module.

The transfer-learning optimizer (DETO) and its restart (RBO) and cumulative
(CBO) Bayesian-optimization baselines. Every run walks the time steps of a
dynamic objective, spends exactly the scheduled number of evaluations per
step and records every evaluation.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .acquisition import AcqConfig, AcqOptimizerKind, lhs_sample, optimize_acquisition
from .benchmarks import DynamicObjective
from .errors import InputError, NumericalError, OptimizationError
from .gp import DUPLICATE_TOL, Dataset, FitSettings, GPModel, fit_gp
from .mogp import CoregionalizationSpec, CoregionKind, fit_mogp
from .source_select import HyperparamArchive, SourcePolicy, select_sources
from .warm_start import WarmStartConfig, build_augmented

logger = logging.getLogger(__name__)

__all__ = [
    "AlgorithmConfig",
    "AlgorithmKind",
    "BudgetSchedule",
    "InitKind",
    "RunRecord",
    "StepRecord",
    "VARIANTS",
    "lhs_sample",
    "pool_datasets",
    "run",
]


@dataclass(frozen=True)
class BudgetSchedule:
    """Evaluation budget and initial-sample count of every time step."""

    totals: Tuple[int, ...]
    initials: Tuple[int, ...]

    def __post_init__(self):
        if len(self.totals) != len(self.initials) or not self.totals:
            raise InputError("budget schedule needs one (total, initial) pair per step")
        for t, (total, initial) in enumerate(zip(self.totals, self.initials), start=1):
            if not 1 <= initial <= total:
                raise InputError(f"step {t}: need 1 <= initial ({initial}) <= total ({total})")

    @classmethod
    def from_dimension(cls, n: int, T: int) -> "BudgetSchedule":
        """Step 1: 2(11n - 1) evaluations, 11n - 1 initial. Later steps: 9n, 2n initial."""
        if n < 1 or T < 1:
            raise InputError(f"need n >= 1 and T >= 1, got n={n}, T={T}")
        first = 11 * n - 1
        return cls(totals=(2 * first,) + (9 * n,) * (T - 1), initials=(first,) + (2 * n,) * (T - 1))

    @property
    def T(self) -> int:
        return len(self.totals)

    def total(self, t: int) -> int:
        return self.totals[t - 1]

    def initial(self, t: int) -> int:
        return self.initials[t - 1]

    @property
    def total_evaluations(self) -> int:
        return sum(self.totals)


class AlgorithmKind(str, Enum):
    DETO = "DETO"
    RBO = "RBO"
    CBO = "CBO"


class InitKind(str, Enum):
    """How source knowledge enters the multi-output model."""

    WARM = "warm"
    RANDOM = "random"


@dataclass(frozen=True)
class AlgorithmConfig:
    """
    Algorithm and ablation switches.

    The switch defaults are the full DETO configuration; RBO and CBO ignore
    the transfer switches. With exploit_first, the first guided evaluation of
    a step that has sources maximizes the posterior mean (omega = 0).
    """

    kind: AlgorithmKind = AlgorithmKind.DETO
    name: str = ""
    surrogate: CoregionKind = CoregionKind.HMOGP
    source_policy: SourcePolicy = SourcePolicy.ADAPTIVE
    init: InitKind = InitKind.WARM
    acq_optimizer: AcqOptimizerKind = AcqOptimizerKind.HYBRID
    exploit_first: bool = True
    k: int = 3
    lmc_rank: int = 0
    cbo_window: int = 5
    warm_start: WarmStartConfig = field(default_factory=WarmStartConfig)
    acq: AcqConfig = field(default_factory=AcqConfig)
    fit: FitSettings = field(default_factory=FitSettings)

    def __post_init__(self):
        for attr, enum in (
            ("kind", AlgorithmKind),
            ("surrogate", CoregionKind),
            ("source_policy", SourcePolicy),
            ("init", InitKind),
            ("acq_optimizer", AcqOptimizerKind),
        ):
            object.__setattr__(self, attr, enum(getattr(self, attr)))
        if self.k < 1:
            raise InputError(f"number of sources must be >= 1, got {self.k}")
        if self.cbo_window < 1:
            raise InputError(f"CBO window must be >= 1, got {self.cbo_window}")
        if not self.name:
            object.__setattr__(self, "name", self.kind.value)


VARIANTS: Dict[str, AlgorithmConfig] = {
    "DETO": AlgorithmConfig(),
    "DETO-v1": AlgorithmConfig(name="DETO-v1", surrogate=CoregionKind.LMC),
    "DETO-v2": AlgorithmConfig(name="DETO-v2", source_policy=SourcePolicy.RECENT),
    "DETO-v3": AlgorithmConfig(name="DETO-v3", source_policy=SourcePolicy.SIMILAR),
    "DETO-v4": AlgorithmConfig(name="DETO-v4", source_policy=SourcePolicy.RANDOM),
    "DETO-v5": AlgorithmConfig(name="DETO-v5", init=InitKind.RANDOM),
    "DETO-v6": AlgorithmConfig(name="DETO-v6", acq_optimizer=AcqOptimizerKind.DE_ONLY),
    "DETO-v7": AlgorithmConfig(name="DETO-v7", acq_optimizer=AcqOptimizerKind.ASCENT_ONLY),
    "RBO": AlgorithmConfig(kind=AlgorithmKind.RBO),
    "CBO": AlgorithmConfig(kind=AlgorithmKind.CBO),
}


@dataclass
class StepRecord:
    """Everything evaluated during one time step."""

    t: int
    X: np.ndarray
    y: np.ndarray
    best_so_far: np.ndarray
    incumbent: np.ndarray
    incumbent_value: float
    optimum: np.ndarray
    optimum_value: float
    wall_clock: float = 0.0
    fallbacks: int = 0
    sources: Tuple[int, ...] = ()

    @property
    def evaluations(self) -> int:
        return len(self.y)


@dataclass
class RunRecord:
    """Outcome of one run: per-step records plus run identity."""

    seed: Optional[int]
    algorithm: str
    problem: str
    steps: List[StepRecord] = field(default_factory=list)

    @property
    def T(self) -> int:
        return len(self.steps)

    @property
    def total_evaluations(self) -> int:
        return sum(step.evaluations for step in self.steps)

    def optima(self) -> List[float]:
        return [step.optimum_value for step in self.steps]


def pool_datasets(datasets: Sequence[Dataset], t: int) -> Dataset:
    """
    Concatenate datasets into one step-t dataset, dropping repeated inputs.

    Later datasets take precedence: a repeated input keeps its most recent value.
    """
    rows: List[np.ndarray] = []
    values: List[float] = []
    for data in reversed(datasets):
        for x, y in zip(data.X, data.y):
            if any(np.max(np.abs(x - other)) <= DUPLICATE_TOL for other in rows):
                continue
            rows.append(x)
            values.append(y)
    return Dataset(t=t, X=np.vstack(rows), y=np.asarray(values))


class _Run:
    """State of a single run; one instance per call of run()."""

    def __init__(self, algorithm: AlgorithmConfig, problem: DynamicObjective, schedule: BudgetSchedule, rng):
        self.algorithm = algorithm
        self.problem = problem
        self.schedule = schedule
        self.rng = rng
        self.bounds = np.asarray(problem.bounds, dtype=float)
        self.R = float(np.max(self.bounds[:, 1] - self.bounds[:, 0]))
        self.history: Dict[int, Dataset] = {}
        self.step_models: Dict[int, GPModel] = {}
        self.archive = HyperparamArchive()

    def fit_single(self, data: Dataset) -> GPModel:
        return fit_gp(data, self.algorithm.fit, search_width=self.R, rng=self.rng)

    def source_tasks(self, t: int, current: Dataset) -> Tuple[Tuple[int, ...], List[Dataset]]:
        """Select source steps and the datasets standing for them."""
        cfg = self.algorithm
        if not len(self.archive):
            return (), []
        reference = None
        if cfg.source_policy is SourcePolicy.SIMILAR:
            reference = self.fit_single(current).params
        sources = select_sources(self.archive, cfg.k, self.rng, cfg.source_policy, reference)
        if cfg.init is InitKind.RANDOM:
            return tuple(sources), [self.history[s] for s in sources]
        models = [(s, self.step_models[s]) for s in sources]
        return tuple(sources), build_augmented(models, cfg.warm_start, self.bounds, self.rng)

    def fit_surrogate(self, t: int, current: Dataset, sources: List[Dataset]):
        cfg = self.algorithm
        if cfg.kind is AlgorithmKind.CBO:
            window = [self.history[s] for s in range(max(1, t - cfg.cbo_window + 1), t)]
            return self.fit_single(pool_datasets(window + [current], t))
        if cfg.kind is AlgorithmKind.RBO or not sources:
            return self.fit_single(current)
        spec = CoregionalizationSpec(cfg.surrogate, len(sources) + 1, cfg.lmc_rank)
        return fit_mogp(sources + [current], spec, cfg.fit, search_width=self.R, rng=self.rng)

    def fallback(self, model, current: Dataset, reserve: List[np.ndarray]) -> np.ndarray:
        """Best unevaluated reserve point under the surrogate mean, else the first unused one."""
        candidates = [x for x in reserve if not current.contains(x)]
        if not candidates:
            candidates = list(lhs_sample(self.schedule.total(current.t), self.bounds, self.rng))
        if model is not None:
            try:
                mean, _ = model.predict(np.vstack(candidates))
                choice = int(np.argmax(mean))
            except (NumericalError, InputError):
                choice = 0
        else:
            choice = 0
        x = candidates[choice]
        reserve[:] = [r for r in reserve if r is not x]
        return x

    def step(self, t: int) -> StepRecord:
        cfg = self.algorithm
        started = time.perf_counter()
        total = self.schedule.total(t)

        X0 = lhs_sample(self.schedule.initial(t), self.bounds, self.rng)
        y0 = np.array([self.problem.evaluate(x, t) for x in X0])
        current = Dataset(t=t, X=X0, y=y0)

        sources: Tuple[int, ...] = ()
        tasks: List[Dataset] = []
        if cfg.kind is AlgorithmKind.DETO and t > 1:
            sources, tasks = self.source_tasks(t, current)
            logger.debug("step %d: sources %s", t, list(sources))

        reserve: Optional[List[np.ndarray]] = None
        fallbacks = 0
        while len(current) < total:
            acq = cfg.acq
            if tasks and cfg.exploit_first and len(current) == self.schedule.initial(t):
                acq = replace(acq, omega=0.0)
            model = None
            try:
                model = self.fit_surrogate(t, current, tasks)
                x = optimize_acquisition(model, None, acq, self.bounds, self.rng, cfg.acq_optimizer)
                if current.contains(x):
                    raise InputError("acquisition proposed an already evaluated point")
            except (NumericalError, InputError) as e:
                if reserve is None:
                    reserve = list(lhs_sample(total, self.bounds, self.rng))
                x = self.fallback(model, current, reserve)
                fallbacks += 1
                logger.warning("step %d, evaluation %d: %s; using a Latin hypercube point", t, len(current) + 1, e)
            current = current.append(x, self.problem.evaluate(x, t))

        if self.problem.evaluations_per_step[-1] != total:
            raise OptimizationError(
                f"step {t} spent {self.problem.evaluations_per_step[-1]} evaluations, budget is {total}"
            )
        self.history[t] = current
        if cfg.kind is AlgorithmKind.DETO:
            self.remember(current)

        incumbent, incumbent_value = current.best()
        optimum, optimum_value = self.problem.true_optimum()
        record = StepRecord(
            t=t,
            X=np.array(current.X),
            y=np.array(current.y),
            best_so_far=np.maximum.accumulate(current.y),
            incumbent=np.array(incumbent),
            incumbent_value=float(incumbent_value),
            optimum=optimum,
            optimum_value=optimum_value,
            wall_clock=time.perf_counter() - started,
            fallbacks=fallbacks,
            sources=sources,
        )
        logger.debug(
            "step %d done: best %.4f (optimum %.4f) in %.2fs", t, incumbent_value, optimum_value, record.wall_clock
        )
        return record

    def remember(self, data: Dataset):
        """Cache the step's GP and archive its hyperparameters."""
        try:
            model = self.fit_single(data)
        except NumericalError as e:
            logger.warning("step %d left out of the source archive: %s", data.t, e)
            return
        self.step_models[data.t] = model
        self.archive.add(data.t, model.params)


def run(
    algorithm: Union[AlgorithmConfig, str],
    problem: DynamicObjective,
    schedule: BudgetSchedule,
    rng: np.random.Generator,
    seed: Optional[int] = None,
    problem_id: str = "",
) -> RunRecord:
    """
    Optimize a dynamic objective over all steps of the schedule.

    Args:
        algorithm: Algorithm configuration or the name of a preset in VARIANTS
        problem: Objective handle at time step 1; advanced by this function
        schedule: Per-step evaluation budgets
        rng: Random generator driving sampling, fitting and acquisition
        seed: Seed recorded in the result
        problem_id: Problem identifier recorded in the result

    Returns:
        RunRecord with one StepRecord per time step
    """
    if isinstance(algorithm, str):
        try:
            algorithm = VARIANTS[algorithm]
        except KeyError:
            raise InputError(f"unknown algorithm {algorithm!r}; known: {', '.join(VARIANTS)}") from None

    state = _Run(algorithm, problem, schedule, rng)
    record = RunRecord(seed=seed, algorithm=algorithm.name, problem=problem_id)
    for t in range(1, schedule.T + 1):
        if t > 1:
            problem.advance()
        if problem.t != t:
            raise InputError(f"objective is at step {problem.t}, expected {t}")
        record.steps.append(state.step(t))
    logger.debug("%s on %s: %d evaluations", algorithm.name, problem_id or "problem", record.total_evaluations)
    return record
