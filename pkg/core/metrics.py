"""
Performance metrics and statistical comparison.

Losses are measured against the landscape's true optimum: the offline error
averages the loss of the best-so-far value over every evaluation, the
end-of-step error averages the loss of each step's incumbent. Budget ratios
count how many evaluations an algorithm needs to reach a reference value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
from scipy.stats import norm, rankdata

from .errors import InputError
from .optimizer import RunRecord, StepRecord

# Budget multiple charged when a reference value is never reached
RHO_CAP = 8

# Largest number of nonzero differences handled by exact enumeration
EXACT_WILCOXON_LIMIT = 20

A12_THRESHOLDS = ((0.71, "large"), (0.64, "medium"), (0.56, "small"))


@dataclass
class MetricReport:
    """Error metrics of one run."""

    eps_f: float
    eps_t: float
    loss_traj: List[np.ndarray] = field(default_factory=list)
    rho_c: Optional[float] = None
    rho_t: Optional[float] = None


@dataclass(frozen=True)
class StatResult:
    """Two-sample comparison: Wilcoxon p-value and A12 effect size."""

    p_value: float
    a12: float
    category: str

    @property
    def significant(self) -> bool:
        return self.p_value < 0.05


def error_metrics(record: RunRecord, optima: Optional[Sequence[float]] = None) -> MetricReport:
    """
    Offline error and end-of-step error of a run.

    Args:
        record: Run to score
        optima: True optimum value per step; taken from the record if None

    Raises:
        InputError: If the optima do not cover the record's steps
    """
    optima = record.optima() if optima is None else [float(f) for f in optima]
    if len(optima) != record.T:
        raise InputError(f"record has {record.T} steps but {len(optima)} optima were given")
    if not record.T:
        raise InputError("record has no steps")
    trajectory = [f_star - step.best_so_far for step, f_star in zip(record.steps, optima)]
    eps_f = float(np.mean(np.concatenate(trajectory)))
    eps_t = float(np.mean([f_star - step.incumbent_value for step, f_star in zip(record.steps, optima)]))
    return MetricReport(eps_f=eps_f, eps_t=eps_t, loss_traj=trajectory)


def first_reach(step: StepRecord, target: float) -> Optional[int]:
    """1-based evaluation index at which the best-so-far value first reaches target."""
    hits = np.flatnonzero(step.best_so_far >= target)
    return int(hits[0]) + 1 if len(hits) else None


def evaluations_to(step: StepRecord, target: float) -> int:
    """first_reach with the RHO_CAP multiple of the step budget when target is never reached."""
    reached = first_reach(step, target)
    return reached if reached is not None else RHO_CAP * step.evaluations


def _check_same_steps(records: Sequence[RunRecord]):
    lengths = {record.T for record in records}
    if len(lengths) != 1:
        raise InputError(f"records cover different numbers of steps: {sorted(lengths)}")


def rho_c(records: Mapping[str, RunRecord]) -> Dict[str, float]:
    """
    Budget ratio against the best algorithm of every step.

    Per step, the algorithm with the highest final value (fewest evaluations
    on ties) sets the target and the reference count. Every algorithm's term
    is its evaluations to reach that target divided by the reference count.

    Args:
        records: One run per algorithm, all on the same problem instance

    Returns:
        Mean ratio over steps per algorithm
    """
    if not records:
        raise InputError("need at least one record")
    names = list(records)
    _check_same_steps([records[name] for name in names])
    terms: Dict[str, List[float]] = {name: [] for name in names}
    for index in range(records[names[0]].T):
        steps = {name: records[name].steps[index] for name in names}
        best_name = max(
            names,
            key=lambda name: (steps[name].best_so_far[-1], -first_reach(steps[name], steps[name].best_so_far[-1])),
        )
        target = steps[best_name].best_so_far[-1]
        reference = first_reach(steps[best_name], target)
        for name in names:
            terms[name].append(evaluations_to(steps[name], target) / reference)
    return {name: float(np.mean(values)) for name, values in terms.items()}


def rho_t(record: RunRecord, rbo_record: RunRecord) -> float:
    """
    Budget ratio against the restart baseline; below 1 means transfer helped.

    Per step the target is the baseline's final best value; the term is the
    candidate's evaluations to reach it over the baseline's own.
    """
    _check_same_steps([record, rbo_record])
    ratios = []
    for step, base in zip(record.steps, rbo_record.steps):
        target = base.best_so_far[-1]
        ratios.append(evaluations_to(step, target) / first_reach(base, target))
    return float(np.mean(ratios))


def _exact_signed_rank_cdf(doubled_ranks: np.ndarray) -> np.ndarray:
    """
    Null distribution of the doubled positive rank sum.

    Entry s counts the sign assignments whose positive doubled ranks sum to s,
    normalized by 2^n.
    """
    counts = np.zeros(int(doubled_ranks.sum()) + 1)
    counts[0] = 1.0
    for r in doubled_ranks.astype(int):
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: len(counts) - r]
        counts = counts + shifted
    return counts / counts.sum()


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float]) -> float:
    """
    Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped. Up to EXACT_WILCOXON_LIMIT remaining pairs
    use the exact null distribution (ties handled through doubled mid-ranks);
    larger samples use the normal approximation with tie correction.

    Returns:
        p-value in (0, 1]
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise InputError(f"paired samples must be 1-D of equal length, got {a.shape} and {b.shape}")
    if not len(a):
        raise InputError("paired samples are empty")
    d = a - b
    d = d[d != 0.0]
    n = len(d)
    if n == 0:
        return 1.0

    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())

    if n <= EXACT_WILCOXON_LIMIT:
        doubled = np.rint(2.0 * ranks)
        pmf = _exact_signed_rank_cdf(doubled)
        observed = int(round(2.0 * w_plus))
        lower = pmf[: observed + 1].sum()
        upper = pmf[observed:].sum()
        return float(min(1.0, 2.0 * min(lower, upper)))

    mean = n * (n + 1) / 4.0
    _, tie_sizes = np.unique(ranks, return_counts=True)
    variance = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_sizes ** 3 - tie_sizes) / 48.0
    if variance <= 0.0:
        return 1.0
    z = (w_plus - mean) / np.sqrt(variance)
    return float(min(1.0, 2.0 * norm.sf(abs(z))))


def a12_category(value: float) -> str:
    """Effect-size category of max(A12, 1 - A12)."""
    magnitude = max(value, 1.0 - value)
    for threshold, label in A12_THRESHOLDS:
        if magnitude >= threshold:
            return label
    return "equal"


def a12(a: Sequence[float], b: Sequence[float]) -> float:
    """
    Vargha-Delaney A12: probability that a draw from a exceeds a draw from b,
    counting ties as one half.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if not len(a) or not len(b):
        raise InputError("A12 needs two non-empty samples")
    greater = np.sum(a[:, None] > b[None, :])
    equal = np.sum(a[:, None] == b[None, :])
    return float((greater + 0.5 * equal) / (len(a) * len(b)))


def compare(a: Sequence[float], b: Sequence[float]) -> StatResult:
    """Wilcoxon p-value and A12 of paired samples a against b."""
    value = a12(a, b)
    return StatResult(p_value=wilcoxon_signed_rank(a, b), a12=value, category=a12_category(value))
