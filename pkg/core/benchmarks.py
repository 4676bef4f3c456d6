"""
Dynamic benchmark module.

Moving peaks (MPB, cone peaks) and moving Gaussian peaks (MPBG). The landscape
is the maximum over m peaks; at every environment change each peak's height
and width take a Gaussian step (clamped to their ranges) and its center moves
by exactly the shift severity in a random direction, reflected at the box.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from .errors import InputError

logger = logging.getLogger(__name__)

HEIGHT_RANGE = (30.0, 70.0)
WIDTH_RANGE = (1.0, 12.0)
DEFAULT_BOUNDS = (0.0, 100.0)


class PeakShape(str, Enum):
    """Peak function of the landscape."""

    CONE = "cone"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class Severity:
    """Change severities: height, shift and width."""

    height: float = 1.0
    shift: float = 1.0
    width: float = 0.5


@dataclass(frozen=True, eq=False)
class Peak:
    """One landscape component."""

    center: np.ndarray
    height: float
    width: float


@dataclass(frozen=True, eq=False)
class MPBState:
    """
    A moving-peaks landscape at one time step.

    States are values: advancing returns a new state.
    """

    peaks: Tuple[Peak, ...]
    bounds: np.ndarray
    shape: PeakShape = PeakShape.CONE
    severity: Severity = field(default_factory=Severity)
    t: int = 1
    height_range: Tuple[float, float] = HEIGHT_RANGE
    width_range: Tuple[float, float] = WIDTH_RANGE

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]

    @property
    def centers(self) -> np.ndarray:
        return np.vstack([p.center for p in self.peaks])

    @property
    def heights(self) -> np.ndarray:
        return np.array([p.height for p in self.peaks])

    @property
    def widths(self) -> np.ndarray:
        return np.array([p.width for p in self.peaks])


def make_bounds(n: int, low: float = DEFAULT_BOUNDS[0], high: float = DEFAULT_BOUNDS[1]) -> np.ndarray:
    """Box [low, high]^n as an (n, 2) array."""
    return np.tile([float(low), float(high)], (n, 1))


def mpb_init(
    n: int,
    m: int,
    shape: PeakShape,
    bounds: Optional[np.ndarray],
    rng: np.random.Generator,
    severity: Optional[Severity] = None,
) -> MPBState:
    """
    Random initial landscape.

    Centers are uniform in the box, heights uniform in [30, 70] and widths
    uniform in [1, 12].
    """
    if n < 1 or m < 1:
        raise InputError(f"need n >= 1 and m >= 1, got n={n}, m={m}")
    bounds = make_bounds(n) if bounds is None else np.asarray(bounds, dtype=float)
    if bounds.shape != (n, 2):
        raise InputError(f"bounds must have shape ({n}, 2), got {bounds.shape}")
    peaks = tuple(
        Peak(
            center=rng.uniform(bounds[:, 0], bounds[:, 1]),
            height=float(rng.uniform(*HEIGHT_RANGE)),
            width=float(rng.uniform(*WIDTH_RANGE)),
        )
        for _ in range(m)
    )
    return MPBState(peaks=peaks, bounds=bounds, shape=PeakShape(shape), severity=severity or Severity())


def peak_values(state: MPBState, X: np.ndarray) -> np.ndarray:
    """Value of every peak at every row of X, shape (rows, m)."""
    X = np.array(X, dtype=float, ndmin=2)
    if X.shape[1] != state.dim:
        raise InputError(f"dimension mismatch: landscape has {state.dim}, got {X.shape[1]}")
    dist = np.linalg.norm(X[:, None, :] - state.centers[None, :, :], axis=2)
    if state.shape is PeakShape.CONE:
        return state.heights - state.widths * dist
    return state.heights * np.exp(-(dist ** 2) / (2.0 * state.widths ** 2))


def mpb_eval(state: MPBState, x) -> float:
    """Landscape value max_i g_i(x)."""
    return float(np.max(peak_values(state, np.asarray(x, dtype=float).ravel())))


def reflect(x: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    """Mirror coordinates back into the box until they lie inside it."""
    low, high = bounds[:, 0], bounds[:, 1]
    x = x.copy()
    while np.any(x < low) or np.any(x > high):
        x = np.where(x > high, 2.0 * high - x, x)
        x = np.where(x < low, 2.0 * low - x, x)
    return x


def random_direction(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed unit vector."""
    while True:
        u = rng.normal(size=n)
        norm = np.linalg.norm(u)
        if norm > 0.0:
            return u / norm


def mpb_advance(state: MPBState, rng: np.random.Generator) -> MPBState:
    """Apply one environment change and return the new state."""
    sev = state.severity
    peaks = []
    for peak in state.peaks:
        height = float(np.clip(peak.height + sev.height * rng.normal(), *state.height_range))
        width = float(np.clip(peak.width + sev.width * rng.normal(), *state.width_range))
        center = reflect(peak.center + sev.shift * random_direction(state.dim, rng), state.bounds)
        peaks.append(Peak(center=center, height=height, width=width))
    return replace(state, peaks=tuple(peaks), t=state.t + 1)


def true_optimum(state: MPBState) -> Tuple[np.ndarray, float]:
    """
    Global maximum of the landscape.

    Every peak attains its own maximum (its height) at its center, so the
    global maximum is the highest peak's center.
    """
    values = peak_values(state, state.centers)
    best = int(np.argmax(np.max(values, axis=1)))
    return state.centers[best].copy(), float(np.max(values[best]))


def dump_state(state: MPBState) -> str:
    """Text dump: a commented header, then one peak per line as H, W, c_1..c_n."""
    table = np.column_stack([state.heights, state.widths, state.centers])
    header = (
        f"shape={state.shape.value} n={state.dim} m={len(state.peaks)} t={state.t}\n"
        f"severity={state.severity.height!r},{state.severity.shift!r},{state.severity.width!r}\n"
        f"lower={','.join(repr(float(v)) for v in state.bounds[:, 0])}\n"
        f"upper={','.join(repr(float(v)) for v in state.bounds[:, 1])}"
    )
    buffer = io.StringIO()
    np.savetxt(buffer, table, fmt="%.17g", header=header)
    return buffer.getvalue()


def load_state(source: Union[str, Path]) -> MPBState:
    """Parse a text dump produced by dump_state (a path or the text itself)."""
    text = Path(source).read_text(encoding="utf-8") if isinstance(source, Path) else source
    meta = {}
    for line in text.splitlines():
        if not line.startswith("#"):
            continue
        for token in line[1:].split():
            key, _, value = token.partition("=")
            meta[key] = value
    try:
        n = int(meta["n"])
        height, shift, width = (float(v) for v in meta["severity"].split(","))
        bounds = np.column_stack(
            [[float(v) for v in meta["lower"].split(",")], [float(v) for v in meta["upper"].split(",")]]
        )
        table = np.loadtxt(io.StringIO(text), ndmin=2)
    except (KeyError, ValueError) as e:
        raise InputError(f"malformed landscape dump: {e}") from e
    if table.shape[1] != n + 2:
        raise InputError(f"expected {n + 2} columns per peak, got {table.shape[1]}")
    peaks = tuple(Peak(center=row[2:].copy(), height=float(row[0]), width=float(row[1])) for row in table)
    return MPBState(
        peaks=peaks,
        bounds=bounds,
        shape=PeakShape(meta.get("shape", "cone")),
        severity=Severity(height=height, shift=shift, width=width),
        t=int(meta.get("t", 1)),
    )


class DynamicObjective:
    """
    Evaluation handle around a moving-peaks landscape.

    Counts every evaluation and only changes the landscape when advance() is called.
    """

    def __init__(self, state: MPBState, rng: np.random.Generator):
        """
        Initialize the handle.

        Args:
            state: Landscape at time step 1
            rng: Random generator driving the environment changes
        """
        self.state = state
        self.rng = rng
        self.evaluations = 0
        self.evaluations_per_step: List[int] = [0]

    @property
    def t(self) -> int:
        return self.state.t

    @property
    def bounds(self) -> np.ndarray:
        return self.state.bounds

    @property
    def dim(self) -> int:
        return self.state.dim

    def evaluate(self, x, t: Optional[int] = None) -> float:
        """
        Evaluate the current landscape.

        Args:
            x: Decision vector inside the box
            t: Expected time step; must match the current one if given
        """
        if t is not None and t != self.state.t:
            raise InputError(f"evaluation requested for step {t} but the landscape is at step {self.state.t}")
        x = np.asarray(x, dtype=float).ravel()
        if np.any(x < self.bounds[:, 0]) or np.any(x > self.bounds[:, 1]):
            raise InputError("decision vector outside the search box")
        self.evaluations += 1
        self.evaluations_per_step[-1] += 1
        return mpb_eval(self.state, x)

    def advance(self):
        """Move to the next time step."""
        self.state = mpb_advance(self.state, self.rng)
        self.evaluations_per_step.append(0)
        logger.debug("landscape moved to step %d", self.state.t)

    def true_optimum(self) -> Tuple[np.ndarray, float]:
        return true_optimum(self.state)


def make_problem(
    n: int,
    m: int = 5,
    shape: PeakShape = PeakShape.CONE,
    severity: Optional[Severity] = None,
    rng: Optional[np.random.Generator] = None,
    bounds: Optional[np.ndarray] = None,
) -> DynamicObjective:
    """Build a fresh dynamic objective; the same rng drives initialization and changes."""
    rng = rng if rng is not None else np.random.default_rng()
    state = mpb_init(n, m, PeakShape(shape), bounds, rng, severity)
    return DynamicObjective(state, rng)
