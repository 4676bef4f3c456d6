"""
Experiment configuration.

Loading, validating and saving the JSON experiment configuration. Defaults
are the moving-peaks small-change setup: n=3, m=5, (h, s)=(1, 1), T=10 and
31 repetitions of DETO against RBO.
"""

import json
import logging
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from core.acquisition import AcqOptimizerKind
from core.benchmarks import DynamicObjective, PeakShape, Severity, make_bounds, make_problem
from core.errors import ConfigError
from core.mogp import CoregionKind
from core.optimizer import VARIANTS, AlgorithmConfig, InitKind
from core.source_select import SourcePolicy

logger = logging.getLogger(__name__)

CONFIG_NAME = "config.json"


def get_config_path() -> Path:
    """Get the default config path: next to the executable when frozen, else next to main.py."""
    if getattr(sys, "frozen", False):
        config_dir = Path(os.path.dirname(sys.executable))
    else:
        config_dir = Path(__file__).parent.parent
    return config_dir / CONFIG_NAME


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SeveritySettings(_Strict):
    """Height and shift severity of the environment changes."""

    height: float = Field(1.0, ge=0.0)
    shift: float = Field(1.0, ge=0.0)


@dataclass(frozen=True)
class ProblemInstance:
    """One benchmark instance of the sweep."""

    id: str
    shape: PeakShape
    n: int
    m: int
    severity: Severity
    lower: float
    upper: float

    def parameters(self) -> dict:
        """Generator parameters written into every run record header."""
        return {
            "shape": self.shape.value,
            "n": self.n,
            "m": self.m,
            "lower": self.lower,
            "upper": self.upper,
            "height_severity": self.severity.height,
            "shift_severity": self.severity.shift,
            "width_severity": self.severity.width,
        }

    def make(self, rng: np.random.Generator) -> DynamicObjective:
        return make_problem(
            self.n, self.m, self.shape, self.severity, rng, make_bounds(self.n, self.lower, self.upper)
        )


class ProblemSettings(_Strict):
    """A family of moving-peaks instances: every dimension paired with every severity."""

    shape: PeakShape = PeakShape.CONE
    dims: List[int] = Field(default_factory=lambda: [3], min_length=1)
    peaks: int = Field(5, ge=1)
    severities: List[SeveritySettings] = Field(default_factory=lambda: [SeveritySettings()], min_length=1)
    width_severity: float = Field(0.5, ge=0.0)
    lower: float = 0.0
    upper: float = 100.0

    @field_validator("dims")
    @classmethod
    def _positive_dims(cls, dims: List[int]) -> List[int]:
        if any(n < 1 for n in dims):
            raise ValueError("every dimension must be >= 1")
        return dims

    @model_validator(mode="after")
    def _ordered_box(self) -> "ProblemSettings":
        if not self.lower < self.upper:
            raise ValueError(f"lower ({self.lower}) must be below upper ({self.upper})")
        return self

    def instances(self) -> List[ProblemInstance]:
        """Expand into instances with ids such as mpb-cone-n3-h1-s1."""
        result = []
        for n in self.dims:
            for sev in self.severities:
                result.append(
                    ProblemInstance(
                        id=f"mpb-{self.shape.value}-n{n}-h{sev.height:g}-s{sev.shift:g}",
                        shape=self.shape,
                        n=n,
                        m=self.peaks,
                        severity=Severity(height=sev.height, shift=sev.shift, width=self.width_severity),
                        lower=self.lower,
                        upper=self.upper,
                    )
                )
        return result


class AlgorithmSettings(_Strict):
    """
    An algorithm entry: a preset from VARIANTS plus optional overrides.

    Unset overrides keep the preset's value.
    """

    name: str
    variant: str = ""
    surrogate: Optional[CoregionKind] = None
    source_policy: Optional[SourcePolicy] = None
    init: Optional[InitKind] = None
    acq_optimizer: Optional[AcqOptimizerKind] = None
    exploit_first: Optional[bool] = None
    k: Optional[int] = Field(None, ge=1)
    lmc_rank: Optional[int] = Field(None, ge=0)
    sigma: Optional[int] = Field(None, ge=1)
    omega: Optional[float] = Field(None, ge=0.0)
    pop_size: Optional[int] = Field(None, ge=4)
    generations: Optional[int] = Field(None, ge=1)
    kappa_init: Optional[int] = Field(None, ge=1)
    eps_d: Optional[float] = Field(None, gt=0.0)

    @model_validator(mode="after")
    def _known_variant(self) -> "AlgorithmSettings":
        variant = self.variant or self.name
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {', '.join(VARIANTS)}")
        return self

    def to_algorithm_config(self) -> AlgorithmConfig:
        """Build the core's frozen configuration."""
        base = VARIANTS[self.variant or self.name]
        switches = {
            key: getattr(self, key)
            for key in ("surrogate", "source_policy", "init", "acq_optimizer", "exploit_first", "k", "lmc_rank")
            if getattr(self, key) is not None
        }
        acq = {
            key: getattr(self, key)
            for key in ("omega", "pop_size", "generations", "kappa_init", "eps_d")
            if getattr(self, key) is not None
        }
        warm_start = base.warm_start if self.sigma is None else replace(base.warm_start, sigma=self.sigma)
        return replace(base, name=self.name, acq=replace(base.acq, **acq), warm_start=warm_start, **switches)


def _default_algorithms() -> List[AlgorithmSettings]:
    return [AlgorithmSettings(name="DETO"), AlgorithmSettings(name="RBO")]


class ExperimentConfig(_Strict):
    """A full sweep: problems x algorithms x repetitions."""

    problems: List[ProblemSettings] = Field(default_factory=lambda: [ProblemSettings()], min_length=1)
    algorithms: List[AlgorithmSettings] = Field(default_factory=_default_algorithms, min_length=1)
    T: int = Field(10, ge=1)
    repetitions: int = Field(31, ge=1)
    master_seed: int = Field(0, ge=0)
    output_dir: str = "results"
    workers: Optional[int] = Field(None, ge=1)
    baseline: Optional[str] = "RBO"

    @model_validator(mode="after")
    def _consistent_names(self) -> "ExperimentConfig":
        names = [a.name for a in self.algorithms]
        if len(set(names)) != len(names):
            raise ValueError(f"algorithm names must be unique, got {names}")
        if self.baseline is not None and self.baseline not in names:
            raise ValueError(f"baseline {self.baseline!r} is not one of the configured algorithms {names}")
        ids = [p.id for settings in self.problems for p in settings.instances()]
        if len(set(ids)) != len(ids):
            raise ValueError(f"problem instances must be unique, got {ids}")
        return self

    def instances(self) -> List[ProblemInstance]:
        return [instance for settings in self.problems for instance in settings.instances()]

    def algorithm_configs(self) -> List[Tuple[str, AlgorithmConfig]]:
        return [(a.name, a.to_algorithm_config()) for a in self.algorithms]


def _describe(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"]) or "<root>"
        parts.append(f"{location}: {item['msg']}")
    return "; ".join(parts)


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a configuration mapping, filling defaults."""
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {_describe(e)}") from e


def load_config(path: Union[str, Path, None] = None) -> ExperimentConfig:
    """
    Load and validate an experiment configuration.

    Args:
        path: JSON file; the default config path if None

    Raises:
        ConfigError: If the file is missing, not JSON or fails validation
    """
    path = Path(path) if path is not None else get_config_path()
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e
    config = parse_config(data)
    logger.debug("loaded configuration from %s", path)
    return config


def save_config(config: ExperimentConfig, path: Union[str, Path]):
    """Write a configuration as indented JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config.model_dump(mode="json"), f, indent=4)
        f.write("\n")
