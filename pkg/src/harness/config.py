"""
Experiment configuration: one JSON document validated by pydantic.

    {
      "name": "quadcopter-mpc",
      "pipeline": "mpc",                      # simulate | linearize-compare | mpc | multirate-sweep
      "system": "quadcopter",                 # quadcopter | fpu | free_particle | harmonic_oscillator | pendulum | custom
      "custom_system": null,                  # expressions for system "custom", see CustomSystemConfig
      "dt": 0.05, "horizon": 21, "steps": 21,
      "micro_steps": [1],                     # the sweep values for multirate-sweep
      "t_target": null,                       # multirate runs: end time, a multiple of every macro step
      "algorithm": 1,                         # 1 constant cross-sections, 2 varying
      "maxiter": 1,
      "linearization": "jacobian",            # or "variational"
      "micro_bounds": "direct",               # or "combined"
      "online_fraction": null,                # overrides the benchmark trust-region fraction
      "x0": null, "control": null,
      "output_dir": null, "seed": 0, "dump_conic": false
    }

CLI flags override individual fields after the document is read.
"""

from pathlib import Path
from typing import Any, Dict, List, Literal, Optional
import json

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.config import DEFAULT_SEED, TIMING_REPEATS
from src.errors import ConfigError, UsageError
from src.models.expressions import build_system
from src.models.systems import LagrangianSystem, MultiratePartition, Region

PIPELINES = ("simulate", "linearize-compare", "mpc", "multirate-sweep")
SYSTEMS = ("quadcopter", "fpu", "free_particle", "harmonic_oscillator", "pendulum", "custom")
CONTROLLED = ("quadcopter", "fpu")
MULTIRATE = ("fpu",)


class PartitionConfig(BaseModel):
    """Slow/fast split by coordinate and control name."""

    model_config = ConfigDict(extra="forbid")

    slow: List[str]
    fast: List[str]
    slow_controls: List[str] = []
    fast_controls: List[str] = []


class RegionConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    q_radius: List[float]
    v_radius: List[float]
    u_radius: List[float]


class CustomSystemConfig(BaseModel):
    """
    A system written out in the config, e.g.

        {"coordinates": ["x"], "controls": ["u"],
         "lagrangian": "xdot^2/2 - k*x^2/2", "forces": ["u - c*xdot"],
         "parameters": {"k": 4.0, "c": 0.5}}

    Omitted forces are zero. `region` enables the soundness sample of
    linearize-compare.
    """

    model_config = ConfigDict(extra="forbid")

    name: str = "custom"
    coordinates: List[str] = Field(min_length=1)
    controls: List[str] = Field(min_length=1)
    lagrangian: str
    forces: Optional[List[str]] = None
    parameters: Dict[str, float] = {}
    separable: bool = False
    cyclic: List[str] = []
    equilibrium: Optional[Dict[str, List[float]]] = None
    partition: Optional[PartitionConfig] = None
    region: Optional[RegionConfig] = None

    @model_validator(mode="after")
    def _expressions_parse(self) -> "CustomSystemConfig":
        try:
            self.build()
            self.build_partition(1)
        except (ConfigError, UsageError) as e:
            raise ValueError(str(e)) from e
        if self.region is not None:
            n_q, n_u = len(self.coordinates), len(self.controls)
            r = self.region
            if (len(r.q_radius), len(r.v_radius), len(r.u_radius)) != (n_q, n_q, n_u):
                raise ValueError(f"region radii must have lengths ({n_q}, {n_q}, {n_u})")
        return self

    def build(self) -> LagrangianSystem:
        forces = self.forces if self.forces is not None else ["0"] * len(self.coordinates)
        return build_system(
            self.name,
            self.coordinates,
            self.controls,
            self.lagrangian,
            forces,
            parameters=self.parameters,
            separable=self.separable,
            equilibrium=self.equilibrium,
            cyclic=self.cyclic,
        )

    def build_partition(self, micro_steps: int) -> Optional[MultiratePartition]:
        part = self.partition
        if part is None:
            return None
        unknown = [c for c in (*part.slow, *part.fast) if c not in self.coordinates]
        unknown += [c for c in (*part.slow_controls, *part.fast_controls) if c not in self.controls]
        if unknown:
            raise ConfigError(f"partition names not declared: {unknown}")
        return MultiratePartition(
            slow_q=tuple(self.coordinates.index(c) for c in part.slow),
            fast_q=tuple(self.coordinates.index(c) for c in part.fast),
            slow_u=tuple(self.controls.index(c) for c in part.slow_controls),
            fast_u=tuple(self.controls.index(c) for c in part.fast_controls),
            micro_steps=micro_steps,
        )

    def build_region(self) -> Optional[Region]:
        if self.region is None:
            return None
        r = self.region
        return Region(np.asarray(r.q_radius, dtype=float), np.asarray(r.v_radius, dtype=float), np.asarray(r.u_radius, dtype=float))


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "experiment"
    pipeline: Literal["simulate", "linearize-compare", "mpc", "multirate-sweep"] = "simulate"
    system: Literal["quadcopter", "fpu", "free_particle", "harmonic_oscillator", "pendulum", "custom"] = "quadcopter"
    custom_system: Optional[CustomSystemConfig] = None
    dt: Optional[float] = Field(default=None, gt=0.0)
    horizon: Optional[int] = Field(default=None, ge=1)
    steps: int = Field(default=21, ge=1)
    micro_steps: List[int] = [1]
    t_target: Optional[float] = Field(default=None, gt=0.0)
    algorithm: Literal[1, 2] = 1
    maxiter: int = Field(default=1, ge=1)
    linearization: Literal["jacobian", "variational"] = "jacobian"
    micro_bounds: Literal["direct", "combined"] = "direct"
    online_fraction: Optional[float] = Field(default=None, gt=0.0, le=1.0)
    eta: Optional[float] = Field(default=None, gt=0.0)
    x0: Optional[List[float]] = None
    control: Optional[List[float]] = None
    compare_euler: bool = True
    soundness_samples: int = Field(default=1000, ge=0)
    repeats: int = Field(default=TIMING_REPEATS, ge=1)
    output_dir: Optional[str] = None
    seed: int = DEFAULT_SEED
    dump_conic: bool = False

    @field_validator("micro_steps")
    @classmethod
    def _positive_micro_steps(cls, v: List[int]) -> List[int]:
        if not v or any(p < 1 for p in v):
            raise ValueError("micro_steps must be a non-empty list of integers >= 1")
        return v

    @model_validator(mode="after")
    def _pipeline_fits_system(self) -> "ExperimentConfig":
        if self.pipeline in ("mpc", "multirate-sweep") and self.system not in CONTROLLED:
            raise ValueError(f"pipeline {self.pipeline!r} needs a benchmark with a regulation problem, one of {CONTROLLED}")
        if (self.system == "custom") != (self.custom_system is not None):
            raise ValueError("custom_system is required for system 'custom' and only allowed there")
        if any(p > 1 for p in self.micro_steps) and not self.multirate:
            raise ValueError(f"micro_steps > 1 needs a partitioned system, one of {MULTIRATE} or a custom system with a partition")
        if self.pipeline == "multirate-sweep" and self.t_target is None:
            raise ValueError("multirate-sweep needs t_target")
        return self

    @property
    def multirate(self) -> bool:
        if self.system == "custom":
            return self.custom_system is not None and self.custom_system.partition is not None
        return self.system in MULTIRATE

    @property
    def mode(self) -> str:
        return "constant" if self.algorithm == 1 else "varying"


def _errors(e: ValidationError) -> List[str]:
    return [f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()]


def parse_config(data: Dict[str, Any], overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    merged = {**data, **{k: v for k, v in (overrides or {}).items() if v is not None}}
    try:
        return ExperimentConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigError("; ".join(_errors(e))) from e


def load_config(path, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return parse_config(data, overrides)


def validation_errors(data: Dict[str, Any]) -> List[str]:
    try:
        ExperimentConfig.model_validate(data)
    except ValidationError as e:
        return _errors(e)
    return []
