"""Experiment configuration stored as JSON; command-line flags override file values."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from .nets import ScalingBounds
from .pinn import PhaseBounds, PhaseSchedule, TrainConfig
from .sir import FitConfig

METHODS = ("sir", "mlp", "sp-pinn", "mp-pinn")


def _bounds_dict(pb: PhaseBounds) -> Dict[str, List[float]]:
    return {k: [getattr(pb, k).a, getattr(pb, k).b] for k in ("beta", "gamma", "n")}


def _bounds_from(d: Dict[str, List[float]]) -> PhaseBounds:
    return PhaseBounds(*(ScalingBounds(*map(float, d[k])) for k in ("beta", "gamma", "n")))


@dataclass
class ExperimentConfig:
    data_dir: str = "data"
    out_dir: str = "results"
    input_csv: Optional[str] = None
    t0: int = 35
    test_len: int = 97
    lr: float = 3e-4
    epochs: int = 30_000
    seed: int = 0
    lam: float = 1.0
    # the second phase starts this many days after the training window
    phase_offset: int = 30
    single_phase_bounds: List[Dict[str, List[float]]] = field(
        default_factory=lambda: [_bounds_dict(b) for b in PhaseSchedule.single_phase().bounds]
    )
    two_phase_bounds: List[Dict[str, List[float]]] = field(
        default_factory=lambda: [_bounds_dict(b) for b in PhaseSchedule.two_phase().bounds]
    )
    sir_fit: Dict[str, float] = field(default_factory=lambda: dataclasses.asdict(FitConfig()))
    methods: List[str] = field(default_factory=lambda: list(METHODS))
    regions: Union[str, List[str]] = "all"
    jobs: int = 1
    synthetic_noise: float = 0.0

    def __post_init__(self):
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown method(s): {', '.join(unknown)}")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    @property
    def horizon(self) -> int:
        return self.t0 + self.test_len

    def train_config(self, lam: Optional[float] = None) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            epochs=self.epochs,
            seed=self.seed,
            t0=self.t0,
            horizon_t=self.horizon,
            lam=self.lam if lam is None else lam,
        )

    def fit_config(self) -> FitConfig:
        return FitConfig(**self.sir_fit)

    def schedule(self, method: str) -> PhaseSchedule:
        if method == "mp-pinn":
            bounds = tuple(_bounds_from(b) for b in self.two_phase_bounds)
            return PhaseSchedule((1, self.t0 + self.phase_offset), bounds)
        return PhaseSchedule((1,), tuple(_bounds_from(b) for b in self.single_phase_bounds))

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ValueError(f"unknown config key(s): {', '.join(unknown)}")
        cfg = cls(**data)
        FitConfig(**cfg.sir_fit)  # validate keys early
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def job_fingerprint(self, method: str) -> str:
        """Hash of every setting that influences one (method, region) job."""
        relevant = {
            "t0": self.t0,
            "test_len": self.test_len,
            "sir_fit": self.sir_fit,
        }
        if method != "sir":
            relevant.update(lr=self.lr, epochs=self.epochs, seed=self.seed)
        if method in ("sp-pinn", "mp-pinn"):
            relevant.update(lam=self.lam, bounds=_bounds_dict_list(self.schedule(method)))
        if method == "mp-pinn":
            relevant["phase_offset"] = self.phase_offset
        blob = json.dumps({"method": method, **relevant}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _bounds_dict_list(schedule: PhaseSchedule):
    return [_bounds_dict(b) for b in schedule.bounds]
