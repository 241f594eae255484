"""Phase-aware physics-informed forecasting of regional SIR epidemic waves."""
from .data import RegionSeries, SplitSpec, ingest_dpc_csv, read_dataset, write_dataset
from .metrics import ForecastReport, MetricConfig, emit_report, evaluate, smape
from .pinn import (
    PhaseBounds,
    PhaseSchedule,
    PinnModel,
    TrainConfig,
    build_model,
    forecast,
    residual_loss,
    total_loss,
    train,
)
from .sir import SirParams, SirState, fit_baseline, integrate, nelder_mead

__version__ = "0.1.0"

__all__ = [
    "RegionSeries",
    "SplitSpec",
    "ingest_dpc_csv",
    "read_dataset",
    "write_dataset",
    "ForecastReport",
    "MetricConfig",
    "emit_report",
    "evaluate",
    "smape",
    "PhaseBounds",
    "PhaseSchedule",
    "PinnModel",
    "TrainConfig",
    "build_model",
    "forecast",
    "residual_loss",
    "total_loss",
    "train",
    "SirParams",
    "SirState",
    "fit_baseline",
    "integrate",
    "nelder_mead",
]
