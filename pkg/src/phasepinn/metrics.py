"""sMAPE scoring per region and horizon, aggregation, and report files."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

METHOD_ORDER = ("sir", "mlp", "sp-pinn", "mp-pinn")
HORIZON_ORDER = ("short", "long", "all")


def smape(actual, predicted, eps: float = 1e-32) -> float:
    """Symmetric MAPE in [0, 2]: mean of |y - yhat| / ((y + yhat + eps) / 2)."""
    y = np.asarray(actual, dtype=np.float64)
    yhat = np.asarray(predicted, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {yhat.shape}")
    if y.size == 0:
        raise ValueError("smape needs at least one point")
    return float(np.mean(np.abs(y - yhat) / ((y + yhat + eps) / 2.0)))


@dataclass(frozen=True)
class MetricConfig:
    epsilon: float = 1e-32
    # inclusive 1-based ranges of test days
    horizons: Tuple[Tuple[str, int, int], ...] = (("short", 1, 30), ("long", 31, 97), ("all", 1, 97))

    def horizon_slices(self, test_len: int) -> Dict[str, slice]:
        out = {}
        for name, lo, hi in self.horizons:
            if hi > test_len:
                raise ValueError(f"horizon {name!r} needs {hi} test days, have {test_len}")
            out[name] = slice(lo - 1, hi)
        return out


@dataclass
class ForecastReport:
    per_region: Dict[str, Dict[str, Dict[str, float]]] = field(default_factory=dict)
    aggregate: Dict[str, Dict[str, float]] = field(default_factory=dict)
    # region -> {"observed": array, method: predicted array}, full window
    trajectories: Dict[str, Dict[str, np.ndarray]] = field(default_factory=dict)
    t0: int = 35

    @property
    def methods(self) -> Tuple[str, ...]:
        return ordered_methods(self.aggregate)

    @property
    def regions(self) -> Tuple[str, ...]:
        return tuple(sorted(self.per_region))


def ordered_methods(methods) -> Tuple[str, ...]:
    known = [m for m in METHOD_ORDER if m in methods]
    return tuple(known + sorted(m for m in methods if m not in METHOD_ORDER))


def evaluate(
    observed: Mapping[str, np.ndarray],
    forecasts: Mapping[str, Mapping[str, np.ndarray]],
    config: MetricConfig = MetricConfig(),
    t0: int = 35,
) -> ForecastReport:
    """Score infected-count forecasts.

    ``observed[region]`` and ``forecasts[method][region]`` are infected
    counts over the full window (training days first); only days after
    ``t0`` are scored.
    """
    report = ForecastReport(t0=t0)
    regions = sorted(observed)
    for method in ordered_methods(forecasts):
        per_method = forecasts[method]
        absent = [r for r in regions if r not in per_method]
        if absent:
            raise KeyError(f"method {method!r} has no forecast for regions: {', '.join(absent)}")
    for region in regions:
        y = np.asarray(observed[region], dtype=np.float64)
        test = y[t0:]
        slices = config.horizon_slices(test.size)
        report.trajectories[region] = {"observed": y}
        report.per_region[region] = {}
        for method in ordered_methods(forecasts):
            pred = np.asarray(forecasts[method][region], dtype=np.float64)
            if pred.size < y.size:
                raise ValueError(f"{method}/{region}: forecast covers {pred.size} of {y.size} days")
            pred = pred[: y.size]
            report.trajectories[region][method] = pred
            report.per_region[region][method] = {
                h: smape(test[sl], pred[t0:][sl], config.epsilon) for h, sl in slices.items()
            }
    for method in ordered_methods(forecasts):
        report.aggregate[method] = {
            h: float(np.mean([report.per_region[r][method][h] for r in regions]))
            for h, _, _ in config.horizons
        }
    return report


def _write_table(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "horizon", "smape"])
        for method, horizon, value in rows:
            writer.writerow([method, horizon, f"{value:.6f}"])


def emit_report(report: ForecastReport, out_dir, plots: bool = True) -> Dict[str, Path]:
    """Write results.csv, one CSV per region and observed-vs-predicted SVG plots."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    rows = [(m, h, report.aggregate[m][h]) for m in report.methods for h in HORIZON_ORDER if h in report.aggregate[m]]
    written["results"] = out / "results.csv"
    _write_table(written["results"], rows)

    region_dir = out / "regions"
    region_dir.mkdir(exist_ok=True)
    for region in report.regions:
        cells = report.per_region[region]
        rows = [(m, h, cells[m][h]) for m in ordered_methods(cells) for h in HORIZON_ORDER if h in cells[m]]
        path = region_dir / f"{region}.csv"
        _write_table(path, rows)
        written[f"region:{region}"] = path

    if plots:
        plot_dir = out / "plots"
        plot_dir.mkdir(exist_ok=True)
        for region in report.regions:
            traj = report.trajectories[region]
            for method in ordered_methods(k for k in traj if k != "observed"):
                path = plot_dir / f"{region}_{method}.svg"
                plot_forecast(path, traj["observed"], traj[method], report.t0, f"{region}: {method}")
                written[f"plot:{region}:{method}"] = path
    return written


def plot_forecast(path, observed, predicted, t0: int, title: str = "", short_len: int = 30) -> None:
    """Observed vs predicted infected counts with shaded forecast horizons."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    days = np.arange(1, len(observed) + 1)
    with matplotlib.rc_context({"svg.hashsalt": "phasepinn", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.axvspan(t0 + 0.5, t0 + short_len + 0.5, color="tab:blue", alpha=0.12, lw=0)
        ax.axvspan(t0 + short_len + 0.5, days[-1] + 0.5, color="tab:red", alpha=0.10, lw=0)
        ax.plot(days, observed, "k.", ms=3, label="observed")
        ax.plot(days, predicted[: len(days)], "-", color="tab:green", lw=1.5, label="predicted")
        ax.set_xlabel("day")
        ax.set_ylabel("infected")
        ax.set_title(title)
        ax.legend(loc="upper right", frameon=False)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
