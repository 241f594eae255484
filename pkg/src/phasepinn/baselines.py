"""Pure mechanistic and pure data-driven reference forecasters."""
from __future__ import annotations

from enum import Enum
from typing import Optional, Tuple

import numpy as np

from .pinn import Forecast, TrainConfig, TrainResult, build_model, forecast, train
from .sir import FitConfig, SirFit, SirState, fit_baseline, integrate


class BaselineKind(str, Enum):
    PURE_SIR = "pure_sir"
    PURE_MLP = "pure_mlp"


def sir_forecast(fit: SirFit, series, horizon: int) -> Forecast:
    """Integrate fitted parameters from the day-1 observation over days 1..horizon."""
    p = fit.params
    i1 = float(series.infected[0])
    r1 = float(series.recovered_removed[0])
    init = SirState(p.n - i1 - r1, i1, r1)
    days = np.arange(1, horizon + 1)
    traj = integrate(p, init, days.astype(np.float64))
    return Forecast(days, traj.s, traj.i, traj.r, p.n)


def run_pure_sir(
    series, t0: int = 35, horizon: int = 132, fit_config: FitConfig = FitConfig()
) -> Tuple[Forecast, SirFit]:
    if t0 > len(series.infected):
        raise ValueError(f"t0 = {t0} exceeds the {len(series.infected)} observed days")
    fit = fit_baseline(series, t0, config=fit_config)
    return sir_forecast(fit, series, horizon), fit


def run_pure_mlp(
    series,
    t0: int = 35,
    horizon: int = 132,
    config: Optional[TrainConfig] = None,
    fit_config: FitConfig = FitConfig(),
    fit: Optional[SirFit] = None,
) -> Tuple[Forecast, TrainResult]:
    """Time-to-count networks trained on the data loss alone.

    The mechanistic fit is still needed: its N0 turns I and R into the
    susceptible targets and sets the count normalisation.
    """
    config = config or TrainConfig(t0=t0, horizon_t=horizon, lam=0.0)
    fit = fit or fit_baseline(series, t0, config=fit_config)
    model = build_model(fit.params, series.infected[:t0], lam=0.0, seed=config.seed, horizon=horizon, physics=False)
    result = train(model, series, config)
    return forecast(result.model, np.arange(1, horizon + 1)), result
