"""scikit-learn style wrappers around the SIR fit and the PINN trainer.

``X`` holds day indices as a single column starting at 1 and ``y`` holds
the observed ``[infected, recovered_removed]`` counts for those days.
After ``fit``, ``predict`` returns infected counts for any requested days.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .nets import ScalingBounds
from .pinn import PhaseBounds, PhaseSchedule, TrainConfig, build_model, forecast, train
from .sir import FitConfig, SirState, fit_baseline, integrate


@dataclass(frozen=True)
class _Observed:
    infected: np.ndarray
    recovered_removed: np.ndarray
    census_population: Optional[float]


def _check_training_days(X, y):
    X, y = check_X_y(X, y, multi_output=True, y_numeric=True, dtype=np.float64)
    if X.shape[1] != 1:
        raise ValueError(f"X must hold one column of day indices, got {X.shape[1]}")
    if y.ndim != 2 or y.shape[1] != 2:
        raise ValueError("y must have two columns: infected, recovered_removed")
    days = X[:, 0]
    if not np.array_equal(days, np.arange(1, days.size + 1)):
        raise ValueError("X must list consecutive days 1..n")
    if np.any(y < 0):
        raise ValueError("counts must be non-negative")
    return days, y


def _check_days(X, horizon: Optional[int] = None) -> np.ndarray:
    X = check_array(X, dtype=np.float64)
    if X.shape[1] != 1:
        raise ValueError(f"X must hold one column of day indices, got {X.shape[1]}")
    days = X[:, 0]
    if np.any(days < 1) or np.any(days != np.round(days)):
        raise ValueError("days must be integers >= 1")
    if horizon is not None and days.max() > horizon:
        raise ValueError(f"day {int(days.max())} is beyond the model horizon {horizon}")
    return days.astype(int)


class SIRForecaster(RegressorMixin, BaseEstimator):
    """Least-squares SIR fit; forecasts by integrating the fitted ODE."""

    def __init__(
        self,
        census_population: Optional[float] = None,
        init_beta: float = 0.3,
        init_gamma: float = 0.05,
        n_multiplier: float = 10.0,
        max_iter: int = 3000,
        restarts: int = 4,
    ):
        self.census_population = census_population
        self.init_beta = init_beta
        self.init_gamma = init_gamma
        self.n_multiplier = n_multiplier
        self.max_iter = max_iter
        self.restarts = restarts

    def fit(self, X, y):
        days, y = _check_training_days(X, y)
        config = FitConfig(
            init_beta=self.init_beta,
            init_gamma=self.init_gamma,
            n_multiplier=self.n_multiplier,
            max_iter=self.max_iter,
            restarts=self.restarts,
        )
        obs = _Observed(y[:, 0], y[:, 1], self.census_population)
        self.fit_ = fit_baseline(obs, days.size, config=config)
        self.params_ = self.fit_.params
        self.initial_state_ = SirState(self.params_.n - y[0, 0] - y[0, 1], y[0, 0], y[0, 1])
        self.n_features_in_ = 1
        return self

    def predict_compartments(self, X) -> np.ndarray:
        """(n, 3) array of S, I, R on the requested days."""
        check_is_fitted(self, "params_")
        days = _check_days(X)
        grid = np.arange(1, days.max() + 1, dtype=np.float64)
        traj = integrate(self.params_, self.initial_state_, grid)
        return traj.states[days - 1]

    def predict(self, X) -> np.ndarray:
        return self.predict_compartments(X)[:, 1]


class PINNForecaster(RegressorMixin, BaseEstimator):
    """Physics-regularised network forecaster with per-phase parameter heads.

    ``phase_bounds`` lists one ``{"beta": (a, b), "gamma": (a, b), "n": (a, b)}``
    mapping per phase; ``None`` picks the defaults for ``n_phases`` 1 or 2.
    ``lam = 0`` drops the physics term and the heads entirely.
    """

    def __init__(
        self,
        n_phases: int = 1,
        phase_offset: int = 30,
        phase_bounds: Optional[Sequence[dict]] = None,
        lam: float = 1.0,
        lr: float = 3e-4,
        epochs: int = 30_000,
        horizon: int = 132,
        random_state: int = 0,
        census_population: Optional[float] = None,
    ):
        self.n_phases = n_phases
        self.phase_offset = phase_offset
        self.phase_bounds = phase_bounds
        self.lam = lam
        self.lr = lr
        self.epochs = epochs
        self.horizon = horizon
        self.random_state = random_state
        self.census_population = census_population

    def _schedule(self, t0: int) -> PhaseSchedule:
        if self.n_phases == 1:
            default = PhaseSchedule.single_phase()
        elif self.n_phases == 2:
            default = PhaseSchedule.two_phase(t0, self.phase_offset)
        else:
            raise ValueError("n_phases must be 1 or 2")
        if self.phase_bounds is None:
            return default
        if len(self.phase_bounds) != self.n_phases:
            raise ValueError(f"phase_bounds needs {self.n_phases} entries")
        bounds = tuple(
            PhaseBounds(*(ScalingBounds(*map(float, b[k])) for k in ("beta", "gamma", "n")))
            for b in self.phase_bounds
        )
        return PhaseSchedule(default.phase_starts, bounds)

    def fit(self, X, y):
        days, y = _check_training_days(X, y)
        t0 = days.size
        if t0 >= self.horizon:
            raise ValueError(f"{t0} training days leave nothing to forecast within horizon {self.horizon}")
        physics = self.lam > 0
        if physics and t0 != 35:
            raise ValueError(f"the parameter heads read a 35-day prefix, got {t0} training days")
        obs = _Observed(y[:, 0], y[:, 1], self.census_population)
        self.sir_fit_ = fit_baseline(obs, t0)
        model = build_model(
            self.sir_fit_.params,
            y[:, 0],
            self._schedule(t0) if physics else None,
            lam=self.lam,
            seed=self.random_state,
            horizon=self.horizon,
            physics=physics,
        )
        config = TrainConfig(
            lr=self.lr, epochs=self.epochs, seed=self.random_state, t0=t0, horizon_t=self.horizon, lam=self.lam
        )
        result = train(model, obs, config)
        self.model_ = result.model
        self.loss_history_ = np.asarray(result.history)
        self.n_features_in_ = 1
        return self

    @property
    def estimates_(self):
        check_is_fitted(self, "model_")
        return self.model_.estimates()

    def predict_compartments(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        days = _check_days(X, self.horizon)
        fc = forecast(self.model_, days)
        return np.column_stack([fc.s, fc.i, fc.r])

    def predict(self, X) -> np.ndarray:
        return self.predict_compartments(X)[:, 1]


class MLPForecaster(PINNForecaster):
    """Data-only baseline: the PINN state networks trained without physics."""

    def __init__(
        self,
        lr: float = 3e-4,
        epochs: int = 30_000,
        horizon: int = 132,
        random_state: int = 0,
        census_population: Optional[float] = None,
    ):
        super().__init__(
            lam=0.0, lr=lr, epochs=epochs, horizon=horizon, random_state=random_state, census_population=census_population
        )
