"""Deterministic SIR model: integration, Nelder-Mead, and baseline fitting."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "SirParams",
    "SirState",
    "Trajectory",
    "IntegrationError",
    "integrate",
    "dopri5",
    "NelderMeadResult",
    "nelder_mead",
    "ParamBox",
    "FitConfig",
    "SirFit",
    "fit_baseline",
    "initial_guess",
]


class IntegrationError(RuntimeError):
    """The adaptive step size underflowed; ``t_last`` is the last accepted time."""

    def __init__(self, message: str, t_last: float):
        super().__init__(f"{message} (last good t = {t_last:.9g})")
        self.t_last = t_last


@dataclass(frozen=True)
class SirParams:
    beta: float
    gamma: float
    n: float

    def as_array(self) -> np.ndarray:
        return np.array([self.beta, self.gamma, self.n], dtype=np.float64)


@dataclass(frozen=True)
class SirState:
    s: float
    i: float
    r: float

    def __post_init__(self):
        if min(self.s, self.i, self.r) < 0:
            raise ValueError(f"compartments must be non-negative: {self}")

    @property
    def total(self) -> float:
        return self.s + self.i + self.r

    def as_array(self) -> np.ndarray:
        return np.array([self.s, self.i, self.r], dtype=np.float64)


@dataclass(frozen=True)
class Trajectory:
    days: np.ndarray
    states: np.ndarray  # (len(days), 3) columns S, I, R

    @property
    def s(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def i(self) -> np.ndarray:
        return self.states[:, 1]

    @property
    def r(self) -> np.ndarray:
        return self.states[:, 2]

    def __len__(self) -> int:
        return len(self.days)

    def state_at(self, k: int) -> SirState:
        s, i, r = self.states[k]
        return SirState(max(s, 0.0), max(i, 0.0), max(r, 0.0))


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def dopri5(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    t_grid: Sequence[float],
    y0,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    max_steps: int = 1_000_000,
) -> np.ndarray:
    """Adaptive Dormand-Prince integration, returning the state at every grid time.

    Steps are clipped so that every grid time is hit exactly.
    """
    t_grid = np.asarray(t_grid, dtype=np.float64)
    y = np.array(y0, dtype=np.float64)
    out = np.empty((t_grid.size, y.size))
    out[0] = y
    if t_grid.size == 1:
        return out
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")

    t = float(t_grid[0])
    k = np.empty((7, y.size))
    k[0] = rhs(t, y)
    h = _initial_step(rhs, t, y, k[0], rtol, atol, t_grid[-1] - t)
    h_min = 16 * np.finfo(float).eps
    steps = 0
    for target_idx in range(1, t_grid.size):
        target = float(t_grid[target_idx])
        while t < target:
            steps += 1
            if steps > max_steps:
                raise IntegrationError("step budget exhausted", t)
            if h < h_min * max(1.0, abs(t)):
                raise IntegrationError("step size underflow", t)
            last = t + h >= target
            step = target - t if last else h
            for s in range(1, 7):
                k[s] = rhs(t + _C[s] * step, y + step * (_A[s] @ k[:s]))
            y_new = y + step * (_B5[:6] @ k[:6])
            err = step * (_E @ k)
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            err_norm = math.sqrt(float(np.mean((err / scale) ** 2)))
            if not np.isfinite(err_norm):
                h = 0.25 * step
                continue
            if err_norm <= 1.0:
                t = target if last else t + step
                y = y_new
                k[0] = k[6]  # first-same-as-last
                factor = 10.0 if err_norm == 0 else min(10.0, 0.9 * err_norm ** -0.2)
                # a clipped step says little about the admissible size
                h = max(h, step * factor) if last else step * factor
            else:
                h = step * max(0.2, 0.9 * err_norm ** -0.2)
        out[target_idx] = y
    return out


def _initial_step(rhs, t, y, f0, rtol, atol, span):
    scale = atol + rtol * np.abs(y)
    d0 = np.sqrt(np.mean((y / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = rhs(t + h0, y + h0 * f0)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, span)


def sir_rhs(beta: float, gamma: float, n: float) -> Callable[[float, np.ndarray], np.ndarray]:
    def rhs(t, y):
        s, i, _ = y
        infection = beta * s * i / n
        recovery = gamma * i
        return np.array([-infection, infection - recovery, recovery])

    return rhs


def integrate(
    params: SirParams,
    init: SirState,
    t_grid: Sequence[float],
    rtol: float = 1e-8,
    atol: float = 1e-10,
) -> Trajectory:
    """Integrate the SIR equations from ``init`` at ``t_grid[0]``."""
    if params.n <= 0:
        raise ValueError(f"population must be positive, got {params.n}")
    if not math.isclose(init.total, params.n, rel_tol=1e-9):
        raise ValueError(f"initial state sums to {init.total}, expected n = {params.n}")
    days = np.asarray(t_grid, dtype=np.float64)
    states = dopri5(sir_rhs(params.beta, params.gamma, params.n), days, init.as_array(), rtol, atol)
    return Trajectory(days, states)


# --------------------------------------------------------------------------
# Nelder-Mead


@dataclass
class NelderMeadResult:
    x: np.ndarray
    fun: float
    nit: int
    nfev: int
    converged: bool


def nelder_mead(
    objective: Callable[[np.ndarray], float],
    start,
    step: float = 0.05,
    xtol: float = 1e-10,
    max_iter: int = 5000,
    initial_simplex: Optional[np.ndarray] = None,
) -> NelderMeadResult:
    """Downhill simplex minimisation.

    Standard coefficients (reflection 1, expansion 2, contraction 0.5,
    shrink 0.5).  Stops once every vertex lies within ``xtol`` (max-norm) of
    the best one or after ``max_iter`` iterations.  NaN objective values are
    treated as +inf.
    """
    x0 = np.atleast_1d(np.asarray(start, dtype=np.float64))
    dim = x0.size
    if dim < 1:
        raise ValueError("nelder_mead needs at least one coordinate")

    nfev = 0

    def f(x):
        nonlocal nfev
        nfev += 1
        val = float(objective(x))
        return math.inf if math.isnan(val) else val

    if initial_simplex is None:
        simplex = np.tile(x0, (dim + 1, 1))
        for j in range(dim):
            simplex[j + 1, j] = x0[j] * (1 + step) if x0[j] != 0 else 0.00025
    else:
        simplex = np.array(initial_simplex, dtype=np.float64)
        if simplex.shape != (dim + 1, dim):
            raise ValueError(f"initial simplex must have shape {(dim + 1, dim)}")
    fvals = np.array([f(x) for x in simplex])
    if not math.isfinite(fvals[0]):
        raise ValueError("objective is not finite at the starting point")

    nit = 0
    converged = False
    while True:
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        if np.max(np.abs(simplex[1:] - simplex[0])) <= xtol:
            converged = True
            break
        if nit >= max_iter:
            break
        nit += 1

        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + (centroid - worst)
        fr = f(xr)
        if fr < fvals[0]:
            xe = centroid + 2.0 * (centroid - worst)
            fe = f(xe)
            if fe < fr:
                simplex[-1], fvals[-1] = xe, fe
            else:
                simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[-1]:
            xc = centroid + 0.5 * (xr - centroid)
            fc = f(xc)
            if fc <= fr:
                simplex[-1], fvals[-1] = xc, fc
                continue
        else:
            xc = centroid + 0.5 * (worst - centroid)
            fc = f(xc)
            if fc < fvals[-1]:
                simplex[-1], fvals[-1] = xc, fc
                continue
        best = simplex[0]
        for j in range(1, dim + 1):
            simplex[j] = best + 0.5 * (simplex[j] - best)
            fvals[j] = f(simplex[j])

    return NelderMeadResult(simplex[0].copy(), float(fvals[0]), nit, nfev, converged)


# --------------------------------------------------------------------------
# baseline fit


@dataclass(frozen=True)
class ParamBox:
    """Admissible region: 0 < beta <= beta_max, 0 < gamma < 1, n_min <= n <= n_max."""

    n_min: float
    n_max: float
    beta_max: float = 2.0

    def contains(self, beta: float, gamma: float, n: float) -> bool:
        return 0.0 < beta <= self.beta_max and 0.0 < gamma < 1.0 and self.n_min <= n <= self.n_max


@dataclass(frozen=True)
class FitConfig:
    init_beta: float = 0.3
    init_gamma: float = 0.05
    # starting N is this multiple of the peak infected count in the window
    n_multiplier: float = 10.0
    beta_max: float = 2.0
    max_iter: int = 3000
    restarts: int = 4
    xtol: float = 1e-10
    rtol: float = 1e-8
    atol: float = 1e-10


@dataclass(frozen=True)
class SirFit:
    params: SirParams
    objective: float
    initial_objective: float
    converged: bool
    n_iter: int
    nfev: int


def _series_arrays(observed, t0: int) -> Tuple[np.ndarray, np.ndarray]:
    infected = np.asarray(observed.infected, dtype=np.float64)
    removed = np.asarray(observed.recovered_removed, dtype=np.float64)
    if t0 < 2 or infected.size < t0:
        raise ValueError(f"need at least t0 = {t0} (>= 2) observed days, got {infected.size}")
    return infected[:t0], removed[:t0]


def initial_guess(observed, t0: int, config: FitConfig = FitConfig(), census: Optional[float] = None) -> SirParams:
    infected, removed = _series_arrays(observed, t0)
    n = config.n_multiplier * float(infected.max())
    n = max(n, infected[0] + removed[0])
    if census is not None:
        n = min(n, census)
    return SirParams(config.init_beta, config.init_gamma, n)


def sir_objective(params: np.ndarray, infected: np.ndarray, removed: np.ndarray, config: FitConfig) -> float:
    """MSE(I) + MSE(R) over the observed days, integrating from day-1 data."""
    beta, gamma, n = (float(v) for v in params)
    s0 = n - infected[0] - removed[0]
    days = np.arange(1, infected.size + 1, dtype=np.float64)
    states = dopri5(
        sir_rhs(beta, gamma, n), days, (s0, infected[0], removed[0]), config.rtol, config.atol
    )
    return float(np.mean((states[:, 1] - infected) ** 2) + np.mean((states[:, 2] - removed) ** 2))


def fit_baseline(
    observed,
    t0: int,
    init_guess: Optional[SirParams] = None,
    bounds: Optional[ParamBox] = None,
    config: FitConfig = FitConfig(),
    census: Optional[float] = None,
) -> SirFit:
    """Least-squares SIR fit to days 1..t0 of ``observed`` with Nelder-Mead.

    ``observed`` needs ``infected`` and ``recovered_removed`` arrays.  The
    search runs in coordinates relative to ``init_guess`` and is restarted
    from the incumbent until it stops improving.
    """
    infected, removed = _series_arrays(observed, t0)
    if census is None:
        census = getattr(observed, "census_population", None)
    if bounds is None:
        n_max = float(census) if census else math.inf
        bounds = ParamBox(float(infected[0] + removed[0]), n_max, config.beta_max)
    if init_guess is None:
        init_guess = initial_guess(observed, t0, config, census)
    if not bounds.contains(init_guess.beta, init_guess.gamma, init_guess.n):
        raise ValueError(f"initial guess {init_guess} lies outside {bounds}")

    scale = init_guess.as_array()

    def objective(u):
        beta, gamma, n = u * scale
        if not bounds.contains(beta, gamma, n):
            return math.inf
        try:
            return sir_objective(u * scale, infected, removed, config)
        except IntegrationError:
            return math.inf

    u = np.ones(3)
    initial_objective = objective(u)
    best = None
    nit = nfev = 0
    for _ in range(max(1, config.restarts)):
        res = nelder_mead(objective, u, xtol=config.xtol, max_iter=config.max_iter)
        nit += res.nit
        nfev += res.nfev
        improved = best is None or res.fun < best.fun * (1 - 1e-12)
        if best is None or res.fun <= best.fun:
            best = res
        if not improved or best.fun == 0.0:
            break
        u = best.x
    beta, gamma, n = (float(v) for v in best.x * scale)
    return SirFit(SirParams(beta, gamma, n), best.fun, initial_objective, best.converged, nit, nfev)
