import datetime as dt
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pandas as pd
import pytest

from phasepinn import nets as nn
from phasepinn.data import CENSUS_2020
from phasepinn.nets import Mlp, ParamHead, ScalingBounds
from phasepinn.pinn import PhaseBounds, PhaseSchedule, PinnModel, build_model
from phasepinn.sir import SirParams, SirState, integrate


def random_mlp(rng, dims, hidden, scale=0.5):
    weights = tuple(rng.normal(0, scale, (a, b)) for a, b in zip(dims[:-1], dims[1:]))
    biases = tuple(rng.normal(0, scale, b) for b in dims[1:])
    acts = tuple([hidden] * (len(dims) - 2) + ["linear"])
    return Mlp(weights, biases, acts)


def random_bounds(rng):
    return PhaseBounds(
        ScalingBounds(rng.uniform(0.5, 1.5), rng.uniform(0.05, 0.5)),
        ScalingBounds(rng.uniform(0.5, 1.5), rng.uniform(0.05, 0.5)),
        ScalingBounds(1.0, rng.uniform(0.05, 0.5)),
    )


def toy_model(rng, n_phases=1, width=4, head_width=2, lam=1.0, horizon=132):
    """PINN with small random networks; heads keep the 35-day input."""
    baseline = SirParams(rng.uniform(0.1, 0.4), rng.uniform(0.02, 0.1), rng.uniform(5e4, 5e5))
    prefix = rng.uniform(0.001, 0.02, 35) * baseline.n
    starts = (1,) if n_phases == 1 else tuple([1] + sorted(rng.choice(np.arange(2, horizon + 1), n_phases - 1, replace=False)))
    schedule = PhaseSchedule(starts, tuple(random_bounds(rng) for _ in range(n_phases)))
    head = lambda base, bounds: ParamHead(random_mlp(rng, (35, head_width, 1), "tanh"), bounds, base, baseline.n)
    return PinnModel(
        random_mlp(rng, (1, width, width, 1), "celu"),
        random_mlp(rng, (1, width, width, 1), "celu"),
        tuple(head(baseline.beta, b.beta) for b in schedule.bounds),
        tuple(head(baseline.gamma, b.gamma) for b in schedule.bounds),
        head(baseline.n, schedule.bounds[0].n),
        schedule,
        lam,
        baseline,
        horizon,
        prefix,
    )


def toy_series(rng, model, days=35):
    n0 = model.baseline.n
    return SimpleNamespace(
        infected=rng.uniform(0.001, 0.05, days) * n0,
        recovered_removed=rng.uniform(0.0, 0.02, days) * n0,
        census_population=10 * n0,
    )


def sir_wave(beta=0.12, gamma=0.04, n=1e5, i0=2000.0, days=132):
    grid = np.arange(1, days + 1, dtype=np.float64)
    return integrate(SirParams(beta, gamma, n), SirState(n - i0, i0, 0.0), grid).states


def dpc_frame(regions, start=dt.date(2020, 2, 24), n_days=150, seed=0):
    """Synthetic frame in the DPC regional layout."""
    rng = np.random.default_rng(seed)
    rows = []
    for name in regions:
        wave = sir_wave(rng.uniform(0.1, 0.2), rng.uniform(0.03, 0.06), CENSUS_2020[name] / 50, 100.0, n_days)
        for k in range(n_days):
            day = start + dt.timedelta(days=k)
            rows.append(
                {
                    "data": f"{day.isoformat()}T17:00:00",
                    "stato": "ITA",
                    "codice_regione": 1,
                    "denominazione_regione": name,
                    "totale_positivi": int(round(wave[k, 1])),
                    "dimessi_guariti": int(round(0.8 * wave[k, 2])),
                    "deceduti": int(round(0.2 * wave[k, 2])),
                }
            )
    return pd.DataFrame(rows)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def all_regions():
    return sorted(CENSUS_2020)


def central_difference(f, x, h=1e-5):
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for k in range(x.size):
        up, down = x.copy(), x.copy()
        up[k] += h
        down[k] -= h
        g[k] = (f(up) - f(down)) / (2 * h)
    return g


def max_relative_error(actual, expected):
    """Infinity-norm error relative to the largest expected component."""
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    return float(np.max(np.abs(actual - expected)) / max(np.max(np.abs(expected)), 1e-300))


def rk4_sir(beta, gamma, n, y0, days, h=1e-3):
    """Fixed-step RK4 for many parameter sets at once; rows of ``y0`` are (S, I, R)."""
    beta, gamma, n = (np.atleast_1d(np.asarray(v, dtype=np.float64))[:, None] for v in (beta, gamma, n))
    y = np.atleast_2d(np.asarray(y0, dtype=np.float64)).copy()

    def f(y):
        s, i = y[:, :1], y[:, 1:2]
        flow = beta * s * i / n
        recover = gamma * i
        return np.hstack([-flow, flow - recover, recover])

    steps = int(round(1.0 / h))
    out = [y.copy()]
    for _ in range(int(days) - 1):
        for _ in range(steps):
            k1 = f(y)
            k2 = f(y + 0.5 * h * k1)
            k3 = f(y + 0.5 * h * k2)
            k4 = f(y + h * k3)
            y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(y.copy())
    return np.stack(out, axis=1)  # (sets, days, 3)
