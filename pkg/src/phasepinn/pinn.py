"""Single- and multi-phase physics-informed SIR forecasters.

All losses are computed in normalised units: time is divided by the horizon
``T`` and populations by the baseline population estimate ``N0``.  In these
units the SIR equations keep their form with ``beta * T`` and ``gamma * T``
as rates and ``N / N0`` as population.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import nets as nn
from .diffengine import Dual, ParamVector, mean, mlp_apply, square, value_and_gradient
from .nets import Mlp, ParamHead, ScalingBounds, bounded
from .sir import SirParams

__all__ = [
    "PhaseBounds",
    "PhaseSchedule",
    "TrainConfig",
    "PinnModel",
    "TrainingError",
    "AdamState",
    "adam_step",
    "build_model",
    "data_loss",
    "residual_loss",
    "total_loss",
    "train",
    "TrainResult",
    "Forecast",
    "forecast",
]


class TrainingError(RuntimeError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, epoch: int, history: np.ndarray, what: str = "loss"):
        super().__init__(f"non-finite {what} at epoch {epoch}")
        self.epoch = epoch
        self.history = history


@dataclass(frozen=True)
class PhaseBounds:
    beta: ScalingBounds
    gamma: ScalingBounds
    n: ScalingBounds = ScalingBounds(1.0, 0.9)


@dataclass(frozen=True)
class PhaseSchedule:
    """Phase ``p`` covers days ``[phase_starts[p], phase_starts[p + 1])``."""

    phase_starts: Tuple[int, ...]
    bounds: Tuple[PhaseBounds, ...]

    def __post_init__(self):
        if not self.phase_starts or self.phase_starts[0] != 1:
            raise ValueError("the first phase must start on day 1")
        if any(b <= a for a, b in zip(self.phase_starts, self.phase_starts[1:])):
            raise ValueError(f"phase starts must increase strictly: {self.phase_starts}")
        if len(self.bounds) != len(self.phase_starts):
            raise ValueError("one PhaseBounds entry is needed per phase")

    @property
    def n_phases(self) -> int:
        return len(self.phase_starts)

    @classmethod
    def single_phase(cls) -> "PhaseSchedule":
        return cls((1,), (PhaseBounds(ScalingBounds(1.0, 0.6), ScalingBounds(1.0, 0.0)),))

    @classmethod
    def two_phase(cls, t0: int = 35, offset: int = 30) -> "PhaseSchedule":
        return cls(
            (1, t0 + offset),
            (
                PhaseBounds(ScalingBounds(1.0, 0.6), ScalingBounds(1.0, 0.01)),
                PhaseBounds(ScalingBounds(1.0, 0.999), ScalingBounds(2.0, 1.0)),
            ),
        )

    def phase_of(self, days, horizon: int) -> np.ndarray:
        """0-based phase index of every day."""
        days = np.asarray(days)
        if self.phase_starts[-1] > horizon:
            raise ValueError(f"phase start {self.phase_starts[-1]} lies beyond the horizon {horizon}")
        if days.size and (days.min() < 1 or days.max() > horizon):
            raise ValueError(f"collocation days must lie in [1, {horizon}]")
        return np.searchsorted(np.asarray(self.phase_starts), days, side="right") - 1


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-4
    epochs: int = 30_000
    seed: int = 0
    t0: int = 35
    horizon_t: int = 132
    lam: float = 1.0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if not 0 < self.t0 < self.horizon_t:
            raise ValueError("need 0 < t0 < horizon_t")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")


@dataclass(frozen=True)
class PinnModel:
    s_net: Mlp
    i_net: Mlp
    beta_heads: Tuple[ParamHead, ...]
    gamma_heads: Tuple[ParamHead, ...]
    n_head: Optional[ParamHead]
    schedule: PhaseSchedule
    lam: float
    baseline: SirParams  # beta0, gamma0, N0 from the mechanistic fit
    horizon: int
    infected_prefix: np.ndarray  # raw counts, input of every head

    @property
    def physics(self) -> bool:
        return self.n_head is not None

    @property
    def time_scale(self) -> float:
        return float(self.horizon)

    @property
    def count_scale(self) -> float:
        return float(self.baseline.n)

    def nets(self) -> Dict[str, Mlp]:
        out = {"s": self.s_net, "i": self.i_net}
        if self.physics:
            for p, h in enumerate(self.beta_heads, 1):
                out[f"beta{p}"] = h.net
            for p, h in enumerate(self.gamma_heads, 1):
                out[f"gamma{p}"] = h.net
            out["n"] = self.n_head.net
        return out

    def params(self) -> ParamVector:
        arrays = {}
        for name, net in self.nets().items():
            arrays.update(net.arrays(name))
        return ParamVector.from_arrays(arrays)

    def with_params(self, pv: ParamVector) -> "PinnModel":
        arrays = pv.blocks()
        upd = {
            "s_net": self.s_net.with_arrays(arrays, "s"),
            "i_net": self.i_net.with_arrays(arrays, "i"),
        }
        if self.physics:
            upd["beta_heads"] = tuple(
                replace(h, net=h.net.with_arrays(arrays, f"beta{p}")) for p, h in enumerate(self.beta_heads, 1)
            )
            upd["gamma_heads"] = tuple(
                replace(h, net=h.net.with_arrays(arrays, f"gamma{p}")) for p, h in enumerate(self.gamma_heads, 1)
            )
            upd["n_head"] = replace(self.n_head, net=self.n_head.net.with_arrays(arrays, "n"))
        return replace(self, **upd)

    def estimates(self) -> Dict[str, object]:
        """Head outputs in raw units: per-phase beta and gamma, shared N."""
        if not self.physics:
            return {"beta": [], "gamma": [], "n": self.baseline.n}
        return {
            "beta": [nn.head_estimate(h, self.infected_prefix) for h in self.beta_heads],
            "gamma": [nn.head_estimate(h, self.infected_prefix) for h in self.gamma_heads],
            "n": nn.head_estimate(self.n_head, self.infected_prefix),
        }


def _seeds(seed: int, count: int) -> List[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(count)]


def build_model(
    baseline: SirParams,
    infected_prefix,
    schedule: Optional[PhaseSchedule] = None,
    lam: float = 1.0,
    seed: int = 0,
    horizon: int = 132,
    physics: bool = True,
) -> PinnModel:
    """Fresh model around a mechanistic fit.

    The state networks get the same initial weights for a given seed whether
    or not the parameter heads exist, so the data-only baseline differs from
    the single-phase PINN only through the physics term.
    """
    schedule = schedule or PhaseSchedule.single_phase()
    prefix = np.asarray(infected_prefix, dtype=np.float64)
    m = schedule.n_phases
    seeds = _seeds(seed, 3 + 2 * m)
    s_net = nn.init_weights("type2", seeds[0])
    i_net = nn.init_weights("type2", seeds[1])
    if not physics:
        return PinnModel(s_net, i_net, (), (), None, schedule, 0.0, baseline, horizon, prefix)
    scale = baseline.n
    beta_heads = tuple(
        ParamHead(nn.init_weights("type1", seeds[3 + p]), b.beta, baseline.beta, scale)
        for p, b in enumerate(schedule.bounds)
    )
    gamma_heads = tuple(
        ParamHead(nn.init_weights("type1", seeds[3 + m + p]), b.gamma, baseline.gamma, scale)
        for p, b in enumerate(schedule.bounds)
    )
    # N is shared by all phases; it uses the first phase's bounds
    n_head = ParamHead(nn.init_weights("type1", seeds[2]), schedule.bounds[0].n, baseline.n, scale)
    return PinnModel(s_net, i_net, beta_heads, gamma_heads, n_head, schedule, lam, baseline, horizon, prefix)


# --------------------------------------------------------------------------
# loss assembly


@dataclass(frozen=True)
class _Batch:
    t_train: np.ndarray  # (t0, 1) normalised times
    s_obs: np.ndarray  # (t0, 1)
    i_obs: np.ndarray
    t_col: np.ndarray  # (L, 1)
    select: np.ndarray  # (t0, L) picks training rows out of the collocation rows
    masks: Tuple[np.ndarray, ...]  # one (L, 1) indicator per phase
    prefix: np.ndarray  # (1, 35) normalised head input


def _observed_sir(series, t0: int, n0: float) -> Tuple[np.ndarray, np.ndarray]:
    infected = np.asarray(series.infected, dtype=np.float64)[:t0]
    removed = np.asarray(series.recovered_removed, dtype=np.float64)[:t0]
    if infected.size < t0:
        raise ValueError(f"series has {infected.size} days, need t0 = {t0}")
    # susceptibles are not observed; they follow from N0 = S + I + R
    return n0 - infected - removed, infected


def make_batch(model: PinnModel, series, t0: int, collocation=None) -> _Batch:
    T = model.horizon
    days_col = np.arange(1, T + 1) if collocation is None else np.asarray(collocation)
    phase = model.schedule.phase_of(days_col, T)
    s_obs, i_obs = _observed_sir(series, t0, model.count_scale)
    train_days = np.arange(1, t0 + 1)
    select = (train_days[:, None] == days_col[None, :]).astype(np.float64)
    if not np.all(select.sum(axis=1) == 1):
        select = np.zeros((t0, days_col.size))
    masks = tuple((phase == p).astype(np.float64)[:, None] for p in range(model.schedule.n_phases))
    return _Batch(
        t_train=(train_days / model.time_scale)[:, None],
        s_obs=(s_obs / model.count_scale)[:, None],
        i_obs=(i_obs / model.count_scale)[:, None],
        t_col=(days_col / model.time_scale)[:, None],
        select=select,
        masks=masks,
        prefix=(model.infected_prefix / model.count_scale)[None, :],
    )


def _net_from(blocks, name: str, template: Mlp):
    n = len(template.weights)
    return (
        [blocks[f"{name}/{k}/W"] for k in range(n)],
        [blocks[f"{name}/{k}/b"] for k in range(n)],
        template.activations,
    )


def _apply(blocks, name, template, x):
    w, b, acts = _net_from(blocks, name, template)
    return mlp_apply(w, b, acts, x)


def _head(blocks, name, head: ParamHead, prefix, base):
    return bounded(_apply(blocks, name, head.net, prefix), base, head.bounds)


def _data_term(model, blocks, batch):
    s = _apply(blocks, "s", model.s_net, batch.t_train)
    i = _apply(blocks, "i", model.i_net, batch.t_train)
    return mean(square(s - batch.s_obs) + square(i - batch.i_obs))


def _rates(model, blocks, batch):
    """Normalised per-collocation-point beta and gamma, and N / N0."""
    T = model.time_scale
    b0, g0 = model.baseline.beta * T, model.baseline.gamma * T
    betas = [_head(blocks, f"beta{p}", h, batch.prefix, b0) for p, h in enumerate(model.beta_heads, 1)]
    gammas = [_head(blocks, f"gamma{p}", h, batch.prefix, g0) for p, h in enumerate(model.gamma_heads, 1)]
    n_rel = _head(blocks, "n", model.n_head, batch.prefix, 1.0)
    if len(betas) == 1:
        return betas[0], gammas[0], n_rel
    beta = sum(m * b for m, b in zip(batch.masks[1:], betas[1:])) + batch.masks[0] * betas[0]
    gamma = sum(m * g for m, g in zip(batch.masks[1:], gammas[1:])) + batch.masks[0] * gammas[0]
    return beta, gamma, n_rel


def _residual_terms(model, blocks, batch, s: Dual, i: Dual):
    beta, gamma, n_rel = _rates(model, blocks, batch)
    infection = beta * s.primal * i.primal / n_rel
    r_s = s.tangent + infection
    r_i = i.tangent - infection + gamma * i.primal
    return 0.5 * (mean(square(r_s)) + mean(square(r_i)))


def _state_duals(model, blocks, batch) -> Tuple[Dual, Dual]:
    col = batch.t_col
    seed = Dual(col, np.ones_like(col))
    return _apply(blocks, "s", model.s_net, seed), _apply(blocks, "i", model.i_net, seed)


def _total_graph(model: PinnModel, blocks, batch: _Batch, lam: float):
    if lam == 0.0 or not model.physics:
        return _data_term(model, blocks, batch)
    s, i = _state_duals(model, blocks, batch)
    # training days are a subset of the collocation grid: reuse those rows
    if batch.select.any():
        data = mean(
            square(batch.select @ s.primal - batch.s_obs) + square(batch.select @ i.primal - batch.i_obs)
        )
    else:
        data = _data_term(model, blocks, batch)
    return data + lam * _residual_terms(model, blocks, batch, s, i)


def data_loss(model: PinnModel, series, t0: int = 35) -> float:
    batch = make_batch(model, series, t0)
    return float(_data_term(model, model.params().blocks(), batch))


def residual_loss(model: PinnModel, collocation=None) -> float:
    """Physics residual over ``collocation`` days (default 1..T)."""
    if not model.physics:
        raise ValueError("model has no parameter heads")
    T = model.horizon
    days = np.arange(1, T + 1) if collocation is None else np.asarray(collocation)
    phase = model.schedule.phase_of(days, T)
    col = (days / model.time_scale)[:, None]
    batch = _Batch(
        t_train=col[:0],
        s_obs=col[:0],
        i_obs=col[:0],
        t_col=col,
        select=np.zeros((0, days.size)),
        masks=tuple((phase == p).astype(np.float64)[:, None] for p in range(model.schedule.n_phases)),
        prefix=(model.infected_prefix / model.count_scale)[None, :],
    )
    blocks = model.params().blocks()
    s, i = _state_duals(model, blocks, batch)
    return float(_residual_terms(model, blocks, batch, s, i))


def total_loss(model: PinnModel, series, config: TrainConfig) -> float:
    batch = make_batch(model, series, config.t0)
    return float(_total_graph(model, model.params().blocks(), batch, model.lam))


def loss_builder(model: PinnModel, series, t0: int, collocation=None) -> Callable:
    """Closure over tape variables suitable for :func:`diffengine.gradient`."""
    batch = make_batch(model, series, t0, collocation)
    return lambda blocks: _total_graph(model, blocks, batch, model.lam)


# --------------------------------------------------------------------------
# optimisation


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)


def adam_step(params, grads, state: AdamState, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns (new params, new state)."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError("parameter, gradient and moment shapes differ")
    step = state.step + 1
    m = beta1 * state.m + (1 - beta1) * grads
    v = beta2 * state.v + (1 - beta2) * grads * grads
    m_hat = m / (1 - beta1**step)
    v_hat = v / (1 - beta2**step)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(m, v, step)


@dataclass
class TrainResult:
    model: PinnModel
    history: np.ndarray


def train(
    model: PinnModel,
    series,
    config: TrainConfig,
    callback: Optional[Callable[[int, float], None]] = None,
) -> TrainResult:
    """Full-batch Adam on the total loss for ``config.epochs`` epochs.

    ``history[k]`` is the loss evaluated before the update of epoch ``k + 1``.
    """
    if model.horizon != config.horizon_t:
        model = replace(model, horizon=config.horizon_t)
    batch = make_batch(model, series, config.t0)
    pv = model.params()
    state = AdamState.zeros(len(pv))
    history = np.empty(config.epochs)
    builder = lambda blocks: _total_graph(model, blocks, batch, model.lam)
    for epoch in range(config.epochs):
        loss, grad = value_and_gradient(builder, pv)
        if not np.isfinite(loss):
            raise TrainingError(epoch + 1, history[:epoch].copy())
        if not np.all(np.isfinite(grad.values)):
            raise TrainingError(epoch + 1, history[:epoch].copy(), "gradient")
        history[epoch] = loss
        values, state = adam_step(pv.values, grad.values, state, config.lr)
        pv = pv.with_values(values)
        if callback is not None:
            callback(epoch + 1, loss)
    return TrainResult(model.with_params(pv), history)


# --------------------------------------------------------------------------
# forecasting


@dataclass(frozen=True)
class Forecast:
    days: np.ndarray
    s: np.ndarray
    i: np.ndarray
    r: np.ndarray
    n: float


def forecast(model: PinnModel, days=None) -> Forecast:
    """De-normalised S, I and R = N - S - I (all clamped at zero)."""
    days = np.arange(1, model.horizon + 1) if days is None else np.asarray(days)
    t = (days / model.time_scale)[:, None]
    scale = model.count_scale
    s = np.maximum(nn.forward(model.s_net, t)[:, 0] * scale, 0.0)
    i = np.maximum(nn.forward(model.i_net, t)[:, 0] * scale, 0.0)
    n_hat = float(model.estimates()["n"])
    r = np.maximum(n_hat - s - i, 0.0)
    return Forecast(days, s, i, r, n_hat)
