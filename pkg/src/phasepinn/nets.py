"""Fully connected networks and tanh-bounded parameter heads."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .diffengine import mlp_apply, tanh

# (layer widths, hidden activation)
NET_TYPES: Dict[str, Tuple[Tuple[int, ...], str]] = {
    # maps the observed infected prefix to one SIR parameter
    "type1": ((35, 64, 64, 1), "tanh"),
    # maps time to S(t) or I(t)
    "type2": ((1, 32, 32, 32, 32, 1), "celu"),
}

_MAGIC = b"PPNN"


@dataclass(frozen=True)
class Mlp:
    """Affine layers with ``weights[k]`` of shape (fan_in, fan_out); last layer is linear."""

    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    activations: Tuple[str, ...]
    seed: Optional[int] = None

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("weights, biases and activations must have equal length")
        if not self.weights:
            raise ValueError("an Mlp needs at least one layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {k}: weight {w.shape} does not match bias {b.shape}")
            if k and self.weights[k - 1].shape[1] != w.shape[0]:
                raise ValueError(
                    f"layer {k}: fan_in {w.shape[0]} != previous fan_out {self.weights[k - 1].shape[1]}"
                )

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def dims(self) -> Tuple[int, ...]:
        return (self.input_dim,) + tuple(w.shape[1] for w in self.weights)

    def arrays(self, prefix: str) -> Dict[str, np.ndarray]:
        out = {}
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}/{k}/W"] = w
            out[f"{prefix}/{k}/b"] = b
        return out

    def with_arrays(self, arrays: Mapping[str, np.ndarray], prefix: str) -> "Mlp":
        n = len(self.weights)
        return Mlp(
            tuple(np.array(arrays[f"{prefix}/{k}/W"]) for k in range(n)),
            tuple(np.array(arrays[f"{prefix}/{k}/b"]) for k in range(n)),
            self.activations,
            self.seed,
        )


def from_layers(layers: Sequence[Tuple[Sequence, Sequence, str]]) -> Mlp:
    """Build an Mlp from ``(weight, bias, activation)`` triples."""
    return Mlp(
        tuple(np.atleast_2d(np.asarray(w, dtype=np.float64)) for w, _, _ in layers),
        tuple(np.atleast_1d(np.asarray(b, dtype=np.float64)) for _, b, _ in layers),
        tuple(act for _, _, act in layers),
    )


def init_weights(shape: str, seed: int) -> Mlp:
    """Seeded Glorot-uniform weights and zero biases for a table network type."""
    try:
        dims, hidden = NET_TYPES[shape]
    except KeyError:
        raise ValueError(f"unknown network type {shape!r}; expected one of {sorted(NET_TYPES)}") from None
    rng = np.random.default_rng(seed)
    weights, biases, acts = [], [], []
    for k, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
        acts.append("linear" if k == len(dims) - 2 else hidden)
    return Mlp(tuple(weights), tuple(biases), tuple(acts), seed)


def zeros_like(net: Mlp) -> Mlp:
    return Mlp(
        tuple(np.zeros_like(w) for w in net.weights),
        tuple(np.zeros_like(b) for b in net.biases),
        net.activations,
        net.seed,
    )


def forward(net: Mlp, x) -> np.ndarray:
    """Evaluate ``net`` on one input vector (1-D) or a batch of rows (2-D)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.input_dim:
        raise ValueError(f"expected input of width {net.input_dim}, got {x.shape[-1]}")
    return mlp_apply(net.weights, net.biases, net.activations, x)


@dataclass(frozen=True)
class ScalingBounds:
    """Head output is confined to ``base * [a - b, a + b]``."""

    a: float = 1.0
    b: float = 0.0

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ValueError(f"scaling bounds must be non-negative, got a={self.a}, b={self.b}")

    def interval(self, base: float) -> Tuple[float, float]:
        lo, hi = base * (self.a - self.b), base * (self.a + self.b)
        return (min(lo, hi), max(lo, hi))


def bounded(raw, base: float, bounds: ScalingBounds):
    """``base * (a + b * tanh(raw))``; ``raw`` may be an array or a tape variable."""
    return base * (bounds.a + bounds.b * tanh(raw))


@dataclass(frozen=True)
class ParamHead:
    """Type-1 network refining one baseline SIR parameter."""

    net: Mlp
    bounds: ScalingBounds
    base: float
    # the infected prefix is divided by this before entering the network
    input_scale: float = 1.0


def head_estimate(head: ParamHead, infected_prefix) -> float:
    prefix = np.asarray(infected_prefix, dtype=np.float64)
    if prefix.ndim != 1 or prefix.size != head.net.input_dim:
        raise ValueError(
            f"head expects a prefix of length {head.net.input_dim}, got shape {prefix.shape}"
        )
    raw = forward(head.net, prefix / head.input_scale)
    return float(bounded(raw[0], head.base, head.bounds))


# checkpoint format: magic, uint64 header length, JSON header, float64 LE payload

def save_nets(path, nets: Mapping[str, Mlp], extra: Optional[dict] = None) -> None:
    entries, chunks = [], []
    for name, net in nets.items():
        entries.append(
            {
                "name": name,
                "seed": net.seed,
                "activations": list(net.activations),
                "shapes": [list(w.shape) for w in net.weights],
            }
        )
        for w, b in zip(net.weights, net.biases):
            chunks.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
            chunks.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    header = {"format": "phasepinn-nets", "version": 1, "nets": entries}
    if extra:
        header["extra"] = extra
    raw_header = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(raw_header)))
        fh.write(raw_header)
        for chunk in chunks:
            fh.write(chunk)


def load_nets(path) -> Tuple[Dict[str, Mlp], dict]:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not a network checkpoint")
    (hlen,) = struct.unpack("<Q", data[4:12])
    header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    payload = np.frombuffer(data[12 + hlen :], dtype="<f8")
    nets, pos = {}, 0
    for entry in header["nets"]:
        weights, biases = [], []
        for fan_in, fan_out in entry["shapes"]:
            weights.append(payload[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out).copy())
            pos += fan_in * fan_out
            biases.append(payload[pos : pos + fan_out].copy())
            pos += fan_out
        nets[entry["name"]] = Mlp(tuple(weights), tuple(biases), tuple(entry["activations"]), entry["seed"])
    if pos != payload.size:
        raise ValueError(f"{path}: payload has {payload.size - pos} trailing values")
    return nets, header.get("extra", {})
