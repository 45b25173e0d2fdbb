"""Graph U-Net assembly and end-to-end forward/backward passes.

The architecture mirrors a convolutional U-Net on an unstructured graph:
per level, `aggs_per_level` aggregation layers followed by a clique pooling;
`aggs_per_level` aggregation layers on the coarsest graph; then per level an
unpooling concatenated with the skip captured just before the matching
pooling (unpooled channels first), followed by `aggs_per_level` aggregation
layers. A final single aggregation layer with linear activation maps back to
`out_channels` on the full-resolution graph.

All parameters live in one flat vector; layer weight/bias arrays are views
into it, so optimizer updates need no repacking.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .graph import Adjacency, PoolPlan, adjacency_power, build_pool_plan
from .layers import (
    AggregationLayer,
    Partition,
    PoolLayer,
    UnpoolLayer,
    concat,
    concat_backward,
)

_MODEL_MAGIC = b"GUNETB01"


@dataclass(frozen=True)
class ModelConfig:
    num_poolings: int
    aggs_per_level: int
    window_power: int
    channels_per_level: tuple[int, ...]
    in_channels: int
    out_channels: int
    activation: str = "leaky_relu"
    leaky_slope: float = 0.3
    aggregator: str = "max"

    def __post_init__(self):
        object.__setattr__(self, "channels_per_level", tuple(int(c) for c in self.channels_per_level))
        if self.num_poolings < 1:
            raise ValueError("num_poolings must be >= 1")
        if self.aggs_per_level < 1:
            raise ValueError("aggs_per_level must be >= 1")
        if self.window_power < 1:
            raise ValueError("window_power must be >= 1")
        if len(self.channels_per_level) != self.num_poolings + 1:
            raise ValueError("channels_per_level needs num_poolings + 1 entries")
        if min(self.channels_per_level) < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.activation not in ("leaky_relu", "linear"):
            raise ValueError("activation must be 'leaky_relu' or 'linear'")
        if self.aggregator not in ("max", "avg"):
            raise ValueError("aggregator must be 'max' or 'avg'")

    def to_dict(self) -> dict:
        return {
            "num_poolings": self.num_poolings,
            "aggs_per_level": self.aggs_per_level,
            "window_power": self.window_power,
            "channels_per_level": list(self.channels_per_level),
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "activation": self.activation,
            "leaky_slope": self.leaky_slope,
            "aggregator": self.aggregator,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            num_poolings=d["num_poolings"],
            aggs_per_level=d["aggs_per_level"],
            window_power=d["window_power"],
            channels_per_level=tuple(d["channels_per_level"]),
            in_channels=d["in_channels"],
            out_channels=d["out_channels"],
            activation=d.get("activation", "leaky_relu"),
            leaky_slope=d.get("leaky_slope", 0.3),
            aggregator=d.get("aggregator", "max"),
        )


@dataclass
class _Op:
    kind: str  # "agg" | "pool" | "unpool_concat"
    layer: object
    level: int = -1
    c_unpooled: int = 0
    w_offset: int = 0
    b_offset: int = 0


@dataclass
class ModelCache:
    caches: list


class GraphUNet:
    def __init__(self, config, pool_plan, ops, theta, mesh_digest, dtype):
        self.config = config
        self.pool_plan = pool_plan
        self.ops = ops
        self.theta = theta
        self.mesh_digest = mesh_digest
        self.dtype = np.dtype(dtype)

    @property
    def n_nodes(self) -> int:
        return self.pool_plan.levels[0].parent.n

    def agg_layers(self) -> list[AggregationLayer]:
        return [op.layer for op in self.ops if op.kind == "agg"]

    def predict(self, x: np.ndarray) -> np.ndarray:
        return model_forward(self, x)[0]


def _plan_for(config: ModelConfig, adjacency, pool_plan, pool_trials, mesh_digest):
    if pool_plan is None:
        return build_pool_plan(
            adjacency, config.num_poolings, trials=pool_trials, mesh_digest=mesh_digest
        )
    if pool_plan.num_levels != config.num_poolings:
        raise ValueError("pool plan level count does not match config")
    if not pool_plan.levels[0].parent.equals(adjacency):
        raise ValueError("pool plan was built for a different graph")
    return pool_plan


def build_model(
    config: ModelConfig,
    adjacency: Adjacency,
    seed: int,
    *,
    pool_plan: PoolPlan | None = None,
    pool_trials: int = 1000,
    mesh_digest: str | None = None,
    dtype=np.float64,
) -> GraphUNet:
    """Assemble the U-Net on `adjacency` and initialize parameters from `seed`.

    Aggregation windows at every level use the level adjacency raised to
    config.window_power; pooling partitions always come from the un-powered
    level adjacency (via the pool plan).
    """
    plan = _plan_for(config, adjacency, pool_plan, pool_trials, mesh_digest)
    if mesh_digest is None:
        mesh_digest = plan.mesh_digest
    num_levels = config.num_poolings
    level_adj = [plan.levels[i].parent for i in range(num_levels)]
    level_adj.append(plan.levels[num_levels - 1].pooled)
    supports = [
        adjacency_power(a, config.window_power) if config.window_power > 1 else a
        for a in level_adj
    ]
    partitions = [
        Partition(plan.levels[i].subgraphs, n_parent=level_adj[i].n) for i in range(num_levels)
    ]

    descriptors: list[tuple] = []
    channels = config.channels_per_level
    c_prev = config.in_channels
    for level in range(num_levels):
        for _ in range(config.aggs_per_level):
            descriptors.append(("agg", level, c_prev, channels[level], config.activation))
            c_prev = channels[level]
        descriptors.append(("pool", level, 0, 0, ""))
    for _ in range(config.aggs_per_level):
        descriptors.append(("agg", num_levels, c_prev, channels[num_levels], config.activation))
        c_prev = channels[num_levels]
    for level in reversed(range(num_levels)):
        descriptors.append(("unpool_concat", level, c_prev, 0, ""))
        c_prev = c_prev + channels[level]
        for _ in range(config.aggs_per_level):
            descriptors.append(("agg", level, c_prev, channels[level], config.activation))
            c_prev = channels[level]
    descriptors.append(("agg", 0, c_prev, config.out_channels, "linear"))

    total = 0
    for kind, level, c_in, c_out, _ in descriptors:
        if kind == "agg":
            total += supports[level].nnz * c_in * c_out + supports[level].n * c_out
    theta = np.zeros(total, dtype=dtype)

    rng = np.random.default_rng(seed)
    ops: list[_Op] = []
    offset = 0
    for kind, level, c_in, c_out, act in descriptors:
        if kind == "agg":
            support = supports[level]
            w_size = support.nnz * c_in * c_out
            b_size = support.n * c_out
            weights = theta[offset : offset + w_size].reshape(support.nnz, c_in, c_out)
            biases = theta[offset + w_size : offset + w_size + b_size].reshape(support.n, c_out)
            layer = AggregationLayer(
                support.indptr,
                support.indices,
                c_in,
                c_out,
                activation=act,
                slope=config.leaky_slope,
                weights=weights,
                biases=biases,
                dtype=dtype,
            )
            layer.init_params(rng)
            ops.append(_Op("agg", layer, level=level, w_offset=offset, b_offset=offset + w_size))
            offset += w_size + b_size
        elif kind == "pool":
            ops.append(_Op("pool", PoolLayer(partitions[level], config.aggregator), level=level))
        else:
            ops.append(_Op("unpool_concat", UnpoolLayer(partitions[level]), level=level, c_unpooled=c_in))
    return GraphUNet(config, plan, ops, theta, mesh_digest, dtype)


def count_parameters(model: GraphUNet) -> int:
    return int(model.theta.size)


def model_forward(model: GraphUNet, x: np.ndarray) -> tuple[np.ndarray, ModelCache]:
    """Run the network; returns (prediction, cache for the backward pass)."""
    x = np.asarray(x)
    if x.shape[-2] != model.n_nodes or x.shape[-1] != model.config.in_channels:
        raise ValueError(
            f"expected input (..., {model.n_nodes}, {model.config.in_channels}), got {x.shape}"
        )
    h = x.astype(model.dtype, copy=False)
    skips: dict[int, np.ndarray] = {}
    caches: list = []
    for op in model.ops:
        if op.kind == "agg":
            h, cache = op.layer.forward(h)
            caches.append(cache)
        elif op.kind == "pool":
            skips[op.level] = h
            h, cache = op.layer.forward(h)
            caches.append(cache)
        else:
            unpooled = op.layer.forward(h)
            h = concat(unpooled, skips[op.level])
            caches.append(None)
    return h, ModelCache(caches)


def model_backward(model: GraphUNet, cache: ModelCache, upstream: np.ndarray) -> np.ndarray:
    """Reverse-mode pass; returns the gradient aligned with model.theta."""
    grad = np.zeros_like(model.theta)
    g = np.asarray(upstream).astype(model.dtype, copy=False)
    skip_grads: dict[int, np.ndarray] = {}
    for op, op_cache in zip(reversed(model.ops), reversed(cache.caches)):
        if op.kind == "agg":
            lg = op.layer.backward(op_cache, g)
            w_size = op.layer.weights.size
            grad[op.w_offset : op.w_offset + w_size] = lg.d_weights.ravel()
            grad[op.b_offset : op.b_offset + lg.d_biases.size] = lg.d_biases.ravel()
            g = lg.d_input
        elif op.kind == "pool":
            g = op.layer.backward(op_cache, g) + skip_grads.pop(op.level)
        else:
            d_unpooled, d_skip = concat_backward(g, op.c_unpooled)
            skip_grads[op.level] = d_skip
            g = op.layer.backward(d_unpooled)
    return grad


def save_model(model: GraphUNet, path, trainer: dict | None = None) -> None:
    """Versioned binary container: magic, JSON header (config, digests,
    training progress), then float64 little-endian parameter blocks in build
    order, then optional optimizer moment vectors."""
    header = {
        "format": 1,
        "config": model.config.to_dict(),
        "mesh_digest": model.mesh_digest,
        "plan_digest": model.pool_plan.digest(),
        "param_count": int(model.theta.size),
        "dtype": model.dtype.name,
        "trainer": None,
    }
    moments = b""
    if trainer is not None:
        meta = dict(trainer)
        m = np.ascontiguousarray(meta.pop("m"), dtype="<f8")
        v = np.ascontiguousarray(meta.pop("v"), dtype="<f8")
        header["trainer"] = meta
        moments = m.tobytes() + v.tobytes()
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(model.theta, dtype="<f8").tobytes())
        fh.write(moments)


def load_model(path, pool_plan: PoolPlan, dtype=None) -> tuple[GraphUNet, dict | None]:
    """Load a model against a pool plan whose digest must match the file."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MODEL_MAGIC))
        if magic != _MODEL_MAGIC:
            raise ValueError("not a model file (bad magic)")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode())
        if header.get("format") != 1:
            raise ValueError(f"unsupported model format {header.get('format')}")
        if header["plan_digest"] != pool_plan.digest():
            raise ValueError(
                "model was trained against a different pool plan "
                f"(file digest {header['plan_digest'][:12]}..., plan {pool_plan.digest()[:12]}...)"
            )
        config = ModelConfig.from_dict(header["config"])
        count = header["param_count"]
        theta = np.frombuffer(fh.read(count * 8), dtype="<f8").copy()
        trainer = header.get("trainer")
        if trainer is not None:
            trainer = dict(trainer)
            trainer["m"] = np.frombuffer(fh.read(count * 8), dtype="<f8").copy()
            trainer["v"] = np.frombuffer(fh.read(count * 8), dtype="<f8").copy()
    if dtype is None:
        dtype = np.dtype(header.get("dtype", "float64"))
    model = build_model(
        config,
        pool_plan.levels[0].parent,
        seed=0,
        pool_plan=pool_plan,
        mesh_digest=header.get("mesh_digest"),
        dtype=dtype,
    )
    if theta.size != model.theta.size:
        raise ValueError("parameter count in file does not match rebuilt model")
    model.theta[...] = theta
    if trainer is not None:
        trainer["m"] = trainer["m"].astype(dtype)
        trainer["v"] = trainer["v"].astype(dtype)
    return model, trainer
