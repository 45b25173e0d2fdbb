"""Layers for graph U-Nets: per-node weighted aggregation over adjacency
windows, clique pooling (max or average), unpooling, and channel concat.

Feature arrays have shape (n, c) for a single sample or (batch, n, c); every
operation accepts both. Backward passes are hand-written reverse-mode rules;
for batched input the parameter gradients are summed over the batch, which is
what a batch-mean loss needs after scaling its upstream seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Adjacency


def leaky_relu(x: np.ndarray, slope: float = 0.3) -> np.ndarray:
    return np.where(x >= 0.0, x, slope * x)


_ACTIVATIONS = ("leaky_relu", "linear")
_AGGREGATORS = ("max", "avg")


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise ValueError(f"features must be (n, c) or (batch, n, c), got ndim={x.ndim}")


def _unbatch(x: np.ndarray, squeeze: bool) -> np.ndarray:
    return x[0] if squeeze else x


@dataclass
class LayerGradients:
    d_weights: np.ndarray
    d_biases: np.ndarray
    d_input: np.ndarray


class AggregationLayer:
    """Aggregates each node's window of neighbor features through its own
    unshared weight block:

        out[i, a] = act(bias[i, a] + sum_{j in window(i)} sum_b w[i, j, a, b] * x[j, b])

    Windows come from an adjacency matrix row (self-loop included), so the
    layer is local; weights are stored per directed window entry with shape
    (window_entries, c_in, c_out).
    """

    def __init__(
        self,
        indptr: np.ndarray,
        sources: np.ndarray,
        c_in: int,
        c_out: int,
        *,
        activation: str = "leaky_relu",
        slope: float = 0.3,
        weights: np.ndarray | None = None,
        biases: np.ndarray | None = None,
        dtype=np.float64,
    ):
        if activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}")
        if c_in < 1 or c_out < 1:
            raise ValueError("channel counts must be positive")
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.sources = np.ascontiguousarray(sources, dtype=np.int64)
        self.n = len(self.indptr) - 1
        counts = np.diff(self.indptr)
        if (counts < 1).any():
            raise ValueError("every node needs at least its self-loop in the window")
        self.c_in = int(c_in)
        self.c_out = int(c_out)
        self.activation = activation
        self.slope = float(slope)
        self.dtype = np.dtype(dtype)
        self.targets = np.repeat(np.arange(self.n, dtype=np.int64), counts)
        order = np.argsort(self.sources, kind="stable")
        srt = self.sources[order]
        starts = np.flatnonzero(np.r_[True, srt[1:] != srt[:-1]])
        if len(starts) != self.n:
            raise ValueError("windows must cover every node as a source")
        self.src_order = order
        self.src_starts = starts
        n_entries = self.sources.size
        if weights is None:
            weights = np.zeros((n_entries, c_in, c_out), dtype=self.dtype)
        if biases is None:
            biases = np.zeros((self.n, c_out), dtype=self.dtype)
        if weights.shape != (n_entries, c_in, c_out):
            raise ValueError("weights shape mismatch")
        if biases.shape != (self.n, c_out):
            raise ValueError("biases shape mismatch")
        self.weights = weights
        self.biases = biases

    @classmethod
    def from_adjacency(cls, adjacency: Adjacency, c_in: int, c_out: int, **kwargs) -> "AggregationLayer":
        return cls(adjacency.indptr, adjacency.indices, c_in, c_out, **kwargs)

    @property
    def param_count(self) -> int:
        return self.weights.size + self.biases.size

    def window_sizes(self) -> np.ndarray:
        return np.diff(self.indptr)

    def init_params(self, rng: np.random.Generator) -> None:
        """Scaled-uniform weights with a per-node bound sqrt(6 / (|window|*c_in + c_out));
        biases start at zero."""
        sizes = self.window_sizes()
        bound = np.sqrt(6.0 / (sizes * self.c_in + self.c_out))
        per_entry = np.repeat(bound, sizes)
        draw = rng.uniform(-1.0, 1.0, size=self.weights.shape)
        self.weights[...] = draw * per_entry[:, None, None]
        self.biases[...] = 0.0

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        x3, squeeze = _as_batch(x)
        if x3.shape[1] != self.n or x3.shape[2] != self.c_in:
            raise ValueError(
                f"expected features ({self.n}, {self.c_in}), got {x3.shape[1:]}"
            )
        gathered = x3[:, self.sources, :]
        per_entry = np.einsum("eio,bei->beo", self.weights, gathered)
        pre = np.add.reduceat(per_entry, self.indptr[:-1], axis=1)
        pre += self.biases
        if self.activation == "leaky_relu":
            out = leaky_relu(pre, self.slope)
        else:
            out = pre
        return _unbatch(out, squeeze), (x3, pre, squeeze)

    def backward(self, cache: tuple, upstream: np.ndarray) -> LayerGradients:
        x3, pre, squeeze = cache
        up3, _ = _as_batch(upstream)
        if up3.shape != (x3.shape[0], self.n, self.c_out):
            raise ValueError("upstream gradient shape mismatch")
        if self.activation == "leaky_relu":
            dpre = up3 * np.where(pre >= 0.0, 1.0, self.slope)
        else:
            dpre = up3
        d_biases = dpre.sum(axis=0)
        gathered = x3[:, self.sources, :]
        dpre_entries = dpre[:, self.targets, :]
        d_weights = np.einsum("bei,beo->eio", gathered, dpre_entries)
        d_entries = np.einsum("eio,beo->bei", self.weights, dpre_entries)
        d_input = np.add.reduceat(d_entries[:, self.src_order, :], self.src_starts, axis=1)
        return LayerGradients(d_weights, d_biases, _unbatch(d_input, squeeze))


class Partition:
    """Disjoint cover of nodes 0..n-1 by subgraphs, with the gather/scatter
    index arrays pooling layers need. Subgraph order is preserved (it defines
    pooled node numbering); members are kept sorted ascending."""

    def __init__(self, subgraphs, n_parent: int | None = None):
        members = []
        for s in subgraphs:
            arr = np.asarray(sorted(int(v) for v in np.asarray(s).ravel()), dtype=np.int64)
            if arr.size == 0:
                raise ValueError("empty subgraph in partition")
            if len(np.unique(arr)) != arr.size:
                raise ValueError("subgraph repeats a node")
            members.append(arr)
        total = sum(m.size for m in members)
        perm = np.concatenate(members) if members else np.empty(0, dtype=np.int64)
        inferred = int(perm.max()) + 1 if perm.size else 0
        n = inferred if n_parent is None else int(n_parent)
        if total != n or (perm.size and (len(np.unique(perm)) != n or perm.min() < 0 or perm.max() >= n)):
            raise ValueError("subgraphs must partition nodes 0..n-1 exactly")
        self.subgraphs = members
        self.n_parent = n
        self.n_pooled = len(members)
        self.perm = perm
        sizes = np.array([m.size for m in members], dtype=np.int64)
        self.sizes = sizes
        self.starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]) if members else np.empty(0, np.int64)
        owner = np.empty(n, dtype=np.int64)
        for si, m in enumerate(members):
            owner[m] = si
        self.owner = owner


def _as_partition(subgraphs, n_parent: int | None = None) -> Partition:
    if isinstance(subgraphs, Partition):
        if n_parent is not None and subgraphs.n_parent != n_parent:
            raise ValueError("partition does not match feature node count")
        return subgraphs
    return Partition(subgraphs, n_parent=n_parent)


def gpool_forward(subgraphs, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel max over each subgraph. Returns pooled features and the
    winning parent node index per (pooled node, channel); ties go to the
    lowest parent index."""
    x3, squeeze = _as_batch(x)
    part = _as_partition(subgraphs, n_parent=x3.shape[1])
    b, _, c = x3.shape
    xp = x3[:, part.perm, :]
    pooled = np.empty((b, part.n_pooled, c), dtype=x3.dtype)
    argmax = np.empty((b, part.n_pooled, c), dtype=np.int64)
    for s in range(part.n_pooled):
        st = part.starts[s]
        en = st + part.sizes[s]
        seg = xp[:, st:en, :]
        am = np.argmax(seg, axis=1)
        pooled[:, s, :] = np.take_along_axis(seg, am[:, None, :], axis=1)[:, 0, :]
        argmax[:, s, :] = part.perm[st + am]
    return _unbatch(pooled, squeeze), _unbatch(argmax, squeeze)


def gpool_backward(argmax_indices: np.ndarray, upstream: np.ndarray, n_parent: int) -> np.ndarray:
    """Route each pooled gradient entry to the parent node that won the max."""
    up3, squeeze = _as_batch(upstream)
    am3, _ = _as_batch(argmax_indices)
    if up3.shape != am3.shape:
        raise ValueError("upstream and argmax shapes disagree (stale cache?)")
    if am3.size and (am3.min() < 0 or am3.max() >= n_parent):
        raise ValueError("argmax index out of range for parent graph")
    b, _, c = up3.shape
    d_input = np.zeros((b, n_parent, c), dtype=up3.dtype)
    bidx = np.arange(b)[:, None, None]
    cidx = np.arange(c)[None, None, :]
    np.add.at(d_input, (bidx, am3, cidx), up3)
    return _unbatch(d_input, squeeze)


def gpool_avg_forward(subgraphs, x: np.ndarray) -> np.ndarray:
    x3, squeeze = _as_batch(x)
    part = _as_partition(subgraphs, n_parent=x3.shape[1])
    xp = x3[:, part.perm, :]
    sums = np.add.reduceat(xp, part.starts, axis=1)
    return _unbatch(sums / part.sizes[:, None], squeeze)


def gpool_avg_backward(subgraphs, upstream: np.ndarray, n_parent: int) -> np.ndarray:
    up3, squeeze = _as_batch(upstream)
    part = _as_partition(subgraphs, n_parent=n_parent)
    if up3.shape[1] != part.n_pooled:
        raise ValueError("upstream node count does not match partition")
    scaled = up3 / part.sizes[None, :, None]
    return _unbatch(scaled[:, part.owner, :], squeeze)


def gunpool_forward(subgraphs, x: np.ndarray) -> np.ndarray:
    """Replicate each pooled node's features onto all its subgraph members."""
    x3, squeeze = _as_batch(x)
    part = _as_partition(subgraphs)
    if x3.shape[1] != part.n_pooled:
        raise ValueError("pooled node count does not match partition")
    return _unbatch(x3[:, part.owner, :], squeeze)


def gunpool_backward(subgraphs, upstream: np.ndarray) -> np.ndarray:
    up3, squeeze = _as_batch(upstream)
    part = _as_partition(subgraphs, n_parent=up3.shape[1])
    d_input = np.add.reduceat(up3[:, part.perm, :], part.starts, axis=1)
    return _unbatch(d_input, squeeze)


def concat(d_unpooled: np.ndarray, d_skip: np.ndarray) -> np.ndarray:
    """Channel concatenation with the unpooled features first, then the skip."""
    a = np.asarray(d_unpooled)
    b = np.asarray(d_skip)
    if a.ndim != b.ndim or a.shape[:-1] != b.shape[:-1]:
        raise ValueError("concat operands must agree on node count and batching")
    return np.concatenate([a, b], axis=-1)


def concat_backward(upstream: np.ndarray, c_unpooled: int) -> tuple[np.ndarray, np.ndarray]:
    upstream = np.asarray(upstream)
    if not 0 <= c_unpooled <= upstream.shape[-1]:
        raise ValueError("invalid split point")
    return upstream[..., :c_unpooled], upstream[..., c_unpooled:]


class PoolLayer:
    """Graph pooling over a fixed partition; max (with argmax routing) or avg."""

    def __init__(self, partition: Partition, aggregator: str = "max"):
        if aggregator not in _AGGREGATORS:
            raise ValueError(f"aggregator must be one of {_AGGREGATORS}")
        self.partition = partition
        self.aggregator = aggregator

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        if self.aggregator == "max":
            return gpool_forward(self.partition, x)
        return gpool_avg_forward(self.partition, x), None

    def backward(self, cache: np.ndarray | None, upstream: np.ndarray) -> np.ndarray:
        if self.aggregator == "max":
            return gpool_backward(cache, upstream, self.partition.n_parent)
        return gpool_avg_backward(self.partition, upstream, self.partition.n_parent)


class UnpoolLayer:
    def __init__(self, partition: Partition):
        self.partition = partition

    def forward(self, x: np.ndarray) -> np.ndarray:
        return gunpool_forward(self.partition, x)

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        return gunpool_backward(self.partition, upstream)
