"""Mesh graphs: boolean adjacency matrices in CSR form, boolean powers,
and greedy clique partitions used to coarsen a graph level by level.

Adjacency matrices are symmetric with a unit diagonal (every node is its own
neighbor), so a node's aggregation window is simply its CSR row.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh
from .util import sha256_hex

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Adjacency:
    """Symmetric boolean adjacency with self-loops, stored as CSR index arrays."""

    n: int
    indptr: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "indptr", np.ascontiguousarray(self.indptr, dtype=np.int64))
        object.__setattr__(self, "indices", np.ascontiguousarray(self.indices, dtype=np.int64))

    @classmethod
    def from_edges(cls, n: int, rows, cols) -> "Adjacency":
        """Build from (row, col) index pairs; duplicates are merged and the
        result is validated (symmetry, self-loops, index range)."""
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        if rows.shape != cols.shape:
            raise ValueError("rows and cols must have equal length")
        if rows.size and (rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= n):
            raise ValueError("edge index out of range")
        data = np.ones(rows.size, dtype=np.int64)
        mat = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
        mat.sum_duplicates()
        mat.sort_indices()
        adj = cls(n, mat.indptr.astype(np.int64), mat.indices.astype(np.int64))
        adj.verify()
        return adj

    @classmethod
    def from_dense(cls, dense) -> "Adjacency":
        dense = np.asarray(dense)
        if dense.ndim != 2 or dense.shape[0] != dense.shape[1]:
            raise ValueError("dense adjacency must be square")
        rows, cols = np.nonzero(dense)
        return cls.from_edges(dense.shape[0], rows, cols)

    @classmethod
    def identity(cls, n: int) -> "Adjacency":
        return cls(n, np.arange(n + 1, dtype=np.int64), np.arange(n, dtype=np.int64))

    def verify(self) -> None:
        """Check the structural invariants; raises ValueError on violation."""
        if self.indptr.shape != (self.n + 1,) or self.indptr[0] != 0:
            raise ValueError("malformed indptr")
        if (np.diff(self.indptr) < 0).any() or self.indptr[-1] != self.indices.size:
            raise ValueError("malformed indptr")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= self.n):
            raise ValueError("column index out of range")
        for i in range(self.n):
            row = self.neighbors(i)
            if (np.diff(row) <= 0).any():
                raise ValueError(f"row {i} is not strictly sorted")
            if i not in row:
                raise ValueError(f"node {i} is missing its self-loop")
        mat = self.to_scipy()
        if (mat != mat.T).nnz:
            raise ValueError("adjacency is not symmetric")

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def row_counts(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def to_scipy(self) -> sp.csr_matrix:
        data = np.ones(self.indices.size, dtype=np.int64)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n), dtype=bool)
        for i in range(self.n):
            out[i, self.neighbors(i)] = True
        return out

    def equals(self, other: "Adjacency") -> bool:
        return (
            self.n == other.n
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )

    def digest(self) -> str:
        payload = b"%d\n" % self.n + self.indptr.tobytes() + self.indices.tobytes()
        return sha256_hex(payload)


def adjacency_from_mesh(mesh: Mesh) -> Adjacency:
    """Nodes of an element are mutually interconnected; self-loops included."""
    if mesh.n_nodes == 0:
        return Adjacency.identity(0)
    elems = mesh.elements
    k = elems.shape[1] if elems.size else 1
    rows = [np.repeat(elems, k, axis=1).ravel(), np.arange(mesh.n_nodes)]
    cols = [np.tile(elems, (1, k)).ravel(), np.arange(mesh.n_nodes)]
    return Adjacency.from_edges(mesh.n_nodes, np.concatenate(rows), np.concatenate(cols))


def adjacency_power(a: Adjacency, k: int) -> Adjacency:
    """Boolean k-th power: connects nodes within k hops. Window growth for
    aggregation layers; the unit diagonal is preserved."""
    if k < 1:
        raise ValueError("power must be a positive integer")
    base = a.to_scipy()
    result = base
    for _ in range(k - 1):
        result = result @ base
        result.data[:] = 1
    result = result.tocsr()
    result.sort_indices()
    return Adjacency(a.n, result.indptr.astype(np.int64), result.indices.astype(np.int64))


def _subgraphs_for_seed(a: Adjacency, seed: int, row_sets: list[set]) -> list[np.ndarray]:
    """One greedy clique partition pass.

    Visits nodes in a seeded random order; each selected node greedily absorbs
    its not-yet-assigned neighbors (ascending index) that are connected to
    every member collected so far, which keeps each subgraph a clique.
    """
    order = np.random.default_rng(seed).permutation(a.n)
    assigned = np.zeros(a.n, dtype=bool)
    subgraphs: list[np.ndarray] = []
    for p in order:
        if assigned[p]:
            continue
        members = [int(p)]
        for nb in a.neighbors(p):
            nb = int(nb)
            if nb == p or assigned[nb]:
                continue
            if all(nb in row_sets[m] for m in members):
                members.append(nb)
        for m in members:
            assigned[m] = True
        subgraphs.append(np.array(sorted(members), dtype=np.int64))
    return subgraphs


def _row_sets(a: Adjacency) -> list[set]:
    return [set(map(int, a.neighbors(i))) for i in range(a.n)]


def pooled_adjacency(parent: Adjacency, subgraphs: list[np.ndarray]) -> Adjacency:
    """Pooled nodes r and c are adjacent iff some parent edge joins their
    subgraphs; parent self-loops make the pooled diagonal unit as well."""
    n_pooled = len(subgraphs)
    label = np.full(parent.n, -1, dtype=np.int64)
    for si, members in enumerate(subgraphs):
        label[np.asarray(members, dtype=np.int64)] = si
    if (label < 0).any():
        raise ValueError("subgraphs do not cover the parent graph")
    rows = label[np.repeat(np.arange(parent.n), parent.row_counts())]
    cols = label[parent.indices]
    return Adjacency.from_edges(n_pooled, rows, cols)


def generate_pooling(a: Adjacency, seed: int) -> tuple[list[np.ndarray], Adjacency]:
    """Greedy clique partition of `a` plus the induced pooled adjacency.

    Deterministic for a given (a, seed); subgraph order is creation order and
    defines the pooled node numbering.
    """
    subgraphs = _subgraphs_for_seed(a, seed, _row_sets(a))
    return subgraphs, pooled_adjacency(a, subgraphs)


def optimize_pooling(a: Adjacency, trials: int, seed_base: int = 0) -> tuple[list[np.ndarray], Adjacency, int]:
    """Run `trials` seeded partition passes (seeds seed_base..seed_base+trials-1)
    and keep the one with the fewest pooled nodes; ties go to the lowest seed.

    Returns (subgraphs, pooled adjacency, winning seed).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    row_sets = _row_sets(a)
    best_subgraphs = None
    best_seed = -1
    for trial in range(trials):
        seed = seed_base + trial
        subgraphs = _subgraphs_for_seed(a, seed, row_sets)
        if best_subgraphs is None or len(subgraphs) < len(best_subgraphs):
            best_subgraphs = subgraphs
            best_seed = seed
    return best_subgraphs, pooled_adjacency(a, best_subgraphs), best_seed


@dataclass(frozen=True, eq=False)
class PoolLevel:
    parent: Adjacency
    subgraphs: list[np.ndarray]
    pooled: Adjacency


@dataclass(eq=False)
class PoolPlan:
    """A chain of clique-pooling levels rooted at a mesh adjacency."""

    levels: list[PoolLevel]
    mesh_digest: str | None = None
    seeds: list[int] = field(default_factory=list)

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    @property
    def node_counts(self) -> list[int]:
        return [self.levels[0].parent.n] + [lvl.pooled.n for lvl in self.levels]

    def validate(self) -> None:
        for li, lvl in enumerate(self.levels):
            seen = np.concatenate(lvl.subgraphs) if lvl.subgraphs else np.empty(0, np.int64)
            if len(np.unique(seen)) != lvl.parent.n or seen.size != lvl.parent.n:
                raise ValueError(f"level {li}: subgraphs do not partition the nodes")
            for members in lvl.subgraphs:
                for mi in members:
                    row = set(map(int, lvl.parent.neighbors(int(mi))))
                    if not all(int(mj) in row for mj in members):
                        raise ValueError(f"level {li}: subgraph {members} is not a clique")
            if not pooled_adjacency(lvl.parent, lvl.subgraphs).equals(lvl.pooled):
                raise ValueError(f"level {li}: pooled adjacency is inconsistent")
            if li + 1 < len(self.levels) and not self.levels[li + 1].parent.equals(lvl.pooled):
                raise ValueError(f"level {li}: chain mismatch with level {li + 1}")

    def serialize(self) -> str:
        lines = ["graph-pool-plan v1"]
        lines.append(f"mesh_digest {self.mesh_digest or 'none'}")
        lines.append(f"levels {self.num_levels}")
        for li, lvl in enumerate(self.levels):
            seed = self.seeds[li] if li < len(self.seeds) else -1
            lines.append(f"level {li} parent_n {lvl.parent.n} subgraphs {len(lvl.subgraphs)} seed {seed}")
            for members in lvl.subgraphs:
                lines.append(" ".join(str(int(m)) for m in members))
        lines.append("end")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return sha256_hex(self.serialize().encode())


def build_pool_plan(
    a: Adjacency,
    num_levels: int,
    trials: int = 1000,
    seed_base: int = 0,
    mesh_digest: str | None = None,
) -> PoolPlan:
    """Chain `num_levels` optimized poolings, re-optimizing on each pooled graph.

    If a level collapses to a single node early, the remaining levels reduce
    to identity partitions and a warning is logged.
    """
    if num_levels < 1:
        raise ValueError("num_levels must be >= 1")
    levels: list[PoolLevel] = []
    seeds: list[int] = []
    current = a
    for li in range(num_levels):
        if current.n == 1 and li > 0:
            logger.warning(
                "pool plan collapsed to a single node at level %d of %d; "
                "remaining levels are identity partitions",
                li,
                num_levels,
            )
        subgraphs, pooled, seed = optimize_pooling(current, trials, seed_base)
        levels.append(PoolLevel(current, subgraphs, pooled))
        seeds.append(seed)
        current = pooled
    return PoolPlan(levels, mesh_digest=mesh_digest, seeds=seeds)


def save_pool_plan(plan: PoolPlan, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(plan.serialize())


def load_pool_plan(path, adjacency: Adjacency) -> PoolPlan:
    """Rebuild a plan from its subgraph lists, re-deriving pooled adjacencies
    from `adjacency` and validating every level."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh.read().splitlines() if ln.strip()]
    if not lines or lines[0] != "graph-pool-plan v1":
        raise ValueError("not a pool plan file")
    if not lines[1].startswith("mesh_digest ") or not lines[2].startswith("levels "):
        raise ValueError("malformed pool plan header")
    mesh_digest = lines[1].split()[1]
    mesh_digest = None if mesh_digest == "none" else mesh_digest
    num_levels = int(lines[2].split()[1])
    pos = 3
    levels: list[PoolLevel] = []
    seeds: list[int] = []
    current = adjacency
    for li in range(num_levels):
        fields = lines[pos].split()
        if fields[:2] != ["level", str(li)]:
            raise ValueError(f"malformed pool plan at level {li}")
        parent_n = int(fields[3])
        count = int(fields[5])
        seeds.append(int(fields[7]) if len(fields) > 7 else -1)
        if parent_n != current.n:
            raise ValueError(
                f"pool plan level {li} was built for {parent_n} nodes, adjacency has {current.n}"
            )
        pos += 1
        subgraphs = []
        for _ in range(count):
            subgraphs.append(np.array([int(v) for v in lines[pos].split()], dtype=np.int64))
            pos += 1
        pooled = pooled_adjacency(current, subgraphs)
        levels.append(PoolLevel(current, subgraphs, pooled))
        current = pooled
    if pos >= len(lines) or lines[pos] != "end":
        raise ValueError("truncated pool plan file")
    plan = PoolPlan(levels, mesh_digest=mesh_digest, seeds=seeds)
    plan.validate()
    return plan


def bfs_distances(a: Adjacency, src: int) -> np.ndarray:
    dist = np.full(a.n, -1, dtype=np.int64)
    dist[src] = 0
    frontier = [src]
    d = 0
    while frontier:
        d += 1
        nxt = []
        for u in frontier:
            for v in a.neighbors(u):
                if dist[v] < 0:
                    dist[v] = d
                    nxt.append(int(v))
        frontier = nxt
    return dist


def graph_diameter(a: Adjacency, exact_limit: int = 2048) -> tuple[int, bool]:
    """(diameter, exact). Exact by all-pairs BFS for small graphs; otherwise a
    double-sweep lower-bound estimate."""
    if a.n == 0:
        return 0, True
    if a.n <= exact_limit:
        best = 0
        for s in range(a.n):
            dist = bfs_distances(a, s)
            if (dist < 0).any():
                raise ValueError("graph is disconnected")
            best = max(best, int(dist.max()))
        return best, True
    d0 = bfs_distances(a, 0)
    far = int(np.argmax(d0))
    d1 = bfs_distances(a, far)
    return int(d1.max()), False
