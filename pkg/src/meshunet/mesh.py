"""Finite-element meshes: the in-memory type, plain-text file IO, and
generators for the small benchmark domains used in tests and experiments.

Mesh files are whitespace-separated plain text:

    line 1:             dim n_nodes n_elements elem_type
    next n_nodes:       nodal coordinates (dim floats per line)
    next n_elements:    element connectivity (0-based node indices)

Blank lines and lines starting with '#' are ignored; parse errors name the
offending line number.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .util import sha256_hex

ELEMENT_NODES = {"tri3": 3, "quad4": 4}


class MeshFormatError(ValueError):
    """Raised for a malformed mesh file; the message carries the line number."""


@dataclass(frozen=True, eq=False)
class Mesh:
    dim: int
    coords: np.ndarray
    elements: np.ndarray
    elem_type: str

    def __post_init__(self):
        coords = np.ascontiguousarray(np.asarray(self.coords, dtype=np.float64))
        object.__setattr__(self, "coords", coords)
        nodes_per_elem = ELEMENT_NODES.get(self.elem_type, 0)
        elements = np.asarray(self.elements, dtype=np.int64)
        if elements.size == 0:
            elements = elements.reshape(0, max(nodes_per_elem, 1))
        object.__setattr__(self, "elements", np.ascontiguousarray(elements))
        self._validate()

    def _validate(self) -> None:
        if self.elem_type not in ELEMENT_NODES:
            raise ValueError(f"unknown element type {self.elem_type!r}")
        if self.dim != 2:
            raise ValueError(f"only 2D meshes are supported, got dim={self.dim}")
        if self.coords.ndim != 2 or self.coords.shape[1] != self.dim:
            raise ValueError("coords must have shape (n_nodes, dim)")
        k = ELEMENT_NODES[self.elem_type]
        if self.elements.ndim != 2 or (self.elements.size and self.elements.shape[1] != k):
            raise ValueError(f"{self.elem_type} elements need {k} nodes each")
        n = self.coords.shape[0]
        if self.elements.size:
            if self.elements.min() < 0 or self.elements.max() >= n:
                raise ValueError("element node index out of range")
            srt = np.sort(self.elements, axis=1)
            dup = (srt[:, 1:] == srt[:, :-1]).any(axis=1)
            if dup.any():
                raise ValueError(f"element {int(np.flatnonzero(dup)[0])} repeats a node")
        if n:
            used = np.zeros(n, dtype=bool)
            used[self.elements.ravel()] = True
            if not used.all():
                orphan = int(np.flatnonzero(~used)[0])
                raise ValueError(f"node {orphan} belongs to no element")

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_dofs(self) -> int:
        return self.n_nodes * self.dim

    def digest(self) -> str:
        """Canonical content digest; independent of file formatting."""
        lines = [f"{self.dim} {self.n_nodes} {self.n_elements} {self.elem_type}"]
        for row in self.coords:
            lines.append(" ".join(f"{v:.17e}" for v in row))
        for elem in self.elements:
            lines.append(" ".join(str(int(v)) for v in elem))
        return sha256_hex("\n".join(lines).encode())


def parse_mesh_text(text: str) -> Mesh:
    rows = [
        (lineno, stripped)
        for lineno, line in enumerate(text.splitlines(), start=1)
        for stripped in [line.strip()]
        if stripped and not stripped.startswith("#")
    ]
    if not rows:
        raise MeshFormatError("line 1: empty mesh file")
    lineno, header = rows[0]
    parts = header.split()
    if len(parts) != 4:
        raise MeshFormatError(f"line {lineno}: header must be 'dim n_nodes n_elements elem_type'")
    try:
        dim, n_nodes, n_elements = (int(p) for p in parts[:3])
    except ValueError as err:
        raise MeshFormatError(f"line {lineno}: non-integer count in header: {err}") from None
    elem_type = parts[3]
    if elem_type not in ELEMENT_NODES:
        raise MeshFormatError(f"line {lineno}: unknown element type {elem_type!r}")
    if len(rows) != 1 + n_nodes + n_elements:
        raise MeshFormatError(
            f"expected {1 + n_nodes + n_elements} content lines, found {len(rows)}"
        )
    coords = np.zeros((n_nodes, dim))
    for i in range(n_nodes):
        lineno, line = rows[1 + i]
        fields = line.split()
        if len(fields) != dim:
            raise MeshFormatError(f"line {lineno}: expected {dim} coordinates")
        try:
            coords[i] = [float(f) for f in fields]
        except ValueError:
            raise MeshFormatError(f"line {lineno}: bad coordinate value") from None
    k = ELEMENT_NODES[elem_type]
    elements = np.zeros((n_elements, k), dtype=np.int64)
    for i in range(n_elements):
        lineno, line = rows[1 + n_nodes + i]
        fields = line.split()
        if len(fields) != k:
            raise MeshFormatError(f"line {lineno}: expected {k} node indices")
        try:
            elements[i] = [int(f) for f in fields]
        except ValueError:
            raise MeshFormatError(f"line {lineno}: bad node index") from None
    try:
        return Mesh(dim, coords, elements, elem_type)
    except ValueError as err:
        raise MeshFormatError(str(err)) from None


def read_mesh(path) -> Mesh:
    with open(path, encoding="utf-8") as fh:
        return parse_mesh_text(fh.read())


def write_mesh(mesh: Mesh, path) -> None:
    lines = [f"{mesh.dim} {mesh.n_nodes} {mesh.n_elements} {mesh.elem_type}"]
    for row in mesh.coords:
        lines.append(" ".join(f"{v:.17e}" for v in row))
    for elem in mesh.elements:
        lines.append(" ".join(str(int(v)) for v in elem))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def rect_quad_mesh(nx: int, ny: int, lx: float = 1.0, ly: float = 1.0) -> Mesh:
    """Structured quad mesh with nx*ny nodes on [0,lx]x[0,ly]."""
    if nx < 2 or ny < 2:
        raise ValueError("need at least 2 nodes per direction")
    xs = np.linspace(0.0, lx, nx)
    ys = np.linspace(0.0, ly, ny)
    coords = np.array([(x, y) for y in ys for x in xs])
    elements = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            a = j * nx + i
            elements.append((a, a + 1, a + nx + 1, a + nx))
    return Mesh(2, coords, np.array(elements, dtype=np.int64), "quad4")


def l_shape_quad_mesh(leg: float = 2.0, width: float = 1.0, spacing: float = 0.25) -> Mesh:
    """Quad mesh of an L-shaped domain: the square [0,leg]^2 minus the
    lower-right block (width,leg]x[0,leg-width)."""
    n = round(leg / spacing)
    if abs(n * spacing - leg) > 1e-9 or n < 2:
        raise ValueError("spacing must divide leg")
    xs = np.linspace(0.0, leg, n + 1)
    tol = 1e-9

    def keep(x, y):
        return x <= width + tol or y >= leg - width - tol

    index = {}
    coords = []
    for j, y in enumerate(xs):
        for i, x in enumerate(xs):
            if keep(x, y):
                index[(i, j)] = len(coords)
                coords.append((x, y))
    elements = []
    for j in range(n):
        for i in range(n):
            corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
            if all(c in index for c in corners):
                elements.append([index[c] for c in corners])
    return Mesh(2, np.array(coords), np.array(elements, dtype=np.int64), "quad4")


def beam_tri_mesh(
    length: float = 2.0,
    height: float = 0.8,
    nx: int = 13,
    ny: int = 5,
    hole_center: tuple[float, float] = (1.0, 0.4),
    hole_radius: float = 0.17,
    refine: float = 0.55,
) -> Mesh:
    """Triangulated beam with a jagged hole and local refinement around it.

    Column spacing is graded so elements are finer near the hole; each grid
    cell is split into two triangles with alternating diagonals, and
    triangles whose centroid falls inside the hole are removed.
    """
    if nx < 3 or ny < 2:
        raise ValueError("mesh too coarse")
    if not 0.0 <= refine < 1.0:
        raise ValueError("refine must be in [0, 1)")
    cx = hole_center[0] / length
    t_mid = (np.arange(nx - 1) + 0.5) / (nx - 1)
    widths = 1.0 - refine * np.exp(-(((t_mid - cx) / 0.18) ** 2))
    xs = np.concatenate([[0.0], np.cumsum(widths)])
    xs *= length / xs[-1]
    ys = np.linspace(0.0, height, ny)
    coords = np.array([(x, y) for y in ys for x in xs])
    tris = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            a = j * nx + i
            b = a + 1
            c = a + nx + 1
            d = a + nx
            if (i + j) % 2 == 0:
                tris.extend([(a, b, c), (a, c, d)])
            else:
                tris.extend([(a, b, d), (b, c, d)])
    tris = np.array(tris, dtype=np.int64)
    centroids = coords[tris].mean(axis=1)
    r2 = ((centroids - np.asarray(hole_center)) ** 2).sum(axis=1)
    tris = tris[r2 > hole_radius**2]
    used = np.zeros(len(coords), dtype=bool)
    used[tris.ravel()] = True
    remap = np.cumsum(used) - 1
    mesh = Mesh(2, coords[used], remap[tris], "tri3")
    _require_connected(mesh)
    return mesh


def _require_connected(mesh: Mesh) -> None:
    n = mesh.n_nodes
    neighbors = [set() for _ in range(n)]
    for elem in mesh.elements:
        for a in elem:
            neighbors[a].update(int(b) for b in elem)
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        for b in neighbors[stack.pop()]:
            if not seen[b]:
                seen[b] = True
                stack.append(b)
    if not seen.all():
        raise ValueError("generated mesh is disconnected; adjust hole or grid sizes")
