"""Plane-strain hyperelastic finite elements used to generate training data
and to verify surrogate predictions.

Material model: compressible neo-Hookean with strain-energy density

    W(F) = mu/2 * (I_c - 3 - 2 ln J) + lam/4 * (J^2 - 1 - 2 ln J),

J = det F, I_c = tr(F^T F), in a total-Lagrangian setting with F_33 = 1
(plane strain). Elements are 3-node triangles (1-point quadrature) or 4-node
quads (2x2 Gauss). Solves are full Newton-Raphson on the free dofs with an
analytic tangent, a direct sparse factorization, and load-step halving on
divergence. Dof ordering is node-major: dof = node * dim + component.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh
from .training import Dataset

logger = logging.getLogger(__name__)


class ElementInversionError(RuntimeError):
    """An element reached a non-positive Jacobian (det F <= 0)."""

    def __init__(self, elements):
        self.elements = sorted(int(e) for e in elements)
        super().__init__(f"element inversion (det F <= 0) in elements {self.elements}")


class SolverError(RuntimeError):
    """Newton-Raphson failed to converge even with load stepping."""


class GenerationError(RuntimeError):
    """Dataset generation kept failing to converge."""


def lame_parameters(youngs_modulus: float, poisson_ratio: float) -> tuple[float, float]:
    """(lambda, mu) from (E, nu); nu = 0.5 (incompressible) is rejected."""
    if youngs_modulus <= 0.0:
        raise ValueError("Young's modulus must be positive")
    if not -1.0 < poisson_ratio < 0.5:
        raise ValueError("Poisson ratio must lie in (-1, 0.5)")
    lam = youngs_modulus * poisson_ratio / ((1.0 + poisson_ratio) * (1.0 - 2.0 * poisson_ratio))
    mu = youngs_modulus / (2.0 * (1.0 + poisson_ratio))
    return lam, mu


@dataclass(frozen=True)
class Material:
    youngs_modulus: float
    poisson_ratio: float

    def __post_init__(self):
        lame_parameters(self.youngs_modulus, self.poisson_ratio)

    @property
    def lam(self) -> float:
        return lame_parameters(self.youngs_modulus, self.poisson_ratio)[0]

    @property
    def mu(self) -> float:
        return lame_parameters(self.youngs_modulus, self.poisson_ratio)[1]


def strain_energy(deformation_gradient: np.ndarray, material: Material) -> float:
    """Energy density W(F) for a full 3x3 deformation gradient."""
    f = np.asarray(deformation_gradient, dtype=np.float64)
    if f.shape != (3, 3):
        raise ValueError("deformation gradient must be 3x3")
    j = np.linalg.det(f)
    if j <= 0.0:
        raise ElementInversionError([0])
    i_c = float(np.trace(f.T @ f))
    lam, mu = material.lam, material.mu
    return 0.5 * mu * (i_c - 3.0 - 2.0 * math.log(j)) + 0.25 * lam * (j * j - 1.0 - 2.0 * math.log(j))


def pk1_stress(deformation_gradient: np.ndarray, material: Material) -> np.ndarray:
    """First Piola-Kirchhoff stress P = mu (F - F^-T) + lam/2 (J^2 - 1) F^-T."""
    f = np.asarray(deformation_gradient, dtype=np.float64)
    if f.shape != (3, 3):
        raise ValueError("deformation gradient must be 3x3")
    j = np.linalg.det(f)
    if j <= 0.0:
        raise ElementInversionError([0])
    f_inv_t = np.linalg.inv(f).T
    lam, mu = material.lam, material.mu
    return mu * (f - f_inv_t) + 0.5 * lam * (j * j - 1.0) * f_inv_t


def cauchy_stress(deformation_gradient: np.ndarray, material: Material) -> np.ndarray:
    f = np.asarray(deformation_gradient, dtype=np.float64)
    j = np.linalg.det(f)
    return pk1_stress(f, material) @ f.T / j


def von_mises_stress(deformation_gradient: np.ndarray, material: Material) -> float:
    """sqrt(3/2 dev(sigma):dev(sigma)) of the Cauchy stress."""
    sigma = cauchy_stress(deformation_gradient, material)
    dev = sigma - np.trace(sigma) / 3.0 * np.eye(3)
    return math.sqrt(1.5 * float(np.sum(dev * dev)))


_GP = 1.0 / math.sqrt(3.0)


def _reference_rule(elem_type: str) -> tuple[np.ndarray, np.ndarray]:
    """Shape-function gradients in reference coordinates at each quadrature
    point, plus quadrature weights. Shapes: (ngp, k, 2) and (ngp,)."""
    if elem_type == "tri3":
        grads = np.array([[[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]])
        return grads, np.array([0.5])
    if elem_type == "quad4":
        pts = [(-_GP, -_GP), (_GP, -_GP), (_GP, _GP), (-_GP, _GP)]
        corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
        grads = np.zeros((4, 4, 2))
        for g, (xi, eta) in enumerate(pts):
            for a, (xa, ya) in enumerate(corners):
                grads[g, a, 0] = 0.25 * xa * (1.0 + ya * eta)
                grads[g, a, 1] = 0.25 * ya * (1.0 + xa * xi)
        return grads, np.ones(4)
    raise ValueError(f"unsupported element type {elem_type!r}")


def _inv2(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched 2x2 inverse and determinant for arrays (..., 2, 2)."""
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    inv = np.empty_like(m)
    inv[..., 0, 0] = m[..., 1, 1]
    inv[..., 1, 1] = m[..., 0, 0]
    inv[..., 0, 1] = -m[..., 0, 1]
    inv[..., 1, 0] = -m[..., 1, 0]
    inv /= det[..., None, None]
    return inv, det


def _geometry(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Reference shape gradients dN/dX (n_elem, ngp, k, 2) and quadrature
    weights times reference Jacobian determinants (n_elem, ngp)."""
    ref_grads, weights = _reference_rule(mesh.elem_type)
    x = mesh.coords[mesh.elements]
    jac = np.einsum("eka,gkb->egab", x, ref_grads)
    jac_inv, det = _inv2(jac)
    if (det <= 0.0).any():
        bad = int(np.argwhere(det <= 0.0)[0][0])
        raise ValueError(f"element {bad} has non-positive reference Jacobian (check node order)")
    dndx = np.einsum("gkb,egba->egka", ref_grads, jac_inv)
    wdet = weights[None, :] * det
    return dndx, wdet


def _deformation(mesh: Mesh, u2: np.ndarray, dndx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ue = u2[mesh.elements]
    f = np.einsum("eki,egka->egia", ue, dndx)
    f[..., 0, 0] += 1.0
    f[..., 1, 1] += 1.0
    det = f[..., 0, 0] * f[..., 1, 1] - f[..., 0, 1] * f[..., 1, 0]
    return f, det


def _check_inversion(det: np.ndarray) -> None:
    if (det <= 0.0).any():
        bad = np.unique(np.argwhere(det <= 0.0)[:, 0])
        raise ElementInversionError(bad)


def element_deformation_gradients(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    """Full 3x3 deformation gradients per element quadrature point,
    shape (n_elem, ngp, 3, 3)."""
    u2 = np.asarray(u, dtype=np.float64).reshape(mesh.n_nodes, mesh.dim)
    dndx, _ = _geometry(mesh)
    f2, det = _deformation(mesh, u2, dndx)
    _check_inversion(det)
    out = np.zeros(f2.shape[:2] + (3, 3))
    out[..., :2, :2] = f2
    out[..., 2, 2] = 1.0
    return out


def total_strain_energy(mesh: Mesh, material: Material, u: np.ndarray) -> float:
    u2 = np.asarray(u, dtype=np.float64).reshape(mesh.n_nodes, mesh.dim)
    dndx, wdet = _geometry(mesh)
    f2, det = _deformation(mesh, u2, dndx)
    _check_inversion(det)
    i_c = np.einsum("egia,egia->eg", f2, f2) + 1.0
    lam, mu = material.lam, material.mu
    dens = 0.5 * mu * (i_c - 3.0 - 2.0 * np.log(det)) + 0.25 * lam * (det**2 - 1.0 - 2.0 * np.log(det))
    return float(np.sum(dens * wdet))


def _element_dofs(mesh: Mesh) -> np.ndarray:
    return (mesh.elements[:, :, None] * mesh.dim + np.arange(mesh.dim)[None, None, :]).astype(np.int64)


def internal_force(mesh: Mesh, material: Material, u: np.ndarray) -> np.ndarray:
    return internal_force_and_tangent(mesh, material, u, want_tangent=False)[0]


def internal_force_and_tangent(
    mesh: Mesh, material: Material, u: np.ndarray, want_tangent: bool = True
) -> tuple[np.ndarray, sp.csr_matrix | None]:
    """Assembled internal force vector (length n_dofs) and, optionally, the
    analytic tangent stiffness as a sparse CSR matrix."""
    u2 = np.asarray(u, dtype=np.float64).reshape(mesh.n_nodes, mesh.dim)
    lam, mu = material.lam, material.mu
    dndx, wdet = _geometry(mesh)
    f2, det = _deformation(mesh, u2, dndx)
    _check_inversion(det)
    f_inv, _ = _inv2(f2)
    f_inv_t = np.swapaxes(f_inv, -1, -2)
    pressure = 0.5 * lam * (det**2 - 1.0)
    piola = mu * (f2 - f_inv_t) + pressure[..., None, None] * f_inv_t

    fe = np.einsum("egia,egka,eg->eki", piola, dndx, wdet)
    edofs = _element_dofs(mesh)
    f_int = np.bincount(edofs.ravel(), weights=fe.ravel(), minlength=mesh.n_dofs)
    if not want_tangent:
        return f_int, None

    eye = np.eye(2)
    ident = np.einsum("ik,JL->iJkL", eye, eye)
    mix = np.einsum("egJk,egLi->egiJkL", f_inv, f_inv)
    vol = np.einsum("egLk,egJi->egiJkL", f_inv, f_inv)
    c_mix = (mu - pressure)[..., None, None, None, None]
    c_vol = (lam * det**2)[..., None, None, None, None]
    tangent = mu * ident + c_mix * mix + c_vol * vol
    ke = np.einsum("egaJ,egiJkL,egbL,eg->eaibk", dndx, tangent, dndx, wdet, optimize=True)
    rows = np.broadcast_to(edofs[:, :, :, None, None], ke.shape).ravel()
    cols = np.broadcast_to(edofs[:, None, None, :, :], ke.shape).ravel()
    k = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(mesh.n_dofs, mesh.n_dofs)).tocsr()
    return f_int, k


def nodes_on_edge(mesh: Mesh, axis: str, side: str, tol: float = 1e-9) -> np.ndarray:
    """Node indices on the min or max face along 'x' or 'y'."""
    ax = {"x": 0, "y": 1}[axis]
    coords = mesh.coords[:, ax]
    ref = coords.min() if side == "min" else coords.max()
    return np.flatnonzero(np.abs(coords - ref) <= tol)


def fix_nodes(nodes, dim: int = 2) -> frozenset[tuple[int, int]]:
    """Fix every component of each node."""
    return frozenset((int(n), c) for n in np.asarray(nodes).ravel() for c in range(dim))


@dataclass(frozen=True, eq=False)
class BoundaryValueProblem:
    mesh: Mesh
    material: Material
    fixed_dofs: frozenset[tuple[int, int]]
    load_region: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "fixed_dofs", frozenset(self.fixed_dofs))
        object.__setattr__(self, "load_region", tuple(int(n) for n in self.load_region))
        if not self.fixed_dofs:
            raise ValueError("at least one dof must be fixed")
        n, dim = self.mesh.n_nodes, self.mesh.dim
        for node, comp in self.fixed_dofs:
            if not (0 <= node < n and 0 <= comp < dim):
                raise ValueError(f"fixed dof ({node}, {comp}) out of range")
        fixed_nodes = {node for node, _ in self.fixed_dofs}
        for node in self.load_region:
            if not 0 <= node < n:
                raise ValueError(f"load node {node} out of range")
            if node in fixed_nodes:
                raise ValueError(f"load node {node} is on the fixed boundary")

    @cached_property
    def fixed_dof_indices(self) -> np.ndarray:
        return np.array(sorted(node * self.mesh.dim + comp for node, comp in self.fixed_dofs), dtype=np.int64)

    @cached_property
    def free_dof_indices(self) -> np.ndarray:
        mask = np.ones(self.mesh.n_dofs, dtype=bool)
        mask[self.fixed_dof_indices] = False
        return np.flatnonzero(mask)


def point_load(mesh: Mesh, node: int, force: np.ndarray) -> np.ndarray:
    f = np.zeros((mesh.n_nodes, mesh.dim))
    f[node] = force
    return f


@dataclass(frozen=True)
class NewtonOptions:
    tol_abs: float = 1e-10
    tol_rel: float = 1e-9
    max_iterations: int = 50
    max_bisections: int = 10


@dataclass
class SolveResult:
    u: np.ndarray
    iterations: int
    residual_norm: float
    converged: bool


class _NotConverged(Exception):
    def __init__(self, residual):
        self.residual = residual


def newton_solve(
    bvp: BoundaryValueProblem, f_ext: np.ndarray, options: NewtonOptions | None = None
) -> SolveResult:
    """Solve f_int(u) = f_ext on the free dofs; fixed dofs are held at zero.

    Convergence: ||R_free|| <= tol_abs + tol_rel * ||f_ext||. On divergence
    or element inversion the load increment is halved recursively up to
    max_bisections deep; failure past that raises SolverError.
    """
    opts = options or NewtonOptions()
    mesh, material = bvp.mesh, bvp.material
    f = np.asarray(f_ext, dtype=np.float64).reshape(-1)
    if f.size != mesh.n_dofs:
        raise ValueError("external force vector has the wrong length")
    if np.any(f[bvp.fixed_dof_indices] != 0.0):
        raise ValueError("external forces must be zero on fixed dofs")
    free = bvp.free_dof_indices
    iterations = 0

    def attempt(u_start: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, float]:
        nonlocal iterations
        u = u_start.copy()
        tol = opts.tol_abs + opts.tol_rel * float(np.linalg.norm(target))
        residual_norm = math.inf
        for it in range(opts.max_iterations + 1):
            f_int, k = internal_force_and_tangent(mesh, material, u)
            residual = f_int - target
            residual_norm = float(np.linalg.norm(residual[free]))
            if residual_norm <= tol:
                return u, residual_norm
            if it == opts.max_iterations:
                raise _NotConverged(residual_norm)
            k_ff = k[free][:, free].tocsc()
            du = spla.spsolve(k_ff, -residual[free])
            if not np.isfinite(du).all():
                raise _NotConverged(residual_norm)
            u[free] += du
            iterations += 1
        raise _NotConverged(residual_norm)

    def advance(u_from: np.ndarray, f_from: np.ndarray, f_to: np.ndarray, depth: int):
        try:
            return attempt(u_from, f_to)
        except (_NotConverged, ElementInversionError) as err:
            if depth >= opts.max_bisections:
                detail = (
                    f"residual {err.residual:.3e}" if isinstance(err, _NotConverged) else str(err)
                )
                raise SolverError(
                    f"Newton did not converge after {opts.max_bisections} load bisections ({detail})"
                ) from None
            logger.debug("halving load step at depth %d", depth)
            f_mid = 0.5 * (f_from + f_to)
            u_mid, _ = advance(u_from, f_from, f_mid, depth + 1)
            return advance(u_mid, f_mid, f_to, depth + 1)

    u, residual_norm = advance(np.zeros(mesh.n_dofs), np.zeros(mesh.n_dofs), f, 0)
    return SolveResult(
        u=u.reshape(mesh.n_nodes, mesh.dim),
        iterations=iterations,
        residual_norm=residual_norm,
        converged=True,
    )


def generate_dataset(
    bvp: BoundaryValueProblem,
    num_samples: int | None,
    force_range: tuple[float, float],
    samples_per_node: int,
    seed: int,
    options: NewtonOptions | None = None,
) -> Dataset:
    """Single-nodal-load dataset: for each load-region node (ascending),
    draw `samples_per_node` force vectors componentwise uniform in
    `force_range`, solve, and store (force field, displacement field) pairs
    in draw order. `num_samples` (if given) caps the total.

    Non-converged draws are redrawn and logged; more than 100 consecutive
    failures raise GenerationError.
    """
    lo, hi = force_range
    if hi < lo:
        raise ValueError("empty force range")
    if samples_per_node < 1:
        raise ValueError("samples_per_node must be >= 1")
    if not bvp.load_region:
        raise ValueError("boundary value problem has no load region")
    rng = np.random.default_rng(seed)
    mesh = bvp.mesh
    forces, disps = [], []
    redraws = 0
    target = len(bvp.load_region) * samples_per_node
    if num_samples is not None:
        target = min(target, num_samples)
    for node in sorted(bvp.load_region):
        for _ in range(samples_per_node):
            if len(forces) >= target:
                break
            failures = 0
            while True:
                f_vec = rng.uniform(lo, hi, size=mesh.dim)
                f_ext = point_load(mesh, node, f_vec)
                try:
                    result = newton_solve(bvp, f_ext, options)
                except SolverError:
                    failures += 1
                    redraws += 1
                    logger.warning("redrawing load at node %d (failure %d)", node, failures)
                    if failures > 100:
                        raise GenerationError(
                            f"more than 100 consecutive non-converged draws at node {node}"
                        ) from None
                    continue
                forces.append(f_ext)
                disps.append(result.u)
                break
    if redraws:
        logger.info("dataset generation finished with %d redraws", redraws)
    return Dataset(
        forces=np.array(forces),
        disps=np.array(disps),
        mesh_digest=mesh.digest(),
        train_count=len(forces),
        test_count=0,
        redraw_count=redraws,
    )


def write_dataset(dataset: Dataset, path) -> None:
    """Header 'n_nodes dim m_total mesh_digest', then one record per line:
    2*n_nodes*dim floats (forces then displacements), full double precision."""
    m, n, dim = dataset.forces.shape
    digest = dataset.mesh_digest or "none"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{n} {dim} {m} {digest}\n")
        for i in range(m):
            rec = np.concatenate([dataset.forces[i].ravel(), dataset.disps[i].ravel()])
            fh.write(" ".join(f"{v:.17e}" for v in rec) + "\n")


def read_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 4:
            raise ValueError("dataset header must be 'n_nodes dim m_total mesh_digest'")
        n, dim, m = int(header[0]), int(header[1]), int(header[2])
        digest = None if header[3] == "none" else header[3]
        data = np.loadtxt(fh, ndmin=2)
    if data.shape != (m, 2 * n * dim):
        raise ValueError(
            f"dataset body has shape {data.shape}, expected ({m}, {2 * n * dim})"
        )
    forces = data[:, : n * dim].reshape(m, n, dim)
    disps = data[:, n * dim :].reshape(m, n, dim)
    return Dataset(forces=forces, disps=disps, mesh_digest=digest, train_count=m, test_count=0)
