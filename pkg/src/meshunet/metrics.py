"""Test-set error metrics and physics-based residual diagnostics.

Error metrics compare predicted against reference displacement fields in
meters: per-sample mean absolute dof error e_m, its test-set mean and
corrected standard deviation, the max per-dof error, and a per-node L2 error
field for export. The residual check needs no reference solution at all: it
evaluates internal forces at the predicted displacements and reports the
free-dof equilibrium residual plus the reaction-force mismatch at the fixed
boundary relative to the applied load.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fem import BoundaryValueProblem, ElementInversionError, NewtonOptions, internal_force
from .network import GraphUNet, model_forward
from .training import Dataset


def sample_error(pred: np.ndarray, truth: np.ndarray) -> float:
    """Mean absolute error over all dofs of one sample."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    return float(np.mean(np.abs(p - t)))


def aggregate(per_sample_e) -> tuple[float, float | None]:
    """Mean and corrected (1/(M-1)) standard deviation; std is None for a
    single sample."""
    e = np.asarray(per_sample_e, dtype=np.float64)
    if e.size == 0:
        raise ValueError("no samples")
    mean = float(np.mean(e))
    if e.size < 2:
        return mean, None
    return mean, float(np.std(e, ddof=1))


def max_dof_error(preds: np.ndarray, truths: np.ndarray) -> float:
    """Max over the whole set of |pred - truth| per dof."""
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("empty test set")
    return float(np.max(np.abs(p - t)))


def l2_error_field(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-node Euclidean norm of the displacement error, shape (n_nodes,)."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 2:
        raise ValueError("pred and truth must both have shape (n_nodes, dim)")
    return np.linalg.norm(p - t, axis=1)


@dataclass
class EvalReport:
    per_sample_e: np.ndarray
    e_bar: float
    sigma_e: float | None
    e_max: float
    residual_stats: np.ndarray | None = None

    @property
    def n_test(self) -> int:
        return int(self.per_sample_e.size)


def evaluate(preds: np.ndarray, truths: np.ndarray) -> EvalReport:
    """Metrics over a batched test set, arrays of shape (m, n_nodes, dim)."""
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 3:
        raise ValueError("preds and truths must both have shape (m, n_nodes, dim)")
    if p.shape[0] == 0:
        raise ValueError("empty test set")
    errors = np.array([sample_error(p[i], t[i]) for i in range(p.shape[0])])
    e_bar, sigma_e = aggregate(errors)
    return EvalReport(per_sample_e=errors, e_bar=e_bar, sigma_e=sigma_e, e_max=max_dof_error(p, t))


def predict_test_set(model: GraphUNet, dataset: Dataset) -> np.ndarray:
    if dataset.test_count == 0:
        raise ValueError("dataset has no test split")
    if model.mesh_digest is not None and dataset.mesh_digest is not None:
        if model.mesh_digest != dataset.mesh_digest:
            raise ValueError("dataset and model were built for different meshes")
    preds, _ = model_forward(model, dataset.test_forces.astype(model.dtype, copy=False))
    return np.asarray(preds, dtype=np.float64)


def evaluate_model(model: GraphUNet, dataset: Dataset) -> tuple[EvalReport, np.ndarray]:
    preds = predict_test_set(model, dataset)
    return evaluate(preds, dataset.test_disps), preds


def format_eval_report(report: EvalReport, characteristic_length_m: float = 1.0) -> str:
    sigma = "-" if report.sigma_e is None else f"{report.sigma_e:.6e}"
    lines = [
        "M_te e_bar [m] sigma(e) [m] e_max [m]",
        f"{report.n_test} {report.e_bar:.6e} {sigma} {report.e_max:.6e}",
        f"relative to characteristic length {characteristic_length_m:.6e} m:"
        f" e_bar/L = {report.e_bar / characteristic_length_m:.6e}"
        f" e_max/L = {report.e_max / characteristic_length_m:.6e}",
    ]
    if report.residual_stats is not None:
        arr = np.asarray(report.residual_stats, dtype=np.float64)
        lines.append(
            "free-dof residual norms [N]:"
            f" mean = {float(np.mean(arr)):.6e} max = {float(np.max(arr)):.6e}"
        )
    return "\n".join(lines) + "\n"


def write_eval_report(report: EvalReport, path, characteristic_length_m: float = 1.0) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_eval_report(report, characteristic_length_m))


@dataclass
class ResidualReport:
    """Equilibrium diagnostics for one predicted displacement field."""

    valid: bool
    residuals: np.ndarray | None
    free_residual_norm: float
    tolerance: float
    within_tolerance: bool
    applied_sum: np.ndarray
    reaction_sum: np.ndarray | None = None
    reaction_mismatch: float | None = None
    inverted_elements: tuple[int, ...] = field(default_factory=tuple)


def residual_check(
    bvp: BoundaryValueProblem,
    u_pred: np.ndarray,
    f_ext: np.ndarray,
    options: NewtonOptions | None = None,
) -> ResidualReport:
    """Per-node residual forces R = f_int(u_pred) - f_ext and a reaction
    balance check: the recovered fixed-boundary reactions should cancel the
    total applied force, and the relative mismatch is reported against the
    applied force magnitude. Element inversion under u_pred marks the report
    invalid and lists the offending elements.
    """
    opts = options or NewtonOptions()
    mesh = bvp.mesh
    u = np.asarray(u_pred, dtype=np.float64).reshape(mesh.n_nodes, mesh.dim)
    f = np.asarray(f_ext, dtype=np.float64).reshape(mesh.n_nodes, mesh.dim)
    applied_sum = f.sum(axis=0)
    tolerance = opts.tol_abs + opts.tol_rel * float(np.linalg.norm(f))
    if not np.isfinite(u).all():
        return ResidualReport(
            valid=False,
            residuals=None,
            free_residual_norm=math.inf,
            tolerance=tolerance,
            within_tolerance=False,
            applied_sum=applied_sum,
        )
    try:
        f_int = internal_force(mesh, bvp.material, u)
    except ElementInversionError as err:
        return ResidualReport(
            valid=False,
            residuals=None,
            free_residual_norm=math.inf,
            tolerance=tolerance,
            within_tolerance=False,
            applied_sum=applied_sum,
            inverted_elements=tuple(err.elements),
        )
    residual = f_int - f.ravel()
    free_norm = float(np.linalg.norm(residual[bvp.free_dof_indices]))
    fixed = bvp.fixed_dof_indices
    reaction_sum = np.zeros(mesh.dim)
    np.add.at(reaction_sum, fixed % mesh.dim, residual[fixed])
    applied_norm = float(np.linalg.norm(applied_sum))
    mismatch = None
    if applied_norm > 0.0:
        mismatch = float(np.linalg.norm(reaction_sum + applied_sum)) / applied_norm
    return ResidualReport(
        valid=True,
        residuals=residual.reshape(mesh.n_nodes, mesh.dim),
        free_residual_norm=free_norm,
        tolerance=tolerance,
        within_tolerance=free_norm <= tolerance,
        applied_sum=applied_sum,
        reaction_sum=reaction_sum,
        reaction_mismatch=mismatch,
    )
