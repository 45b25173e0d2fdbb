"""Training: mean-squared-error loss over nodal fields, Adam, a linear
per-step learning-rate decay, and the deterministic mini-batch loop.

The loss for a batch is the batch mean of per-sample squared Euclidean norms
over all degrees of freedom (no averaging over dofs), matching the reported
training curves of the reference setup.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .network import GraphUNet, model_backward, model_forward
from .util import substream

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Raised when training hits a non-finite loss or gradient."""


@dataclass(eq=False)
class Dataset:
    """Paired force/displacement samples on a fixed mesh; the first
    `train_count` samples (after a recorded split) are the training set."""

    forces: np.ndarray
    disps: np.ndarray
    mesh_digest: str | None = None
    train_count: int = 0
    test_count: int = 0
    redraw_count: int = 0

    def __post_init__(self):
        self.forces = np.asarray(self.forces, dtype=np.float64)
        self.disps = np.asarray(self.disps, dtype=np.float64)
        if self.forces.shape != self.disps.shape or self.forces.ndim != 3:
            raise ValueError("forces and disps must both have shape (m, n_nodes, dim)")
        if self.train_count + self.test_count not in (0, self.n_samples):
            raise ValueError("split counts must add up to the sample count")

    @property
    def n_samples(self) -> int:
        return self.forces.shape[0]

    @property
    def train_forces(self) -> np.ndarray:
        return self.forces[: self.train_count]

    @property
    def train_disps(self) -> np.ndarray:
        return self.disps[: self.train_count]

    @property
    def test_forces(self) -> np.ndarray:
        return self.forces[self.train_count : self.train_count + self.test_count]

    @property
    def test_disps(self) -> np.ndarray:
        return self.disps[self.train_count : self.train_count + self.test_count]


def split_dataset(dataset: Dataset, ratio: float, seed: int) -> Dataset:
    """Shuffle with a seeded permutation and record a floor(ratio*m) /
    remainder train/test split."""
    if dataset.n_samples < 2:
        raise ValueError("need at least 2 samples to split")
    if not 0.0 < ratio < 1.0:
        raise ValueError("split ratio must be in (0, 1)")
    perm = np.random.default_rng(seed).permutation(dataset.n_samples)
    train = int(math.floor(ratio * dataset.n_samples))
    return Dataset(
        forces=dataset.forces[perm],
        disps=dataset.disps[perm],
        mesh_digest=dataset.mesh_digest,
        train_count=train,
        test_count=dataset.n_samples - train,
    )


@dataclass(eq=False)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    _scratch: np.ndarray | None = None

    @classmethod
    def zeros(cls, size: int, dtype=np.float64, **kwargs) -> "AdamState":
        return cls(m=np.zeros(size, dtype=dtype), v=np.zeros(size, dtype=dtype), **kwargs)

    def validate(self) -> None:
        if self.m.shape != self.v.shape:
            raise ValueError("moment vectors must have matching shapes")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValueError("betas must lie in [0, 1)")
        if self.eps <= 0.0 or self.t < 0:
            raise ValueError("eps must be positive and t non-negative")


def adam_step(state: AdamState, theta: np.ndarray, grad: np.ndarray, lr: float) -> None:
    """One in-place Adam update: theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)."""
    if theta.shape != grad.shape or theta.shape != state.m.shape:
        raise ValueError("theta, gradient, and moments must share a shape")
    if lr <= 0.0:
        raise ValueError("learning rate must be positive")
    if not np.isfinite(grad).all():
        raise TrainingError("non-finite gradient entries; step aborted")
    if state._scratch is None or state._scratch.shape != theta.shape:
        state._scratch = np.empty_like(theta)
    s = state._scratch
    state.t += 1
    bias1 = 1.0 - state.beta1**state.t
    bias2 = 1.0 - state.beta2**state.t
    state.m *= state.beta1
    np.multiply(grad, 1.0 - state.beta1, out=s)
    state.m += s
    state.v *= state.beta2
    np.multiply(grad, grad, out=s)
    s *= 1.0 - state.beta2
    state.v += s
    np.divide(state.v, bias2, out=s)
    np.sqrt(s, out=s)
    s += state.eps
    np.divide(state.m, s, out=s)
    s *= lr / bias1
    theta -= s


def learning_rate_at(step: int, total_steps: int, lr_start: float, lr_end: float) -> float:
    """Linear decay per step: lr_start at step 0, exactly lr_end at the final
    step (the blend form avoids landing a cancellation ulp off the endpoint)."""
    if total_steps <= 1 or step <= 0:
        return lr_start
    frac = min(step, total_steps - 1) / (total_steps - 1)
    return lr_start * (1.0 - frac) + lr_end * frac


def mse_loss(model: GraphUNet, forces: np.ndarray, disps: np.ndarray) -> tuple[float, np.ndarray]:
    """Batch-mean of per-sample squared dof-error norms, plus d(loss)/d(theta)."""
    forces = np.asarray(forces)
    batch = forces.shape[0] if forces.ndim == 3 else 1
    pred, cache = model_forward(model, forces)
    err = pred - np.asarray(disps, dtype=pred.dtype)
    loss = float(np.sum(err * err)) / batch
    grad = model_backward(model, cache, err * (2.0 / batch))
    return loss, grad


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 4
    lr_start: float = 1e-4
    lr_end: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not self.lr_start >= self.lr_end > 0.0:
            raise ValueError("need lr_start >= lr_end > 0")


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    epoch_lrs: list[float] = field(default_factory=list)
    steps_per_epoch: int = 0
    total_steps: int = 0
    loss_norm: str = "per-sample squared dof-error norm, averaged over the batch"

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1]

    def table(self) -> str:
        lines = ["epoch mean_loss lr"]
        for i, (loss, lr) in enumerate(zip(self.epoch_losses, self.epoch_lrs), start=1):
            lines.append(f"{i} {loss:.10e} {lr:.10e}")
        return "\n".join(lines) + "\n"


def write_train_report(report: TrainReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# training report; loss = {report.loss_norm}\n")
        fh.write(f"# steps_per_epoch {report.steps_per_epoch} total_steps {report.total_steps}\n")
        fh.write(report.table())


def train(
    model: GraphUNet,
    dataset: Dataset,
    config: TrainConfig,
    *,
    state: AdamState | None = None,
    start_epoch: int = 0,
    callback=None,
) -> tuple[TrainReport, AdamState]:
    """Shuffled mini-batch Adam training with a per-step linear lr decay.

    Deterministic for a given (model seed, dataset, config seed) in double
    precision: epoch shuffles come from per-epoch substreams of config.seed.
    Pass `state`/`start_epoch` from a checkpoint to resume; the lr schedule
    keeps its original total length.
    """
    if dataset.train_count < 1:
        raise ValueError("dataset has no training samples (did you split it?)")
    if model.mesh_digest is not None and dataset.mesh_digest is not None:
        if model.mesh_digest != dataset.mesh_digest:
            raise ValueError("dataset and model were built for different meshes")
    forces = dataset.train_forces.astype(model.dtype, copy=False)
    disps = dataset.train_disps.astype(model.dtype, copy=False)
    m_train = dataset.train_count
    steps_per_epoch = math.ceil(m_train / config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    if state is None:
        state = AdamState.zeros(model.theta.size, dtype=model.dtype)
    state.validate()
    report = TrainReport(steps_per_epoch=steps_per_epoch, total_steps=total_steps)
    for epoch in range(start_epoch, config.epochs):
        perm = substream(config.seed, f"shuffle-{epoch}").permutation(m_train)
        losses = []
        lr = config.lr_start
        for lo in range(0, m_train, config.batch_size):
            idx = perm[lo : lo + config.batch_size]
            loss, grad = mse_loss(model, forces[idx], disps[idx])
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch + 1}, step {state.t}: {loss}"
                )
            lr = learning_rate_at(state.t, total_steps, config.lr_start, config.lr_end)
            adam_step(state, model.theta, grad, lr)
            losses.append(loss)
        report.epoch_losses.append(float(np.mean(losses)))
        report.epoch_lrs.append(lr)
        if callback is not None:
            callback(epoch, report.epoch_losses[-1], lr)
    return report, state
