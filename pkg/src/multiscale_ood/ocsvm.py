"""One-class SVM with RBF kernel, trained by a deterministic SMO solver.

The dual problem solved here is

    minimize    0.5 * a' Q a
    subject to  sum(a) = 1,  0 <= a_i <= 1 / (nu * n)

with Q the RBF Gram matrix of the training vectors.  Working pairs are
chosen by maximal KKT violation with ties broken by lowest index, and the
initial point is the uniform simplex vector, so a fixed input order and
config always produce a bit-identical model.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass
class OcsvmConfig:
    """Training knobs; nu upper-bounds the training-outlier fraction."""

    nu: float = 0.001
    gamma: float | str = "auto"
    tolerance: float = 1e-6
    max_passes: int | None = None  # None: 10 * n**2, resolved at fit time

    def validate(self) -> None:
        if not 0.0 < self.nu <= 1.0:
            raise ValueError(f"nu must be in (0, 1], got {self.nu}")
        if isinstance(self.gamma, str):
            if self.gamma != "auto":
                raise ValueError(f"gamma must be a positive number or 'auto', got {self.gamma!r}")
        elif not self.gamma > 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.tolerance > 0.0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_passes is not None and self.max_passes <= 0:
            raise ValueError(f"max_passes must be positive, got {self.max_passes}")


@dataclass
class OcsvmModel:
    """Fitted hyperplane: decision(x) = sum_i alpha_i * k(sv_i, x) - rho."""

    support_vectors: np.ndarray  # (n_sv, dim) float64
    alphas: np.ndarray  # (n_sv,) float64
    rho: float
    gamma: float
    layer_index: int
    support_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    converged: bool = True
    iterations: int = 0
    n_training: int = 0

    @property
    def dim(self) -> int:
        return int(self.support_vectors.shape[1])


def rbf_kernel(a: Sequence[float], b: Sequence[float], gamma: float) -> float:
    """exp(-gamma * ||a - b||^2); 1.0 at zero distance."""
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.shape != bv.shape or av.ndim != 1:
        raise ValueError(f"vector length mismatch: {av.shape} vs {bv.shape}")
    if not gamma > 0.0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    diff = av - bv
    return float(np.exp(-gamma * float(np.dot(diff, diff))))


def default_gamma(training_vectors: Sequence[Sequence[float]]) -> float:
    """Scale-free kernel width: 1 / (dim * mean per-dimension variance).

    Falls back to 1.0 when the training vectors carry no variance at all.
    """
    x = np.atleast_2d(np.asarray(training_vectors, dtype=np.float64))
    if x.size == 0:
        raise ValueError("default_gamma needs at least one training vector")
    mean_var = float(x.var(axis=0).mean())
    if mean_var <= 0.0:
        return 1.0
    return 1.0 / (x.shape[1] * mean_var)


def _kernel_matrix(x: np.ndarray, gamma: float) -> np.ndarray:
    sq = (x * x).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-gamma * d2)


def fit_ocsvm(
    vectors: Sequence[Sequence[float]],
    config: OcsvmConfig | None = None,
    layer_index: int = 0,
) -> OcsvmModel:
    """Train the one-class SVM on ID feature vectors.

    Args:
        vectors: n equal-length, finite feature vectors; the fit uses their
            given order, so the result is reproducible.
        config: solver settings; defaults match the shipped pipeline.
        layer_index: recorded on the model for bookkeeping.

    Returns:
        OcsvmModel with zero-weight vectors dropped.  If the pair-update
        budget runs out before the KKT tolerance is met, a RuntimeWarning
        is emitted and the model reports converged=False.
    """
    config = config or OcsvmConfig()
    config.validate()
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("training set must be a non-empty list of equal-length vectors")
    if not np.isfinite(x).all():
        raise ValueError("training vectors contain non-finite values")
    n = x.shape[0]
    gamma = default_gamma(x) if config.gamma == "auto" else float(config.gamma)
    c_bound = 1.0 / (config.nu * n)
    q = _kernel_matrix(x, gamma)
    alpha = np.full(n, 1.0 / n)
    grad = q @ alpha
    max_iter = config.max_passes if config.max_passes is not None else 10 * n * n
    converged = False
    iterations = 0
    while iterations < max_iter:
        can_up = alpha < c_bound
        can_down = alpha > 0.0
        if not can_up.any() or not can_down.any():
            converged = True
            break
        up = np.flatnonzero(can_up)
        down = np.flatnonzero(can_down)
        i = int(up[np.argmin(grad[up])])
        j = int(down[np.argmax(grad[down])])
        if grad[j] - grad[i] <= config.tolerance:
            converged = True
            break
        room_i = c_bound - alpha[i]
        room_j = alpha[j]
        step = min(room_i, room_j)
        eta = q[i, i] + q[j, j] - 2.0 * q[i, j]
        if eta > 0.0:
            step = min(step, (grad[j] - grad[i]) / eta)
        # land on bounds exactly so the box constraint holds bit-for-bit
        alpha[i] = c_bound if step >= room_i else alpha[i] + step
        alpha[j] = 0.0 if step >= room_j else alpha[j] - step
        grad += step * (q[:, i] - q[:, j])
        iterations += 1
    if not converged:
        warnings.warn(
            f"one-class SVM stopped after {max_iter} pair updates without reaching "
            f"tolerance {config.tolerance} (layer {layer_index})",
            RuntimeWarning,
            stacklevel=2,
        )
    rho = _offset(alpha, grad, c_bound)
    keep = np.flatnonzero(alpha > 0.0)
    return OcsvmModel(
        support_vectors=x[keep].copy(),
        alphas=alpha[keep].copy(),
        rho=rho,
        gamma=gamma,
        layer_index=layer_index,
        support_indices=keep,
        converged=converged,
        iterations=iterations,
        n_training=n,
    )


def _offset(alpha: np.ndarray, grad: np.ndarray, c_bound: float) -> float:
    """rho such that decision() is zero on margin support vectors.

    Free vectors pin rho exactly (averaged when several exist); with none,
    the midpoint of the interval the bounded vectors allow is used.
    """
    free = (alpha > 0.0) & (alpha < c_bound)
    if free.any():
        return float(grad[free].mean())
    at_upper = grad[alpha == c_bound]  # these require rho >= grad
    at_zero = grad[alpha == 0.0]  # these require rho <= grad
    lo = float(at_upper.max()) if at_upper.size else None
    hi = float(at_zero.min()) if at_zero.size else None
    if lo is not None and hi is not None:
        return 0.5 * (lo + hi)
    if lo is not None:
        return lo
    if hi is not None:
        return hi
    return float(grad.mean())


def decision_values(model: OcsvmModel, x: np.ndarray) -> np.ndarray:
    """Vectorized decision over rows of x (shape (m, dim))."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or (x.size and x.shape[1] != model.dim):
        raise ValueError(f"query rows must have dimension {model.dim}")
    if x.shape[0] == 0:
        return np.zeros(0)
    d2 = ((x[:, None, :] - model.support_vectors[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-model.gamma * d2) @ model.alphas - model.rho


def decision(model: OcsvmModel, x: Sequence[float]) -> float:
    """Signed distance proxy: positive means ID-side, negative OOD-side."""
    xv = np.asarray(x, dtype=np.float64)
    if xv.ndim != 1 or xv.size != model.dim:
        raise ValueError(f"query must have dimension {model.dim}, got shape {xv.shape}")
    return float(decision_values(model, xv[None, :])[0])
