"""Kernel functions, their input derivatives, and Gram-type matrices.

Two families are supported: the linear kernel k(x, z) = x.z and the
exponential (squared-exponential) kernel k(x, z) = exp(-|x-z|^2 / (2 l^2)).
Besides the usual Gram matrix this module builds the gradient-Gram matrix
G = sum_i J_i^T J_i, the positive-semidefinite object that an input-gradient
penalty adds to the ridge system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .exceptions import DimensionMismatch

LINEAR = "linear"
EXPONENTIAL = "exponential"
_FAMILIES = (LINEAR, EXPONENTIAL)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus length scale (the latter unused for linear)."""

    family: str
    length_scale: float = 1.0

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.family == EXPONENTIAL and not self.length_scale > 0:
            raise ValueError("length_scale must be positive")


def _check_pair(x, z) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.ndim != 1 or z.ndim != 1 or x.shape != z.shape:
        raise DimensionMismatch(f"vector shapes {x.shape} vs {z.shape}")
    return x, z


def eval_kernel(spec: KernelSpec, x, z) -> float:
    x, z = _check_pair(x, z)
    if spec.family == LINEAR:
        return float(x @ z)
    d = x - z
    return float(np.exp(-(d @ d) / (2.0 * spec.length_scale**2)))


def kernel_gradient(spec: KernelSpec, x, z) -> np.ndarray:
    """Gradient of k(x, z) with respect to its first argument."""
    x, z = _check_pair(x, z)
    if spec.family == LINEAR:
        return z.copy()
    ell2 = spec.length_scale**2
    d = x - z
    return -(d / ell2) * np.exp(-(d @ d) / (2.0 * ell2))


def kernel_hessian(spec: KernelSpec, x, z) -> np.ndarray:
    """Hessian of k(x, z) with respect to its first argument."""
    x, z = _check_pair(x, z)
    p = x.shape[0]
    if spec.family == LINEAR:
        return np.zeros((p, p))
    ell2 = spec.length_scale**2
    d = x - z
    k = np.exp(-(d @ d) / (2.0 * ell2))
    return k * (np.outer(d, d) / ell2**2 - np.eye(p) / ell2)


def _as_design(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatch(f"design must be 2-D, got shape {X.shape}")
    return X


def gram(spec: KernelSpec, X) -> np.ndarray:
    """Kernel matrix K_ij = k(x_i, x_j); exact ones on duplicated rows."""
    X = _as_design(X)
    if spec.family == LINEAR:
        K = X @ X.T
        return 0.5 * (K + K.T)
    # cdist subtracts coordinates directly, so identical rows give exactly 0.
    sq = cdist(X, X, "sqeuclidean")
    return np.exp(-sq / (2.0 * spec.length_scale**2))


def cross_gram(spec: KernelSpec, A, B) -> np.ndarray:
    """Rectangular kernel matrix k(a_i, b_j) between two point sets."""
    A, B = _as_design(A), _as_design(B)
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatch(f"feature dims {A.shape[1]} vs {B.shape[1]}")
    if spec.family == LINEAR:
        return A @ B.T
    sq = cdist(A, B, "sqeuclidean")
    return np.exp(-sq / (2.0 * spec.length_scale**2))


def gradient_gram(spec: KernelSpec, X) -> np.ndarray:
    """G = sum_i J_i^T J_i with J_i[:, j] = grad_x k(x, x_j) at x = x_i.

    Built blockwise per evaluation point so memory stays O(n p).  For the
    linear kernel the gradient is x_j independently of the evaluation point,
    hence G = n * X X^T exactly.
    """
    X = _as_design(X)
    n = X.shape[0]
    if spec.family == LINEAR:
        K = X @ X.T
        return 0.5 * n * (K + K.T)
    ell2 = spec.length_scale**2
    K = gram(spec, X)
    G = np.zeros((n, n))
    for i in range(n):
        D = X[i] - X  # (n, p); row j is x_i - x_j
        J = -(D * K[i][:, None]).T / ell2  # (p, n)
        G += J.T @ J
    return 0.5 * (G + G.T)
