"""Closed-form laws for cloned-cluster poisoning of kernel ridge regression.

An attacker plants m identical points at zeta with label y_t.  Ridge algebra
then gives, in closed form: the dual-mass gain S = m / (c + k_zeta m), the
score shift delta_f = k0 y_t S at a trigger point x0, and the rank-one
input-curvature spike lambda_gn = |grad_x k(x0, zeta)|^2 (y_t S)^2.  The two
are tied by lambda_gn = R_k * delta_f^2 with the spike factor
R_k = |grad_x k|^2 / k0^2, which for the exponential kernel is exactly
r^2 / l^4 with r = |x0 - zeta|.  As r -> 0 the shift stays order one while
the spike vanishes quadratically: effective yet spectrally invisible
poisoning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exceptions import DimensionMismatch, NegativeCount, ZeroKernel
from .kernels import EXPONENTIAL, KernelSpec, eval_kernel, kernel_gradient

UNDERFLOW_K0 = 1e-300


@dataclass(frozen=True)
class PoisonCluster:
    """m clones at zeta labeled y_t, probed at the trigger point x0."""

    zeta: np.ndarray
    m: int
    y_t: float
    x0: np.ndarray

    def __post_init__(self):
        zeta = np.asarray(self.zeta, dtype=np.float64)
        x0 = np.asarray(self.x0, dtype=np.float64)
        if zeta.ndim != 1 or zeta.shape != x0.shape:
            raise DimensionMismatch(f"zeta {zeta.shape} vs x0 {x0.shape}")
        if self.m < 0:
            raise NegativeCount(f"clone count m={self.m}")
        object.__setattr__(self, "zeta", zeta)
        object.__setattr__(self, "x0", x0)

    @property
    def r(self) -> float:
        """Trigger offset |x0 - zeta|."""
        return float(np.linalg.norm(self.x0 - self.zeta))


@dataclass(frozen=True)
class TheoryReport:
    """Gain, score shift, curvature spike and spike factor of one cluster.

    Satisfies lambda_gn == R_k * delta_f^2 whenever filled from one input
    set.  ``detect_threshold`` is populated only when a background curvature
    level was supplied.
    """

    S: float
    delta_f: float
    lambda_gn: float
    R_k: float
    detect_threshold: float | None = None


def poison_gain(m: int, c: float, k_zeta: float) -> float:
    """Scalar gain S = m / (c + k_zeta m); the summed dual mass per unit label.

    Nondecreasing in m, bounded by 1 / k_zeta.
    """
    if m < 0:
        raise NegativeCount(f"clone count m={m}")
    if m == 0:
        return 0.0
    return m / (c + k_zeta * m)


def efficacy(k0: float, y_t: float, S: float) -> float:
    """Poison-induced score shift at the trigger: delta_f = k0 * y_t * S."""
    return k0 * y_t * S


def spike_factor(spec: KernelSpec, x0, zeta) -> float:
    """R_k = |grad_x k(x0, zeta)|^2 / k(x0, zeta)^2.

    For the exponential kernel this equals r^2 / l^4 exactly, which is what
    is returned on that branch (no cancellation through the gradient).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    zeta = np.asarray(zeta, dtype=np.float64)
    k0 = eval_kernel(spec, x0, zeta)
    if abs(k0) < UNDERFLOW_K0:
        raise ZeroKernel(f"k(x0, zeta) = {k0!r} too small to form a ratio")
    if spec.family == EXPONENTIAL:
        d = x0 - zeta
        return float(d @ d) / spec.length_scale**4
    g = kernel_gradient(spec, x0, zeta)
    return float(g @ g) / k0**2


def gn_spike(spec: KernelSpec, cluster: PoisonCluster, c: float,
             lambda_clean: float | None = None) -> TheoryReport:
    """Fill a TheoryReport for one cluster at ridge constant c.

    An empty cluster (m = 0) yields the all-zero report.  When
    ``lambda_clean`` is given, the visibility threshold sqrt(lambda_clean /
    R_k) is included.
    """
    if cluster.m == 0:
        return TheoryReport(S=0.0, delta_f=0.0, lambda_gn=0.0, R_k=0.0)
    k_zeta = eval_kernel(spec, cluster.zeta, cluster.zeta)
    k0 = eval_kernel(spec, cluster.x0, cluster.zeta)
    S = poison_gain(cluster.m, c, k_zeta)
    delta_f = efficacy(k0, cluster.y_t, S)
    g = kernel_gradient(spec, cluster.x0, cluster.zeta)
    lambda_gn = float(g @ g) * (cluster.y_t * S) ** 2
    R_k = spike_factor(spec, cluster.x0, cluster.zeta)
    threshold = None
    if lambda_clean is not None:
        threshold = detect_threshold(lambda_clean, R_k)
    return TheoryReport(S=S, delta_f=delta_f, lambda_gn=lambda_gn, R_k=R_k,
                        detect_threshold=threshold)


def near_clone(r: float, ell: float, m: int, c: float, y_t: float
               ) -> tuple[float, float, float]:
    """Leading-order laws in the near-clone regime r << l (exponential kernel).

    Returns (delta_f ~ y_t S, lambda_gn ~ (y_t S)^2 r^2 / l^4, bound) where
    ``bound`` = (r / l)^2 is the relative-error scale of both truncations.
    """
    if r < 0:
        raise ValueError("r must be nonnegative")
    if ell <= 0:
        raise ValueError("ell must be positive")
    S = poison_gain(m, c, k_zeta=1.0)
    delta_f_approx = y_t * S
    lambda_approx = (y_t * S) ** 2 * r**2 / ell**4
    return delta_f_approx, lambda_approx, (r / ell) ** 2


def detect_threshold(lambda_clean: float, r_k: float) -> float:
    """Minimum |delta_f| at which the spike clears the background curvature.

    Equals sqrt(lambda_clean / R_k).  R_k = 0 returns +inf: the provably
    invisible regime, where no attack strength produces a spike.
    """
    if lambda_clean < 0:
        raise ValueError("lambda_clean must be nonnegative")
    if r_k < 0:
        raise ValueError("R_k must be nonnegative")
    if r_k == 0.0:
        return math.inf
    return math.sqrt(lambda_clean / r_k)


@dataclass(frozen=True)
class AnalyticFeatureMap:
    """Differentiable feature map phi with an explicit Jacobian."""

    value: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]  # (q, p) at the input point


def identity_feature_map() -> AnalyticFeatureMap:
    return AnalyticFeatureMap(value=lambda x: np.asarray(x, dtype=np.float64),
                              jacobian=lambda x: np.eye(len(x)))


def linear_feature_map(A: np.ndarray) -> AnalyticFeatureMap:
    A = np.asarray(A, dtype=np.float64)
    return AnalyticFeatureMap(value=lambda x: A @ x, jacobian=lambda x: A)


def deep_kernel_gradient(feature_map: AnalyticFeatureMap, ell: float,
                         x0, zeta) -> np.ndarray:
    """Input gradient of exp(-|phi(x0) - phi(zeta)|^2 / (2 l^2)) at x0.

    Chain rule: -(kernel_value / l^2) J_phi(x0)^T (phi(x0) - phi(zeta)).
    ``kernel_value`` is the composed kernel evaluated in feature space, not
    to be confused with the gradient-regularisation strength called kappa
    elsewhere in this package.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    zeta = np.asarray(zeta, dtype=np.float64)
    if x0.shape != zeta.shape:
        raise DimensionMismatch(f"x0 {x0.shape} vs zeta {zeta.shape}")
    d = np.asarray(feature_map.value(x0)) - np.asarray(feature_map.value(zeta))
    J = np.asarray(feature_map.jacobian(x0), dtype=np.float64)
    if J.shape[0] != d.shape[0] or J.shape[1] != x0.shape[0]:
        raise DimensionMismatch(
            f"jacobian shape {J.shape} incompatible with phi dim {d.shape[0]} "
            f"and input dim {x0.shape[0]}"
        )
    kernel_value = float(np.exp(-(d @ d) / (2.0 * ell**2)))
    return -(kernel_value / ell**2) * (J.T @ d)
