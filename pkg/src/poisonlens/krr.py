"""Kernel ridge regression with optional input-gradient regularisation.

The estimator solves (K + ridge_c I + kappa G) alpha = y, where K is the
kernel Gram matrix, ridge_c the raw additive diagonal, and G the
gradient-Gram matrix from :mod:`poisonlens.kernels`.  With kappa = 0 this is
plain kernel ridge regression.

Note on the ridge parameterisation: some formulations write the diagonal as
n*lambda (a per-sample ridge lambda), others as a bare lambda.  Here the
additive constant ridge_c is the single source of truth and
:func:`ridge_constant` maps a per-sample lambda onto it, so sweeps cannot
silently mix the two conventions.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import LabeledDataset
from .exceptions import DimensionMismatch, NotPositiveDefinite, SingularSystem
from .kernels import (
    EXPONENTIAL,
    KernelSpec,
    cross_gram,
    gram,
    gradient_gram,
    kernel_hessian,
)
from .numlin import LinearOperator, solve_spd

FD_STEP = 1e-5


def ridge_constant(n_samples: int, lam: float) -> float:
    """Additive diagonal c = n * lambda for a per-sample ridge lambda."""
    return n_samples * lam


class KernelRidge(BaseEstimator, RegressorMixin):
    """Kernel ridge regression, optionally with an input-gradient penalty.

    Parameters
    ----------
    kernel : {"exponential", "linear"}
    length_scale : float
        Length scale of the exponential kernel (ignored for linear).
    ridge_c : float
        Additive diagonal of the regularised system.
    kappa : float
        Strength of the input-gradient penalty; 0 disables it and the fit
        follows the identical code path as plain ridge.
    jitter : float
        Extra diagonal passed to the SPD solver, for Gram matrices of exact
        duplicates that are singular at ridge_c = 0.

    Attributes (after fit)
    ----------------------
    spec_ : KernelSpec
    X_ : ndarray (n, p)        training inputs
    y_ : ndarray (n,)          training targets
    alpha_ : ndarray (n,)      dual coefficients
    K_ : ndarray (n, n)        training Gram matrix
    """

    def __init__(self, kernel: str = EXPONENTIAL, length_scale: float = 1.0,
                 ridge_c: float = 1.0, kappa: float = 0.0, jitter: float = 0.0):
        self.kernel = kernel
        self.length_scale = length_scale
        self.ridge_c = ridge_c
        self.kappa = kappa
        self.jitter = jitter

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if self.ridge_c < 0 or self.kappa < 0:
            raise ValueError("ridge_c and kappa must be nonnegative")
        spec = KernelSpec(self.kernel, self.length_scale)
        K = gram(spec, X)
        M = K + self.ridge_c * np.eye(K.shape[0])
        if self.kappa != 0.0:
            M = M + self.kappa * gradient_gram(spec, X)
        try:
            alpha = solve_spd(M, y, jitter=self.jitter)
        except NotPositiveDefinite as exc:
            raise SingularSystem(
                f"kernel system singular at ridge_c={self.ridge_c}, "
                f"kappa={self.kappa}, jitter={self.jitter}"
            ) from exc
        self.spec_ = spec
        self.X_ = X
        self.y_ = y
        self.K_ = K
        self.alpha_ = alpha
        self.n_features_in_ = X.shape[1]
        return self

    def _check_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_features_in_,):
            raise DimensionMismatch(
                f"point shape {x.shape}, expected ({self.n_features_in_},)"
            )
        return x

    def predict(self, X):
        """Predict at a batch (2-D) or at a single point (1-D, returns float)."""
        check_is_fitted(self, "alpha_")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            scores = cross_gram(self.spec_, X[None, :], self.X_) @ self.alpha_
            return float(scores[0])
        X = check_array(X)
        return cross_gram(self.spec_, X, self.X_) @ self.alpha_

    def score_gradient(self, x) -> np.ndarray:
        """Input gradient of the score, sum_i alpha_i grad_x k(x, x_i)."""
        check_is_fitted(self, "alpha_")
        x = self._check_point(x)
        if self.spec_.family == "linear":
            return self.X_.T @ self.alpha_
        ell2 = self.spec_.length_scale**2
        D = x[None, :] - self.X_  # (n, p)
        k = np.exp(-np.einsum("ij,ij->i", D, D) / (2.0 * ell2))
        return -(D.T @ (self.alpha_ * k)) / ell2

    def input_hessian_loss(self, x, y: float) -> np.ndarray:
        """Input Hessian of the squared loss 0.5 (f(x) - y)^2 at x.

        Assembled analytically as grad_f grad_f^T + (f(x) - y) * hess_f.
        The first (Gauss-Newton) term is rank-one PSD with top eigenvalue
        |grad_f|^2.
        """
        check_is_fitted(self, "alpha_")
        x = self._check_point(x)
        g = self.score_gradient(x)
        H = np.outer(g, g)
        resid = self.predict(x) - y
        if self.spec_.family == EXPONENTIAL and resid != 0.0:
            hess_f = np.zeros_like(H)
            for a_i, x_i in zip(self.alpha_, self.X_):
                hess_f += a_i * kernel_hessian(self.spec_, x, x_i)
            H = H + resid * hess_f
        return 0.5 * (H + H.T)

    def loss_input_gradient(self, x, y: float) -> np.ndarray:
        """grad_x of 0.5 (f(x) - y)^2, i.e. (f(x) - y) grad_f."""
        x = self._check_point(x)
        return (self.predict(x) - y) * self.score_gradient(x)

    def hvp_operator(self, dataset: LabeledDataset, mode: str = "analytic") -> LinearOperator:
        """Dataset-averaged input-Hessian operator v -> (1/N) sum_j H(x_j, y_j) v.

        ``mode="analytic"`` assembles the per-sample Hessians in closed form;
        ``mode="fd"`` central-differences the loss input gradient with step
        1e-5 and exists for parity checks against the analytic path.
        """
        check_is_fitted(self, "alpha_")
        dataset.require_nonempty()
        if dataset.n_features != self.n_features_in_:
            raise DimensionMismatch(
                f"dataset has {dataset.n_features} features, model expects "
                f"{self.n_features_in_}"
            )
        if mode == "analytic":
            hessians = [
                self.input_hessian_loss(x, y)
                for x, y in zip(dataset.X, dataset.y)
            ]
            H_avg = np.mean(hessians, axis=0)
            return LinearOperator(dim=self.n_features_in_,
                                  apply=lambda v: H_avg @ v)
        if mode == "fd":
            points = dataset.X
            targets = dataset.y

            def apply(v: np.ndarray) -> np.ndarray:
                acc = np.zeros(self.n_features_in_)
                for x, y in zip(points, targets):
                    plus = self.loss_input_gradient(x + FD_STEP * v, y)
                    minus = self.loss_input_gradient(x - FD_STEP * v, y)
                    acc += (plus - minus) / (2.0 * FD_STEP)
                return acc / len(points)

            return LinearOperator(dim=self.n_features_in_, apply=apply)
        raise ValueError(f"unknown hvp mode {mode!r}")

    def training_residual(self, y=None) -> float:
        """Squared training residual |y - K alpha|^2 of the fitted system."""
        check_is_fitted(self, "alpha_")
        y = self.y_ if y is None else np.asarray(y, dtype=np.float64)
        r = y - self.K_ @ self.alpha_
        return float(r @ r)


def degrees_of_freedom(spec: KernelSpec, X, ridge_c: float, kappa: float = 0.0,
                       jitter: float = 0.0) -> float:
    """Effective degrees of freedom tr[K (K + ridge_c I + kappa G)^-1]."""
    X = np.asarray(X, dtype=np.float64)
    K = gram(spec, X)
    M = K + ridge_c * np.eye(K.shape[0])
    if kappa != 0.0:
        M = M + kappa * gradient_gram(spec, X)
    try:
        Z = solve_spd(M, K, jitter=jitter)
    except NotPositiveDefinite as exc:
        raise SingularSystem(str(exc)) from exc
    return float(np.trace(Z))


def gradreg_ridge_equivalence(X, y, ridge_c: float, kappa: float
                              ) -> tuple[np.ndarray, np.ndarray, float]:
    """Measure how close linear-kernel gradient regularisation is to ridge.

    For the linear kernel G = n K, so the regularised system is
    ((1 + kappa n) K + ridge_c I) alpha = y.  When K is an orthogonal
    projection (whitened design, X^T X = I_p) and y lies in its range, this
    coincides with a plain ridge fit at ridge_c + kappa * n.  The deviation is
    returned, not asserted, because the identity fails off that regime.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    alpha_gradreg = KernelRidge(kernel="linear", ridge_c=ridge_c,
                                kappa=kappa).fit(X, y).alpha_
    alpha_ridge = KernelRidge(kernel="linear", ridge_c=ridge_c + kappa * n,
                              kappa=0.0).fit(X, y).alpha_
    deviation = float(np.max(np.abs(alpha_gradreg - alpha_ridge)))
    return alpha_gradreg, alpha_ridge, deviation


def fit(spec: KernelSpec, X, y, ridge_c: float, jitter: float = 0.0) -> KernelRidge:
    """Plain KRR fit returning the estimator (kappa = 0)."""
    return KernelRidge(kernel=spec.family, length_scale=spec.length_scale,
                       ridge_c=ridge_c, kappa=0.0, jitter=jitter).fit(X, y)


def fit_gradreg(spec: KernelSpec, X, y, ridge_c: float, kappa: float,
                jitter: float = 0.0) -> KernelRidge:
    """Gradient-regularised KRR fit; reduces exactly to :func:`fit` at kappa = 0."""
    return KernelRidge(kernel=spec.family, length_scale=spec.length_scale,
                       ridge_c=ridge_c, kappa=kappa, jitter=jitter).fit(X, y)
