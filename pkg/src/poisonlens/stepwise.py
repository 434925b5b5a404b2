"""Linear-regression poisoning via single-feature stepwise updates.

The core identity: with a least-squares fit on X cached as an economy QR,
appending one column x_new changes the solution in closed form,

    beta_new = x_new.e / (x_new.M_X x_new),
    beta_old' = beta_hat - (X^T X)^-1 X^T x_new * beta_new,
    delta_RSS = (x_new.e)^2 / (x_new.M_X x_new),

where e is the residual and M_X the annihilator I - Q Q^T.  A backdoor whose
trigger is a fresh indicator column is therefore a one-step update of the
clean-ish regression, no retraining needed.  ``full_refit_oracle`` solves the
augmented system from scratch and is the ground truth these formulas are
checked against.

Classification uses one-hot targets with one shared QR across the K output
regressions; prediction is the argmax of the scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import LabeledDataset
from .exceptions import (
    CollinearFeature,
    EmptyDataset,
    RankDeficient,
    ZeroCoefficient,
)
from .numlin import qr_economy
from .triggers import TriggerMask, apply_trigger

COLLINEAR_TOL = 1e-10


@dataclass
class LinearFit:
    """Least-squares fit with its economy QR cached for stepwise updates."""

    X: np.ndarray
    Y: np.ndarray
    beta_hat: np.ndarray
    residual_e: np.ndarray
    qr_cache: tuple[np.ndarray, np.ndarray]

    @property
    def n_outputs(self) -> int:
        return 1 if self.Y.ndim == 1 else self.Y.shape[1]

    @property
    def rss(self) -> np.ndarray:
        """Residual sum of squares per output."""
        e = self.residual_e if self.residual_e.ndim == 2 else self.residual_e[:, None]
        return np.einsum("ij,ij->j", e, e)


@dataclass(frozen=True)
class StepwiseUpdate:
    """Closed-form coefficients after appending one column."""

    beta_new: np.ndarray  # scalar per output
    beta_old_adjusted: np.ndarray  # (p,) or (p, K)
    delta_rss: np.ndarray  # per output, always >= 0


def base_fit(X, Y) -> LinearFit:
    """Least-squares fit of Y on X via economy QR.

    Y may be a vector or an (n, K) matrix of stacked targets; the QR is
    shared across outputs.  Raises RankDeficient for singular designs.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.shape[0] != X.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows, Y has {Y.shape[0]}")
    Q, R = qr_economy(X)
    beta = scipy.linalg.solve_triangular(R, Q.T @ Y, lower=False)
    resid = Y - X @ beta
    return LinearFit(X=X, Y=Y, beta_hat=beta, residual_e=resid, qr_cache=(Q, R))


def add_feature(fit: LinearFit, x_new) -> StepwiseUpdate:
    """Stepwise update of ``fit`` for one appended column.

    Raises CollinearFeature when x_new lies in the span of the design
    (denominator below 1e-10 * |x_new|^2), the degenerate case of the
    update formulas.
    """
    x_new = np.asarray(x_new, dtype=np.float64)
    if x_new.shape != (fit.X.shape[0],):
        raise ValueError(
            f"x_new shape {x_new.shape}, expected ({fit.X.shape[0]},)"
        )
    Q, R = fit.qr_cache
    c = Q.T @ x_new
    residual_col = x_new - Q @ c  # M_X x_new
    denom = float(residual_col @ residual_col)  # x_new^T M_X x_new
    if denom <= COLLINEAR_TOL * float(x_new @ x_new):
        raise CollinearFeature(
            f"x_new^T M_X x_new = {denom:.3e} relative to |x_new|^2; "
            "column is in the design span"
        )
    x_dot_e = x_new @ fit.residual_e  # scalar or (K,)
    beta_new = x_dot_e / denom
    # (X^T X)^-1 X^T x_new = R^-1 c
    adjust = scipy.linalg.solve_triangular(R, c, lower=False)
    if fit.Y.ndim == 1:
        beta_old_adjusted = fit.beta_hat - adjust * beta_new
    else:
        beta_old_adjusted = fit.beta_hat - np.outer(adjust, beta_new)
    delta_rss = x_dot_e**2 / denom
    return StepwiseUpdate(
        beta_new=np.asarray(beta_new),
        beta_old_adjusted=beta_old_adjusted,
        delta_rss=np.asarray(delta_rss),
    )


def full_refit_oracle(X, x_new, Y) -> np.ndarray:
    """Direct least squares on the augmented design [X x_new].

    Ground truth for :func:`add_feature`; the last coefficient row belongs
    to x_new.
    """
    X = np.asarray(X, dtype=np.float64)
    x_new = np.asarray(x_new, dtype=np.float64)
    augmented = np.column_stack([X, x_new])
    Q, R = qr_economy(augmented)  # raises RankDeficient if singular
    return scipy.linalg.solve_triangular(R, Q.T @ np.asarray(Y, dtype=np.float64),
                                         lower=False)


class OneHotLinearClassifier(BaseEstimator, ClassifierMixin):
    """Multi-class classification by one-hot least squares and argmax.

    Each class gets its own output regression; all share one QR of the
    design.  Ties in the argmax break toward the lowest class index.

    Parameters
    ----------
    ridge : float
        L2 penalty on all coefficients (including the intercept column),
        implemented through row augmentation of the design.  The default 0
        falls back to a tiny scale-aware jitter when the design is rank
        deficient, as happens with always-zero pixel columns.
    fit_intercept : bool
        Append a constant column to the design.
    """

    def __init__(self, ridge: float = 0.0, fit_intercept: bool = True):
        self.ridge = ridge
        self.fit_intercept = fit_intercept

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_ = np.unique(y)
        Y = (y[:, None] == self.classes_[None, :]).astype(np.float64)
        design = X
        if self.fit_intercept:
            design = np.column_stack([X, np.ones(X.shape[0])])
        ridge = self.ridge
        if ridge > 0:
            fit_obj = _ridge_fit(design, Y, ridge)
        else:
            try:
                fit_obj = base_fit(design, Y)
            except RankDeficient:
                ridge = 1e-10 * float(np.mean(np.sum(design**2, axis=0)))
                fit_obj = _ridge_fit(design, Y, ridge)
        self.fit_ = fit_obj
        self.effective_ridge_ = ridge
        beta = fit_obj.beta_hat
        if self.fit_intercept:
            self.coef_ = beta[:-1].T  # (K, p)
            self.intercept_ = beta[-1].copy()
        else:
            self.coef_ = beta.T
            self.intercept_ = np.zeros(len(self.classes_))
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return X @ self.coef_.T + self.intercept_

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]


def _ridge_fit(design: np.ndarray, Y: np.ndarray, ridge: float) -> LinearFit:
    """Penalised fit via row augmentation, so the QR path stays shared."""
    d = design.shape[1]
    X_aug = np.vstack([design, np.sqrt(ridge) * np.eye(d)])
    Y_aug = np.vstack([Y, np.zeros((d, Y.shape[1]))])
    fit_obj = base_fit(X_aug, Y_aug)
    # Report residuals on the data block only.
    resid = Y - design @ fit_obj.beta_hat
    return LinearFit(X=design, Y=Y, beta_hat=fit_obj.beta_hat,
                     residual_e=resid, qr_cache=fit_obj.qr_cache)


def onehot_fit(train: LabeledDataset, ridge: float = 0.0,
               fit_intercept: bool = True) -> OneHotLinearClassifier:
    """Fit the one-hot classifier on a labeled dataset."""
    clf = OneHotLinearClassifier(ridge=ridge, fit_intercept=fit_intercept)
    return clf.fit(train.X, train.y.astype(int))


def attack_success_rate(clf: OneHotLinearClassifier, test: LabeledDataset,
                        mask: TriggerMask, target_class: int) -> float:
    """Fraction of triggered non-target test samples classified as the target.

    Samples whose clean label already equals the target class are excluded
    from the denominator.
    """
    test.require_nonempty()
    keep = test.y.astype(int) != int(target_class)
    if not keep.any():
        raise EmptyDataset("no non-target samples to evaluate")
    shape = (mask.channels, mask.size_img, mask.size_img)
    X = test.X[keep].copy()
    for idx in range(X.shape[0]):
        X[idx] = apply_trigger(X[idx].reshape(shape), mask).ravel()
    preds = clf.predict(X)
    return float(np.mean(preds == int(target_class)))


def input_hessian_overlap(clf: OneHotLinearClassifier,
                          mask: TriggerMask) -> np.ndarray:
    """Squared cosine of each class coefficient image with the trigger pattern.

    For squared loss on a linear score the input Hessian of class c is
    beta_c beta_c^T, so its top eigenvector is beta_c up to sign; the overlap
    is computed on the zero-mean normalized coefficient image and is invariant
    under sign flips and positive rescaling.
    """
    pattern = mask.normalized_pattern.ravel()
    pattern = pattern - pattern.mean()
    pattern = pattern / np.linalg.norm(pattern)
    out = np.zeros(len(clf.classes_))
    for c in range(len(clf.classes_)):
        beta = clf.coef_[c]
        norm = np.linalg.norm(beta)
        if norm < 1e-12:
            raise ZeroCoefficient(f"class {clf.classes_[c]} coefficients are zero")
        v = beta - beta.mean()
        vnorm = np.linalg.norm(v)
        if vnorm < 1e-12:
            out[c] = 0.0  # constant image is orthogonal to any zero-mean pattern
            continue
        out[c] = float((v / vnorm) @ pattern) ** 2
    return out
