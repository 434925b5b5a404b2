"""Dense linear-algebra substrate and Krylov machinery.

Symmetric positive-definite solves, economy QR, tridiagonal
eigendecomposition, and a Lanczos iteration over an abstract matrix-vector
operator.  Everything here is deterministic: random start vectors come from
a counter-based Philox generator keyed by an explicit seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .exceptions import DimensionMismatch, NotPositiveDefinite, RankDeficient

BREAKDOWN_TOL = 1e-8


@dataclass(frozen=True)
class LinearOperator:
    """Symmetric operator given only through matrix-vector products.

    ``apply`` must be deterministic and numerically symmetric; implementations
    must be safe for concurrent calls on disjoint vectors or document that
    they are single-threaded.
    """

    dim: int
    apply: Callable[[np.ndarray], np.ndarray]

    def __call__(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.dim,):
            raise DimensionMismatch(f"vector shape {v.shape}, operator dim {self.dim}")
        out = np.asarray(self.apply(v), dtype=np.float64)
        if out.shape != (self.dim,):
            raise DimensionMismatch(f"apply returned shape {out.shape}")
        return out

    def materialize(self) -> np.ndarray:
        """Apply to the identity columns; for tests and small dims only."""
        cols = [self(e) for e in np.eye(self.dim)]
        return np.column_stack(cols)


def operator_from_matrix(A: np.ndarray) -> LinearOperator:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"expected square matrix, got {A.shape}")
    return LinearOperator(dim=A.shape[0], apply=lambda v: A @ v)


def symmetry_residual(op: LinearOperator, n_probes: int = 5, seed: int = 0) -> float:
    """Largest normalised |<u,Av> - <v,Au>| over random probe pairs."""
    rng = np.random.Generator(np.random.Philox(seed))
    worst = 0.0
    for _ in range(n_probes):
        u = rng.standard_normal(op.dim)
        v = rng.standard_normal(op.dim)
        au, av = op(u), op(v)
        scale = np.linalg.norm(u) * np.linalg.norm(v)
        norm_est = max(np.linalg.norm(au) / np.linalg.norm(u),
                       np.linalg.norm(av) / np.linalg.norm(v), 1e-300)
        worst = max(worst, abs(u @ av - v @ au) / (scale * norm_est))
    return worst


def solve_spd(A: np.ndarray, b: np.ndarray, jitter: float = 0.0) -> np.ndarray:
    """Solve (A + jitter*I) x = b for symmetric positive-definite A.

    ``b`` may be a vector or a matrix of stacked right-hand sides.
    Raises NotPositiveDefinite when the Cholesky factorisation fails.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"expected square matrix, got {A.shape}")
    if b.shape[0] != A.shape[0]:
        raise DimensionMismatch(f"rhs length {b.shape[0]} != system size {A.shape[0]}")
    if jitter < 0:
        raise ValueError("jitter must be nonnegative")
    M = A if jitter == 0.0 else A + jitter * np.eye(A.shape[0])
    try:
        factor = scipy.linalg.cho_factor(M, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(
            f"Cholesky failed with jitter={jitter!r}: {exc}"
        ) from exc
    return scipy.linalg.cho_solve(factor, b, check_finite=False)


def qr_economy(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Economy QR of a full-column-rank matrix.

    Returns (Q, R) with orthonormal columns, upper-triangular R and the
    positive-diagonal sign convention; raises RankDeficient when a diagonal
    of R falls below 1e-12 * ||A||.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise DimensionMismatch(f"expected 2-D design, got shape {A.shape}")
    n, p = A.shape
    if n < p:
        raise DimensionMismatch(f"need n >= p, got {A.shape}")
    Q, R = np.linalg.qr(A, mode="reduced")
    flip = np.sign(np.diag(R))
    flip[flip == 0] = 1.0
    Q = Q * flip
    R = flip[:, None] * R
    scale = np.linalg.norm(A)
    if np.abs(np.diag(R)).min(initial=np.inf) < 1e-12 * max(scale, 1e-300):
        raise RankDeficient(
            f"R diagonal below 1e-12 * ||A||; column rank < {p}"
        )
    return Q, R


def symtrid_eig(alpha, beta) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric tridiagonal matrix.

    ``alpha`` holds the diagonal, ``beta`` the off-diagonal; eigenvalues are
    returned descending with matching eigenvector columns.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if alpha.ndim != 1 or beta.ndim != 1 or len(beta) != len(alpha) - 1:
        raise DimensionMismatch(
            f"need len(beta) == len(alpha) - 1, got {len(alpha)=} {len(beta)=}"
        )
    if len(alpha) == 1:
        return alpha.copy(), np.ones((1, 1))
    vals, vecs = scipy.linalg.eigh_tridiagonal(alpha, beta)
    order = np.argsort(vals)[::-1]
    return vals[order], vecs[:, order]


@dataclass(frozen=True)
class LanczosResult:
    """Ritz values (descending) and orthonormal Ritz vectors in operator space."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # (dim, k) columns
    iterations_run: int
    breakdown: bool = False
    breakdown_beta: float | None = None

    @property
    def top_eigenvalue(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def top_eigenvector(self) -> np.ndarray:
        return self.eigenvectors[:, 0]


def lanczos(
    op: LinearOperator,
    iterations: int = 10,
    seed: int = 0,
    reorthogonalize: bool = True,
) -> LanczosResult:
    """Lanczos iteration for the extreme eigenpairs of a symmetric operator.

    Builds the Krylov basis from a Philox-seeded random start vector, stops
    early when the residual norm beta drops below 1e-8 (reported as
    ``breakdown``, not an error), and projects the tridiagonal eigenvectors
    back to operator space.  Full reorthogonalization against the whole basis
    is the default because the plain three-term recurrence loses orthogonality
    in floating point; pass ``reorthogonalize=False`` for the bare recurrence.

    Eigenvector signs are fixed by making the largest-magnitude entry
    positive, so results are reproducible across runs.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    rng = np.random.Generator(np.random.Philox(seed))
    q = rng.standard_normal(op.dim)
    q /= np.linalg.norm(q)

    basis = [q]
    alphas: list[float] = []
    betas: list[float] = []
    q_prev = np.zeros(op.dim)
    beta_prev = 0.0
    breakdown = False
    breakdown_beta: float | None = None

    for k in range(iterations):
        r = op(q)
        a = float(q @ r)
        alphas.append(a)
        r = r - a * q - beta_prev * q_prev
        if reorthogonalize:
            B = np.column_stack(basis)
            r = r - B @ (B.T @ r)
        beta = float(np.linalg.norm(r))
        if beta < BREAKDOWN_TOL:
            if k < iterations - 1:
                breakdown = True
                breakdown_beta = beta
            break
        if k == iterations - 1:
            break
        q_prev, beta_prev = q, beta
        q = r / beta
        basis.append(q)
        betas.append(beta)

    vals, V = symtrid_eig(np.array(alphas), np.array(betas))
    Q = np.column_stack(basis)
    ritz = Q @ V
    # Deterministic sign: largest-magnitude entry of each Ritz vector positive.
    for j in range(ritz.shape[1]):
        i = int(np.argmax(np.abs(ritz[:, j])))
        if ritz[i, j] < 0:
            ritz[:, j] = -ritz[:, j]
    return LanczosResult(
        eigenvalues=vals,
        eigenvectors=ritz,
        iterations_run=len(alphas),
        breakdown=breakdown,
        breakdown_beta=breakdown_beta,
    )
