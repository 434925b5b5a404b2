"""Synthetic cloned-cluster experiments on kernel ridge regression.

Builds clean-plus-poison datasets whose geometry realises the tight-cluster
assumptions by construction (the poison block sits ``separation * l`` away
from the clean mass, so cross-kernel terms are exponentially small), then
checks every closed-form poison law against a dense numeric KRR fit, and
runs theta x kappa sweeps producing the safety-efficacy frontier rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import LabeledDataset
from .exceptions import EmptyDataset, InvalidConfig, SingularSystem
from .kernels import KernelSpec, eval_kernel, kernel_gradient
from .krr import KernelRidge, degrees_of_freedom
from .numlin import lanczos
from .poison_theory import PoisonCluster, poison_gain

# Diagonal rescue for Gram matrices of exact duplicates at ridge_c = 0.
JITTER_SCALE = 1e-10


@dataclass(frozen=True)
class ClusterExperimentConfig:
    """One cell of a cloned-cluster experiment.

    Exactly one of ``m`` (clone count) and ``theta`` (poison fraction) must
    be given; theta resolves to m = round(theta / (1 - theta) * n_clean) so
    that m / (n_clean + m) ~ theta.  ``separation`` is the distance from the
    clean mean to the poison site in units of the length scale;
    ``r_over_ell`` places the trigger point relative to the poison site.
    """

    n_clean: int
    p: int
    m: int | None = None
    theta: float | None = None
    separation: float = 10.0
    r_over_ell: float = 0.0
    ridge_c: float = 1.0
    kappa: float = 0.0
    y_t: float = 1.0
    seed: int = 0
    kernel: KernelSpec = field(default_factory=lambda: KernelSpec("exponential", 1.0))

    def __post_init__(self):
        if self.n_clean < 1 or self.p < 1:
            raise InvalidConfig("need n_clean >= 1 and p >= 1")
        if (self.m is None) == (self.theta is None):
            raise InvalidConfig("give exactly one of m and theta")
        if self.theta is not None and not 0.0 <= self.theta < 1.0:
            raise InvalidConfig(f"theta={self.theta} outside [0, 1)")
        if self.m is not None and self.m < 0:
            raise InvalidConfig(f"m={self.m} negative")
        if self.separation < 0 or self.r_over_ell < 0:
            raise InvalidConfig("separation and r_over_ell must be nonnegative")
        if self.ridge_c < 0 or self.kappa < 0:
            raise InvalidConfig("ridge_c and kappa must be nonnegative")

    @property
    def resolved_m(self) -> int:
        if self.m is not None:
            return self.m
        return int(round(self.theta / (1.0 - self.theta) * self.n_clean))

    @property
    def resolved_theta(self) -> float:
        m = self.resolved_m
        return m / (self.n_clean + m)


@dataclass(frozen=True)
class SweepRow:
    """One sweep cell: numeric vs closed-form quantities plus diagnostics."""

    theta: float
    kappa: float
    m: int
    r_over_ell: float
    seed: int
    delta_f_numeric: float
    delta_f_theory: float
    lambda_top_numeric: float
    lambda_theory: float
    lambda_clean: float
    overlap_sq: float
    detect_flag: bool
    df: float
    residual: float
    error: str | None = None


def clean_label(x: np.ndarray) -> float:
    """Smooth bounded labels for the clean blob: sin of the first coordinate."""
    return float(np.sin(x[0]))


def build_cluster_dataset(cfg: ClusterExperimentConfig
                          ) -> tuple[LabeledDataset, PoisonCluster]:
    """Draw the clean blob, plant the clones, and place the trigger point.

    Clean points are Gaussian with standard deviation l/2 around the origin,
    labelled sin(x_1).  The poison site sits ``separation * l`` from the
    empirical clean mean along the first axis; the trigger point is offset by
    ``r_over_ell * l`` in a seeded random unit direction, so that overlap
    baselines against the clean curvature are at chance level.
    """
    ell = cfg.kernel.length_scale
    m = cfg.resolved_m
    rng = np.random.default_rng(cfg.seed)
    X_clean = rng.standard_normal((cfg.n_clean, cfg.p)) * (0.5 * ell)
    y_clean = np.array([clean_label(x) for x in X_clean])
    center = X_clean.mean(axis=0)
    zeta = center.copy()
    zeta[0] += cfg.separation * ell
    direction = rng.standard_normal(cfg.p)
    direction /= np.linalg.norm(direction)
    x0 = zeta + cfg.r_over_ell * ell * direction

    X = np.vstack([X_clean, np.tile(zeta, (m, 1))]) if m else X_clean
    y = np.concatenate([y_clean, np.full(m, cfg.y_t)]) if m else y_clean
    flags = np.concatenate([np.zeros(cfg.n_clean, dtype=bool),
                            np.ones(m, dtype=bool)])
    dataset = LabeledDataset(X, y, flags, seed=cfg.seed)
    cluster = PoisonCluster(zeta=zeta, m=m, y_t=cfg.y_t, x0=x0)
    return dataset, cluster


def _duplicate_jitter(spec: KernelSpec, X) -> float:
    # 1e-10 * trace(K) / n without materialising K.
    if spec.family == "exponential":
        return JITTER_SCALE
    return JITTER_SCALE * float(np.mean(np.sum(np.asarray(X)**2, axis=1)))


def _fit(spec: KernelSpec, X, y, ridge_c: float, kappa: float = 0.0) -> KernelRidge:
    """KRR fit with the duplicate-Gram jitter fallback."""
    try:
        return KernelRidge(kernel=spec.family, length_scale=spec.length_scale,
                           ridge_c=ridge_c, kappa=kappa).fit(X, y)
    except SingularSystem:
        return KernelRidge(kernel=spec.family, length_scale=spec.length_scale,
                           ridge_c=ridge_c, kappa=kappa,
                           jitter=_duplicate_jitter(spec, X)).fit(X, y)


def verify_gain(dataset: LabeledDataset, cluster: PoisonCluster,
                spec: KernelSpec, ridge_c: float
                ) -> tuple[float, float, float]:
    """Summed dual mass of the poison block vs the closed-form gain.

    Returns (numeric sum of alpha over the poison block, y_t * S, abs err).
    The error is only guaranteed small under isolation (separation >= 10 l);
    at small separation the measured value is still returned so assumption
    violations can be quantified.
    """
    if not dataset.poison_flags.any():
        raise EmptyDataset("dataset carries no poison block")
    model = _fit(spec, dataset.X, dataset.y, ridge_c)
    numeric = float(model.alpha_[dataset.poison_flags].sum())
    k_zeta = eval_kernel(spec, cluster.zeta, cluster.zeta)
    theory = cluster.y_t * poison_gain(cluster.m, ridge_c, k_zeta)
    return numeric, theory, abs(numeric - theory)


def verify_spike_law(dataset: LabeledDataset, cluster: PoisonCluster,
                     spec: KernelSpec, ridge_c: float
                     ) -> tuple[float, float, float]:
    """Top eigenvalue of the numeric Gauss-Newton matrix vs the closed form.

    The numeric side assembles grad_f grad_f^T at the trigger from the
    fitted model and takes its top eigenvalue; the closed form is
    |grad_x k(x0, zeta)|^2 (y_t S)^2.  Returns (numeric, theory, rel err);
    when the theory value is exactly zero the absolute error is reported
    instead.
    """
    model = _fit(spec, dataset.X, dataset.y, ridge_c)
    g = model.score_gradient(cluster.x0)
    lambda_numeric = float(np.linalg.eigvalsh(np.outer(g, g))[-1])
    k_zeta = eval_kernel(spec, cluster.zeta, cluster.zeta)
    S = poison_gain(cluster.m, ridge_c, k_zeta)
    gk = kernel_gradient(spec, cluster.x0, cluster.zeta)
    lambda_theory = float(gk @ gk) * (cluster.y_t * S) ** 2
    if lambda_theory == 0.0:
        return lambda_numeric, lambda_theory, abs(lambda_numeric)
    rel = abs(lambda_numeric - lambda_theory) / abs(lambda_theory)
    return lambda_numeric, lambda_theory, rel


def estimate_lambda_clean(model: KernelRidge, X_clean, y_clean,
                          mode: str = "mean") -> float:
    """Background top input curvature over the clean points.

    The estimator is the mean (default) or max over clean points of the top
    eigenvalue of the input loss Hessian.  The mean is this artifact's
    documented choice; neither variant is canonical.
    """
    X_clean = np.atleast_2d(np.asarray(X_clean, dtype=np.float64))
    y_clean = np.atleast_1d(np.asarray(y_clean, dtype=np.float64))
    if X_clean.shape[0] == 0:
        raise EmptyDataset("need at least one clean point")
    tops = [
        float(np.linalg.eigvalsh(model.input_hessian_loss(x, y))[-1])
        for x, y in zip(X_clean, y_clean)
    ]
    if mode == "mean":
        return float(np.mean(tops))
    if mode == "max":
        return float(np.max(tops))
    raise ValueError(f"unknown mode {mode!r}")


def _sweep_cell(cfg: ClusterExperimentConfig) -> SweepRow:
    dataset, cluster = build_cluster_dataset(cfg)
    spec = cfg.kernel
    clean = dataset.clean_subset()
    model_clean = _fit(spec, clean.X, clean.y, cfg.ridge_c, cfg.kappa)
    model_pois = _fit(spec, dataset.X, dataset.y, cfg.ridge_c, cfg.kappa)

    delta_numeric = model_pois.predict(cluster.x0) - model_clean.predict(cluster.x0)
    k_zeta = eval_kernel(spec, cluster.zeta, cluster.zeta)
    k0 = eval_kernel(spec, cluster.x0, cluster.zeta)
    S = poison_gain(cluster.m, cfg.ridge_c, k_zeta)
    delta_theory = k0 * cluster.y_t * S

    g = model_pois.score_gradient(cluster.x0)
    lambda_numeric = float(np.linalg.eigvalsh(np.outer(g, g))[-1])
    gk = kernel_gradient(spec, cluster.x0, cluster.zeta)
    lambda_theory = float(gk @ gk) * (cluster.y_t * S) ** 2

    lambda_clean = estimate_lambda_clean(model_pois, clean.X, clean.y)
    detect_flag = bool(lambda_numeric >= lambda_clean)

    op = model_pois.hvp_operator(dataset)
    spectrum = lanczos(op, iterations=10, seed=cfg.seed)
    top_vec = spectrum.top_eigenvector
    offset = cluster.x0 - cluster.zeta
    r = float(np.linalg.norm(offset))
    if r > 0:
        overlap_sq = float(top_vec @ (offset / r)) ** 2
    else:
        overlap_sq = math.nan  # poison direction undefined at r = 0

    try:
        df = degrees_of_freedom(spec, dataset.X, cfg.ridge_c, cfg.kappa)
    except SingularSystem:
        df = degrees_of_freedom(spec, dataset.X, cfg.ridge_c, cfg.kappa,
                                jitter=_duplicate_jitter(spec, dataset.X))
    residual = model_pois.training_residual()

    return SweepRow(
        theta=cfg.resolved_theta, kappa=cfg.kappa, m=cluster.m,
        r_over_ell=cfg.r_over_ell, seed=cfg.seed,
        delta_f_numeric=float(delta_numeric), delta_f_theory=float(delta_theory),
        lambda_top_numeric=lambda_numeric, lambda_theory=lambda_theory,
        lambda_clean=lambda_clean, overlap_sq=overlap_sq,
        detect_flag=detect_flag, df=float(df), residual=float(residual),
    )


def run_sweep(cfg_grid: list[ClusterExperimentConfig]) -> list[SweepRow]:
    """Evaluate every config cell; failures are recorded, not raised.

    Cells are independent pure computations evaluated in grid order, so two
    runs over the same grid produce identical tables.
    """
    if not cfg_grid:
        raise InvalidConfig("empty config grid")
    rows = []
    for cfg in cfg_grid:
        try:
            rows.append(_sweep_cell(cfg))
        except Exception as exc:  # long grids must survive singular corners
            rows.append(SweepRow(
                theta=cfg.resolved_theta, kappa=cfg.kappa, m=cfg.resolved_m,
                r_over_ell=cfg.r_over_ell, seed=cfg.seed,
                delta_f_numeric=math.nan, delta_f_theory=math.nan,
                lambda_top_numeric=math.nan, lambda_theory=math.nan,
                lambda_clean=math.nan, overlap_sq=math.nan,
                detect_flag=False, df=math.nan, residual=math.nan,
                error=f"{type(exc).__name__}: {exc}",
            ))
    return rows


def sweep_grid(base: ClusterExperimentConfig, thetas, kappas
               ) -> list[ClusterExperimentConfig]:
    """Cartesian theta x kappa grid over a base config, in grid order."""
    return [
        replace(base, m=None, theta=float(theta), kappa=float(kappa))
        for theta in thetas
        for kappa in kappas
    ]
