"""Experiment pipelines behind the command-line entry points.

Each runner takes a flat parameter dict (validated against its defaults) and
an output directory for auxiliary artifacts, and returns the schema and rows
of its results table.  All randomness is seeded through the parameters, so a
rerun with the same config writes byte-identical CSV rows.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from . import cluster_lab, fisher_flow, numlin, poison_theory, spectral_filter
from .cluster_lab import ClusterExperimentConfig, run_sweep, sweep_grid
from .data import LabeledDataset
from .exceptions import CollinearFeature, InvalidConfig
from .io import load_idx
from .kernels import KernelSpec
from .krr import KernelRidge, degrees_of_freedom
from .stepwise import (
    add_feature,
    attack_success_rate,
    full_refit_oracle,
    input_hessian_overlap,
    onehot_fit,
)
from .triggers import PoisonPolicy, make_square_mask, poison_dataset

CLUSTER_SWEEP_DEFAULTS = {
    "theta_grid": [0.0, 0.01, 0.02, 0.03],
    "kappa_grid": [0.0, 1.0],
    "n_clean": 40,
    "p": 4,
    "separation": 12.0,
    "r_over_ell": 0.5,
    "ridge_c": 1.0,
    "ell": 1.0,
    "y_t": 1.0,
    "seed": 0,
}

MNIST_STEPWISE_DEFAULTS = {
    "train_images": "data/mnist/train-images-idx3-ubyte.gz",
    "train_labels": "data/mnist/train-labels-idx1-ubyte.gz",
    "test_images": "data/mnist/t10k-images-idx3-ubyte.gz",
    "test_labels": "data/mnist/t10k-labels-idx1-ubyte.gz",
    "theta_grid": [0.0, 0.01, 0.05, 0.1],
    "target_class": 0,
    "side": 4,
    "size_img": 28,
    "ridge": 0.0,
    "base_seed": 42,
    "base_labels": "poisoned",  # labels seen by the stepwise base model
    "export_weights": True,
    "max_train": 0,  # 0 = use everything
    "max_test": 0,
    "seed": 0,
}

FISHER_FLOW_DEFAULTS = {
    "kappa": 1.0,
    "dt": 1e-3,
    "T": 2.0,
    "n": 20,
    "p": 4,
    "poison_scale": 4.0,
    "record_every": 20,
    "seed": 0,
}

FILTER_PROBE_DEFAULTS = {
    "ell": 1.0,
    "kappa_grid": [0.0, 0.5, 1.0, 2.0, 4.0],
    "n": 256,
    "spacing": 1.0,
    "lam": 0.1,
    "seed": 0,
}

VERIFY_ALL_DEFAULTS = {
    "seed": 0,
    "n_configs": 25,
}

DEFAULTS = {
    "cluster_sweep": CLUSTER_SWEEP_DEFAULTS,
    "mnist_stepwise": MNIST_STEPWISE_DEFAULTS,
    "fisher_flow": FISHER_FLOW_DEFAULTS,
    "filter_probe": FILTER_PROBE_DEFAULTS,
    "verify_all": VERIFY_ALL_DEFAULTS,
}


def _merge_params(experiment: str, params: dict) -> dict:
    defaults = DEFAULTS[experiment]
    unknown = set(params) - set(defaults)
    if unknown:
        raise InvalidConfig(
            f"unknown parameters for {experiment}: {sorted(unknown)}"
        )
    merged = dict(defaults)
    merged.update(params)
    for key, value in merged.items():
        if key.endswith("_grid") and not value:
            raise InvalidConfig(f"{key} must be nonempty")
    return merged


def _write_grid_csv(path: Path, grid: np.ndarray):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        for row in np.atleast_2d(grid):
            writer.writerow([repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# cluster_sweep


def run_cluster_sweep(params: dict, output_dir: Path
                      ) -> tuple[list[str], list[dict]]:
    p = _merge_params("cluster_sweep", params)
    base = ClusterExperimentConfig(
        n_clean=int(p["n_clean"]), p=int(p["p"]), theta=0.0,
        separation=float(p["separation"]), r_over_ell=float(p["r_over_ell"]),
        ridge_c=float(p["ridge_c"]), y_t=float(p["y_t"]), seed=int(p["seed"]),
        kernel=KernelSpec("exponential", float(p["ell"])),
    )
    grid = sweep_grid(base, p["theta_grid"], p["kappa_grid"])
    rows = run_sweep(grid)
    schema = [
        "theta", "kappa", "m", "r_over_ell", "seed",
        "delta_f_numeric", "delta_f_theory",
        "lambda_top_numeric", "lambda_theory", "lambda_clean",
        "overlap_sq", "detect_flag", "df", "residual", "error",
    ]
    return schema, [
        {key: getattr(row, key) for key in schema} for row in rows
    ]


# ---------------------------------------------------------------------------
# mnist_stepwise


def _load_split(images_path, labels_path, limit: int) -> LabeledDataset:
    images, labels = load_idx(images_path, labels_path)
    if limit:
        images, labels = images[:limit], labels[:limit]
    return LabeledDataset(images.reshape(images.shape[0], -1), labels)


def _accuracy(clf, dataset: LabeledDataset) -> float:
    return float(np.mean(clf.predict(dataset.X) == dataset.y.astype(int)))


def run_mnist_stepwise(params: dict, output_dir: Path
                       ) -> tuple[list[str], list[dict]]:
    p = _merge_params("mnist_stepwise", params)
    train = _load_split(p["train_images"], p["train_labels"], int(p["max_train"]))
    test = _load_split(p["test_images"], p["test_labels"], int(p["max_test"]))
    mask = make_square_mask(size_img=int(p["size_img"]), channels=1,
                            side=int(p["side"]))
    target = int(p["target_class"])
    classes = sorted(np.unique(train.y.astype(int)))

    schema = (["theta", "clean_acc", "asr", "beta_new_target"]
              + [f"overlap_sq_{c}" for c in classes])
    rows = []
    for theta in p["theta_grid"]:
        policy = PoisonPolicy(theta=float(theta), target_class=target,
                              base_seed=int(p["base_seed"]))
        poisoned, poison_idx = poison_dataset(train, mask, policy)
        clf = onehot_fit(poisoned, ridge=float(p["ridge"]))
        row = {
            "theta": float(theta),
            "clean_acc": _accuracy(clf, test),
            "asr": attack_success_rate(clf, test, mask, target),
            "beta_new_target": math.nan,
        }
        overlaps = input_hessian_overlap(clf, mask)
        for c, value in zip(classes, overlaps):
            row[f"overlap_sq_{c}"] = float(value)
        if p["export_weights"] and len(poison_idx):
            row["beta_new_target"] = _export_step_panels(
                train, poisoned, poison_idx, clf, mask, target,
                str(p["base_labels"]), float(p["ridge"]),
                output_dir, float(theta), int(p["size_img"]),
            )
        rows.append(row)
    return schema, rows


def _export_step_panels(train: LabeledDataset, poisoned: LabeledDataset,
                        poison_idx: np.ndarray, pixel_clf, mask, target: int,
                        base_labels: str, ridge: float, output_dir: Path,
                        theta: float, size_img: int) -> float:
    """Base / step / full weight panels for the target class, as CSV grids.

    The base model sees the un-triggered pixels with either the poisoned or
    the clean labels; the trigger-presence indicator column is then appended
    in closed form (step) and by refitting (full), and the three coefficient
    images are differenced.  Returns the indicator coefficient of the target
    class.
    """
    if base_labels not in ("poisoned", "clean"):
        raise InvalidConfig(f"base_labels must be poisoned|clean, got {base_labels!r}")
    y_base = poisoned.y if base_labels == "poisoned" else train.y
    base_ds = LabeledDataset(train.X, y_base)
    base_clf = onehot_fit(base_ds, ridge=ridge)

    x_new = np.zeros(train.n_samples)
    x_new[poison_idx] = 1.0
    try:
        update = add_feature(base_clf.fit_, x_new)
    except CollinearFeature:
        return math.nan
    full_coef = full_refit_oracle(base_clf.fit_.X, x_new, base_clf.fit_.Y)

    n_pix = size_img * size_img
    k = int(np.searchsorted(base_clf.classes_, target))
    base_img = base_clf.fit_.beta_hat[:n_pix, k].reshape(size_img, size_img)
    step_img = update.beta_old_adjusted[:n_pix, k].reshape(size_img, size_img)
    full_img = full_coef[:n_pix, k].reshape(size_img, size_img)
    pixel_img = pixel_clf.coef_[k].reshape(size_img, size_img)

    tag = repr(float(theta))
    panels = {
        f"weights_theta{tag}_full_minus_base.csv": full_img - base_img,
        f"weights_theta{tag}_step_minus_base.csv": step_img - base_img,
        f"weights_theta{tag}_step_minus_full.csv": step_img - full_img,
        f"weights_theta{tag}_poisoned_model.csv": pixel_img,
    }
    for name, grid in panels.items():
        _write_grid_csv(Path(output_dir) / name, grid)
    return float(np.asarray(update.beta_new)[k])


# ---------------------------------------------------------------------------
# fisher_flow


def run_fisher_flow(params: dict, output_dir: Path
                    ) -> tuple[list[str], list[dict]]:
    p = _merge_params("fisher_flow", params)
    rng = np.random.default_rng(int(p["seed"]))
    n, dim = int(p["n"]), int(p["p"])
    X = rng.standard_normal((n, dim))
    w0 = rng.standard_normal(dim)
    w0[0] *= float(p["poison_scale"])  # concentrated sensitivity direction
    y = X @ w0 + 0.1 * rng.standard_normal(n)
    data = LabeledDataset(X, y)
    model = fisher_flow.LinearModel()
    trace = fisher_flow.integrate_flow(
        model, w0, data, kappa=float(p["kappa"]), include_loss_term=False,
        dt=float(p["dt"]), T=float(p["T"]),
    )
    every = max(1, int(p["record_every"]))
    schema = ["t", "probe", "energy", "bound"]
    rows = []
    for i in range(trace.probes.shape[0]):
        for k in range(0, len(trace.times), every):
            rows.append({
                "t": float(trace.times[k]),
                "probe": i,
                "energy": float(trace.energies[i, k]),
                "bound": float(trace.bound[i, k]),
            })
    return schema, rows


# ---------------------------------------------------------------------------
# filter_probe


def run_filter_probe(params: dict, output_dir: Path
                     ) -> tuple[list[str], list[dict]]:
    p = _merge_params("filter_probe", params)
    n, spacing = int(p["n"]), float(p["spacing"])
    ell, lam = float(p["ell"]), float(p["lam"])
    probe = spectral_filter.effective_lengthscale_probe(
        ell, p["kappa_grid"], n=n, spacing=spacing, lam=lam,
    )
    # Response curves per kappa, for external plotting.
    curve_path = Path(output_dir) / "response_curves.csv"
    with open(curve_path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["kappa", "abs_omega", "response"])
        for kappa in p["kappa_grid"]:
            spectrum = spectral_filter.exponential_mode_spectrum(
                n=n, ell=ell, spacing=spacing, lam=lam, eta=float(kappa),
            )
            abs_omega = np.sort(np.unique(np.abs(spectrum.frequencies)))
            for omega in abs_omega:
                writer.writerow([
                    repr(float(kappa)), repr(float(omega)),
                    repr(spectral_filter.mode_response(spectrum, omega)),
                ])
    schema = ["kappa", "ell_eff", "residual", "slope", "intercept", "r_squared"]
    rows = [
        {
            "kappa": float(kappa), "ell_eff": float(e), "residual": float(r),
            "slope": probe.slope, "intercept": probe.intercept,
            "r_squared": probe.r_squared,
        }
        for kappa, e, r in zip(probe.kappas, probe.ell_eff, probe.residuals)
    ]
    return schema, rows


# ---------------------------------------------------------------------------
# verify_all


def _check_gain_law(seed: int, n_configs: int) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_configs):
        cfg = ClusterExperimentConfig(
            n_clean=int(rng.integers(10, 30)), p=int(rng.integers(2, 5)),
            m=int(rng.integers(1, 25)),
            separation=float(rng.uniform(10, 18)),
            r_over_ell=float(rng.uniform(0.0, 2.0)),
            ridge_c=float(rng.uniform(0.1, 5.0)),
            y_t=float(rng.choice([-1.0, 1.0, 2.0])),
            seed=int(rng.integers(0, 2**31)),
            kernel=KernelSpec("exponential", float(rng.uniform(0.5, 2.0))),
        )
        dataset, cluster = cluster_lab.build_cluster_dataset(cfg)
        _, _, err = cluster_lab.verify_gain(dataset, cluster, cfg.kernel,
                                            cfg.ridge_c)
        worst = max(worst, err)
    return worst <= 1e-8, f"worst |sum(alpha_P) - y_t S| = {worst:.3e}"


def _check_efficacy_law(seed: int, n_configs: int) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_configs):
        cfg = ClusterExperimentConfig(
            n_clean=int(rng.integers(10, 30)), p=int(rng.integers(2, 5)),
            m=int(rng.integers(1, 25)),
            separation=float(rng.uniform(10, 18)),
            r_over_ell=float(rng.uniform(0.0, 1.5)),
            ridge_c=float(rng.uniform(0.1, 5.0)),
            y_t=float(rng.choice([-1.0, 1.0])),
            seed=int(rng.integers(0, 2**31)),
        )
        dataset, cluster = cluster_lab.build_cluster_dataset(cfg)
        row = cluster_lab.run_sweep([cfg])[0]
        if row.error:
            return False, row.error
        denom = max(abs(row.delta_f_theory), 1e-12)
        worst = max(worst, abs(row.delta_f_numeric - row.delta_f_theory) / denom)
    saturated = poison_theory.poison_gain(10**9, 1.0, 1.0)
    sat_ok = abs(saturated - 1.0) <= 1e-6
    return worst <= 1e-6 and sat_ok, (
        f"worst rel err = {worst:.3e}; S(1e9) = {saturated!r}"
    )


def _check_spike_law(seed: int, n_configs: int) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_configs):
        cfg = ClusterExperimentConfig(
            n_clean=int(rng.integers(10, 25)), p=int(rng.integers(2, 5)),
            m=int(rng.integers(1, 25)), separation=float(rng.uniform(10, 18)),
            r_over_ell=float(rng.uniform(0.1, 1.5)),
            ridge_c=float(rng.uniform(0.5, 5.0)),
            seed=int(rng.integers(0, 2**31)),
        )
        dataset, cluster = cluster_lab.build_cluster_dataset(cfg)
        _, _, rel = cluster_lab.verify_spike_law(dataset, cluster, cfg.kernel,
                                                 cfg.ridge_c)
        worst = max(worst, rel)
    return worst <= 1e-6, f"worst rel err = {worst:.3e}"


def _check_near_clone(seed: int) -> tuple[bool, str]:
    ratios = np.logspace(-3, -1, 9)
    worst = 0.0
    for ratio in ratios:
        spec = KernelSpec("exponential", 1.0)
        cluster = poison_theory.PoisonCluster(
            zeta=np.zeros(3), m=10, y_t=1.0,
            x0=np.array([ratio, 0.0, 0.0]),
        )
        report = poison_theory.gn_spike(spec, cluster, c=1.0)
        _, lam_approx, bound = poison_theory.near_clone(ratio, 1.0, 10, 1.0, 1.0)
        rel = abs(report.lambda_gn - lam_approx) / lam_approx
        if rel > 3.0 * bound:
            return False, f"Taylor error {rel:.3e} above 3 (r/l)^2 at r={ratio}"
        worst = max(worst, rel / bound)
    return True, f"worst (Taylor err)/(r/l)^2 = {worst:.3f}"


def _check_capacity(seed: int) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    kappas = [0.0, 0.1, 0.5, 1.0, 5.0]
    for _ in range(10):
        n, dim = int(rng.integers(8, 20)), int(rng.integers(1, 4))
        X = rng.standard_normal((n, dim))
        y = rng.standard_normal(n)
        spec = KernelSpec("exponential", 1.0)
        dfs, resids = [], []
        for kappa in kappas:
            dfs.append(degrees_of_freedom(spec, X, 1.0, kappa))
            model = KernelRidge(ridge_c=1.0, kappa=kappa).fit(X, y)
            resids.append(model.training_residual())
        if not all(a > b for a, b in zip(dfs, dfs[1:])):
            return False, f"df not strictly decreasing: {dfs}"
        if not all(a < b for a, b in zip(resids, resids[1:])):
            return False, f"residual not strictly increasing: {resids}"
    return True, "df strictly down, residual strictly up on 10 datasets"


def _check_fisher_contraction(seed: int) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    data = LabeledDataset(np.zeros((1, 3)), np.zeros(1))
    # Monotone decay on anisotropic toys (within the Euler tolerance).
    for _ in range(5):
        toy = fisher_flow.LinearGradientToy(rng.standard_normal((3, 3)))
        trace = fisher_flow.integrate_flow(toy, rng.standard_normal(3), data,
                                           kappa=0.5, dt=1e-3, T=1.0)
        if not fisher_flow.contraction_check(trace).monotone.all():
            return False, "monotone decay violated on an anisotropic toy"
    # Exponential envelope in the isotropic regime, where the directional
    # lower bound on the sensitivity operator actually holds.
    Q = np.linalg.qr(rng.standard_normal((3, 3)))[0]
    toy = fisher_flow.LinearGradientToy(1.2 * Q)
    trace = fisher_flow.integrate_flow(toy, rng.standard_normal(3), data,
                                       kappa=0.5, dt=1e-3, T=1.0)
    report = fisher_flow.contraction_check(trace)
    return report.all_pass, (
        f"monotone on 5 anisotropic toys; isotropic envelope "
        f"bounded={report.bounded.tolist()}"
    )


def _check_stepwise_update(seed: int) -> tuple[bool, str]:
    from .stepwise import base_fit

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(50):
        n, dim = 30, 4
        X = rng.standard_normal((n, dim))
        Y = rng.standard_normal(n)
        x_new = rng.standard_normal(n)
        fit_obj = base_fit(X, Y)
        update = add_feature(fit_obj, x_new)
        oracle = full_refit_oracle(X, x_new, Y)
        dev = max(
            float(np.max(np.abs(oracle[:-1] - update.beta_old_adjusted))),
            abs(float(oracle[-1]) - float(update.beta_new)),
        )
        worst = max(worst, dev)
    return worst <= 1e-10, f"worst coefficient deviation = {worst:.3e}"


def _check_lanczos(seed: int) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(5):
        dim = int(rng.integers(20, 40))
        A = rng.standard_normal((dim, dim))
        A = 0.5 * (A + A.T)
        result = numlin.lanczos(numlin.operator_from_matrix(A),
                                iterations=dim, seed=int(rng.integers(2**31)))
        dense = np.linalg.eigvalsh(A)[::-1]
        scale = max(abs(dense[0]), 1e-12)
        worst = max(worst, abs(result.eigenvalues[0] - dense[0]) / scale)
        gram_dev = np.max(np.abs(
            result.eigenvectors.T @ result.eigenvectors
            - np.eye(result.eigenvectors.shape[1])
        ))
        worst = max(worst, float(gram_dev))
    return worst <= 1e-6, f"worst top-eigenvalue/orthonormality dev = {worst:.3e}"


def _check_filter(seed: int) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    spectrum = spectral_filter.exponential_mode_spectrum(
        n=128, ell=1.5, lam=0.3, eta=0.7,
    )
    signal = rng.standard_normal(128)
    filtered = spectral_filter.shrinkage_filter(signal, spectrum)
    expected = np.fft.ifft(
        np.fft.fft(signal) * spectral_filter.shrinkage_factors(spectrum)
    ).real
    dev = float(np.max(np.abs(filtered - expected)))
    abs_omega = np.sort(np.unique(np.abs(spectrum.frequencies)))
    responses = [spectral_filter.mode_response(spectrum, w) for w in abs_omega]
    monotone = all(a > b for a, b in zip(responses, responses[1:]))
    probe = spectral_filter.effective_lengthscale_probe(1.0, [0.0, 1.0, 4.0],
                                                        n=128)
    nondecreasing = bool(np.all(np.diff(probe.ell_eff) >= -1e-9))
    ok = dev <= 1e-10 and monotone and nondecreasing
    return ok, (
        f"per-mode dev = {dev:.3e}, response monotone = {monotone}, "
        f"ell_eff nondecreasing = {nondecreasing}"
    )


def run_verify_all(params: dict, output_dir: Path
                   ) -> tuple[list[str], list[dict]]:
    p = _merge_params("verify_all", params)
    seed, n_configs = int(p["seed"]), int(p["n_configs"])
    checks = [
        ("gain_law", lambda: _check_gain_law(seed, n_configs)),
        ("efficacy_law", lambda: _check_efficacy_law(seed + 1, max(5, n_configs // 3))),
        ("spike_law", lambda: _check_spike_law(seed + 2, max(5, n_configs // 3))),
        ("near_clone", lambda: _check_near_clone(seed + 3)),
        ("capacity_monotone", lambda: _check_capacity(seed + 4)),
        ("fisher_contraction", lambda: _check_fisher_contraction(seed + 5)),
        ("stepwise_update", lambda: _check_stepwise_update(seed + 6)),
        ("lanczos_fidelity", lambda: _check_lanczos(seed + 7)),
        ("spectral_filter", lambda: _check_filter(seed + 8)),
    ]
    rows = []
    for name, fn in checks:
        try:
            passed, detail = fn()
        except Exception as exc:
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        rows.append({"check": name,
                     "status": "PASS" if passed else "FAIL",
                     "detail": detail})
    return ["check", "status", "detail"], rows


RUNNERS = {
    "cluster_sweep": run_cluster_sweep,
    "mnist_stepwise": run_mnist_stepwise,
    "fisher_flow": run_fisher_flow,
    "filter_probe": run_filter_probe,
    "verify_all": run_verify_all,
}
