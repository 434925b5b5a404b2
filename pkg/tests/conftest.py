import numpy as np
import pytest

from poisonlens.data import LabeledDataset


def central_gradient(f, x, step=1e-5):
    """Finite-difference gradient of a scalar function, independent oracle."""
    x = np.asarray(x, dtype=np.float64)
    h = step * max(1.0, float(np.linalg.norm(x)))
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def central_hessian(f, x, step=1e-4):
    """Finite-difference Hessian of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    h = step * max(1.0, float(np.linalg.norm(x)))
    p = len(x)
    H = np.zeros((p, p))
    for i in range(p):
        for j in range(p):
            ei = np.zeros(p)
            ej = np.zeros(p)
            ei[i] = h
            ej[j] = h
            H[i, j] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * h * h)
    return 0.5 * (H + H.T)


def make_synthetic_digits(n_per_class=120, n_classes=4, size=16,
                          template_seed=0, noise_seed=0, noise=0.15):
    """Class-templated images for end-to-end poisoning tests.

    Each class gets a smooth random template (shared across splits via
    ``template_seed``) that is dark near the lower-right corner where the
    square trigger goes, plus per-split pixel noise from ``noise_seed``.
    Linearly separable enough for one-hot regression to classify well.
    """
    template_rng = np.random.default_rng(template_seed)
    yy, xx = np.mgrid[0:size, 0:size]
    templates = []
    for c in range(n_classes):
        cy, cx = template_rng.uniform(2, size * 0.55, size=2)
        width = template_rng.uniform(2.0, 4.0)
        bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width**2))
        templates.append(0.9 * bump / bump.max())
    rng = np.random.default_rng(noise_seed)
    X, y = [], []
    for c in range(n_classes):
        for _ in range(n_per_class):
            img = templates[c] + noise * rng.standard_normal((size, size))
            X.append(np.clip(img, 0.0, 1.0).ravel())
            y.append(c)
    X = np.asarray(X)
    y = np.asarray(y)
    order = rng.permutation(len(y))
    return LabeledDataset(X[order], y[order], seed=noise_seed)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
