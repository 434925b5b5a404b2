import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from poisonlens.data import LabeledDataset
from poisonlens.exceptions import (
    CollinearFeature,
    EmptyDataset,
    RankDeficient,
    ZeroCoefficient,
)
from poisonlens.stepwise import (
    OneHotLinearClassifier,
    add_feature,
    attack_success_rate,
    base_fit,
    full_refit_oracle,
    input_hessian_overlap,
    onehot_fit,
)
from poisonlens.triggers import make_square_mask


class TestBaseFit:
    def test_mean_fit(self):
        fit = base_fit(np.array([[1.0], [1.0]]), np.array([1.0, 3.0]))
        np.testing.assert_allclose(fit.beta_hat, [2.0])
        np.testing.assert_allclose(fit.residual_e, [-1.0, 1.0])

    def test_interpolation(self, rng):
        Y = rng.standard_normal(2)
        fit = base_fit(np.eye(2), Y)
        np.testing.assert_allclose(fit.beta_hat, Y)
        np.testing.assert_allclose(fit.residual_e, 0.0, atol=1e-15)

    def test_matches_normal_equations(self, rng):
        X = rng.standard_normal((100, 5))
        Y = rng.standard_normal(100)
        fit = base_fit(X, Y)
        oracle = np.linalg.solve(X.T @ X, X.T @ Y)
        np.testing.assert_allclose(fit.beta_hat, oracle, atol=1e-8)
        # Normal-equation orthogonality of residuals.
        assert np.max(np.abs(X.T @ fit.residual_e)) <= 1e-8

    def test_multi_output_shares_qr(self, rng):
        X = rng.standard_normal((30, 4))
        Y = rng.standard_normal((30, 3))
        fit = base_fit(X, Y)
        for k in range(3):
            single = base_fit(X, Y[:, k])
            np.testing.assert_allclose(fit.beta_hat[:, k], single.beta_hat,
                                       atol=1e-12)

    def test_rank_deficient(self, rng):
        col = rng.standard_normal(20)
        with pytest.raises(RankDeficient):
            base_fit(np.column_stack([col, col]), rng.standard_normal(20))


class TestAddFeature:
    def test_hand_worked_example(self):
        # Mean fit of Y=[1,3], then x_new=[0,1]: x_new^T M_X x_new = 1/2,
        # x_new^T e = 1, so beta_new=2, beta_old'=1, dRSS=2.
        fit = base_fit(np.array([[1.0], [1.0]]), np.array([1.0, 3.0]))
        update = add_feature(fit, np.array([0.0, 1.0]))
        np.testing.assert_allclose(update.beta_new, 2.0)
        np.testing.assert_allclose(update.beta_old_adjusted, [1.0])
        np.testing.assert_allclose(update.delta_rss, 2.0)

    def test_irrelevant_feature(self):
        # x_new orthogonal to both the design and the residual.
        X = np.array([[1.0], [1.0], [0.0]])
        Y = np.array([1.0, 3.0, 0.0])
        fit = base_fit(X, Y)
        update = add_feature(fit, np.array([0.0, 0.0, 1.0]))
        np.testing.assert_allclose(update.beta_new, 0.0, atol=1e-15)
        np.testing.assert_allclose(update.delta_rss, 0.0, atol=1e-15)
        np.testing.assert_allclose(update.beta_old_adjusted, fit.beta_hat)

    def test_collinear_feature_raises(self, rng):
        X = rng.standard_normal((20, 3))
        fit = base_fit(X, rng.standard_normal(20))
        with pytest.raises(CollinearFeature):
            add_feature(fit, X[:, 1].copy())

    def test_matches_full_refit(self, rng):
        for _ in range(100):
            X = rng.standard_normal((25, 4))
            Y = rng.standard_normal(25)
            x_new = rng.standard_normal(25)
            fit = base_fit(X, Y)
            update = add_feature(fit, x_new)
            oracle = full_refit_oracle(X, x_new, Y)
            np.testing.assert_allclose(update.beta_old_adjusted, oracle[:-1],
                                       atol=1e-10)
            np.testing.assert_allclose(update.beta_new, oracle[-1],
                                       atol=1e-10)

    def test_pythagorean_residuals(self, rng):
        X = rng.standard_normal((40, 5))
        Y = rng.standard_normal(40)
        x_new = rng.standard_normal(40)
        fit = base_fit(X, Y)
        update = add_feature(fit, x_new)
        full = base_fit(np.column_stack([X, x_new]), Y)
        drop = fit.rss[0] - full.rss[0]
        np.testing.assert_allclose(drop, update.delta_rss, atol=1e-10)
        assert update.delta_rss >= 0

    def test_multi_output_update(self, rng):
        X = rng.standard_normal((30, 3))
        Y = rng.standard_normal((30, 2))
        x_new = rng.standard_normal(30)
        update = add_feature(base_fit(X, Y), x_new)
        oracle = full_refit_oracle(X, x_new, Y)
        np.testing.assert_allclose(update.beta_old_adjusted, oracle[:-1],
                                   atol=1e-10)
        np.testing.assert_allclose(update.beta_new, oracle[-1], atol=1e-10)


class TestFullRefitOracle:
    def test_hand_worked_example(self):
        coef = full_refit_oracle(np.array([[1.0], [1.0]]),
                                 np.array([0.0, 1.0]),
                                 np.array([1.0, 3.0]))
        np.testing.assert_allclose(coef, [1.0, 2.0], atol=1e-12)

    def test_zero_column_rejected(self, rng):
        X = rng.standard_normal((10, 2))
        with pytest.raises(RankDeficient):
            full_refit_oracle(X, np.zeros(10), rng.standard_normal(10))


def separable_blobs(n=200, seed=0):
    rng = np.random.default_rng(seed)
    half = n // 2
    X0 = rng.standard_normal((half, 2)) + np.array([-4.0, 0.0])
    X1 = rng.standard_normal((n - half, 2)) + np.array([4.0, 0.0])
    X = np.vstack([X0, X1])
    y = np.concatenate([np.zeros(half, dtype=int),
                        np.ones(n - half, dtype=int)])
    perm = rng.permutation(n)
    return X[perm], y[perm]


class TestOneHotLinearClassifier:
    def test_separable_blobs(self):
        X, y = separable_blobs()
        clf = OneHotLinearClassifier().fit(X, y)
        acc = np.mean(clf.predict(X) == y)
        assert acc >= 0.99
        # Independent check: logistic regression agrees on the same data.
        logistic = LogisticRegression().fit(X, y)
        agree = np.mean(clf.predict(X) == logistic.predict(X))
        assert agree >= 0.99

    def test_single_class_degenerate(self, rng):
        X = rng.standard_normal((20, 3))
        y = np.zeros(20, dtype=int)
        clf = OneHotLinearClassifier().fit(X, y)
        assert (clf.predict(rng.standard_normal((5, 3))) == 0).all()

    def test_argmax_shift_invariance(self, rng):
        X, y = separable_blobs(seed=3)
        clf = OneHotLinearClassifier().fit(X, y)
        preds = clf.predict(X)
        clf.intercept_ = clf.intercept_ + 7.5  # same constant on every output
        np.testing.assert_array_equal(clf.predict(X), preds)

    def test_tie_breaks_to_lowest_class(self):
        clf = OneHotLinearClassifier()
        clf.classes_ = np.array([0, 1, 2])
        clf.coef_ = np.zeros((3, 2))
        clf.intercept_ = np.zeros(3)
        clf.n_features_in_ = 2
        assert (clf.predict(np.ones((4, 2))) == 0).all()

    def test_rank_deficient_falls_back_to_jitter(self, rng):
        X = rng.uniform(size=(30, 4))
        X[:, 2] = 0.0  # dead pixel column, like MNIST borders
        y = rng.integers(0, 2, size=30)
        clf = OneHotLinearClassifier(ridge=0.0).fit(X, y)
        assert clf.effective_ridge_ > 0
        assert np.isfinite(clf.coef_).all()

    def test_explicit_ridge_shrinks_norm(self, rng):
        X, y = separable_blobs(seed=5)
        small = OneHotLinearClassifier(ridge=1e-8).fit(X, y)
        large = OneHotLinearClassifier(ridge=1e4).fit(X, y)
        assert np.linalg.norm(large.coef_) < np.linalg.norm(small.coef_)

    def test_onehot_fit_wrapper(self, rng):
        X, y = separable_blobs(seed=7)
        data = LabeledDataset(X, y)
        clf = onehot_fit(data)
        assert np.mean(clf.predict(X) == y) >= 0.99

    def test_get_params(self):
        params = OneHotLinearClassifier(ridge=0.5).get_params()
        assert params == {"ridge": 0.5, "fit_intercept": True}


def image_classification_data(n=300, size=8, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 3, size=n)
    X = rng.uniform(0.0, 0.4, size=(n, size * size))
    # Class signal in the top-left corner, away from the trigger.
    for c in range(3):
        X[y == c, c] += 0.5
    return LabeledDataset(X, y, seed=seed)


class TestAttackSuccessRate:
    def test_random_models_near_class_prior(self):
        data = image_classification_data(seed=1)
        mask = make_square_mask(size_img=8, side=2)
        rng = np.random.default_rng(9)
        rates = []
        for _ in range(30):
            clf = OneHotLinearClassifier()
            clf.classes_ = np.array([0, 1, 2])
            clf.coef_ = rng.standard_normal((3, 64))
            clf.intercept_ = np.zeros(3)
            clf.n_features_in_ = 64
            rates.append(attack_success_rate(clf, data, mask, target_class=0))
        assert abs(np.mean(rates) - 1.0 / 3.0) <= 0.15

    def test_trigger_aligned_weights_saturate(self):
        data = image_classification_data(seed=2)
        mask = make_square_mask(size_img=8, side=2)
        clf = OneHotLinearClassifier()
        clf.classes_ = np.array([0, 1, 2])
        coef = np.zeros((3, 64))
        coef[0] = 100.0 * mask.indicator().ravel()
        clf.coef_ = coef
        clf.intercept_ = np.zeros(3)
        clf.n_features_in_ = 64
        assert attack_success_rate(clf, data, mask, target_class=0) == 1.0

    def test_target_samples_excluded(self):
        data = image_classification_data(seed=3)
        mask = make_square_mask(size_img=8, side=2)
        clf = onehot_fit(data)
        only_target = LabeledDataset(
            data.X[data.y == 0], data.y[data.y == 0]
        )
        with pytest.raises(EmptyDataset):
            attack_success_rate(clf, only_target, mask, target_class=0)


class TestInputHessianOverlap:
    def test_coefficient_proportional_to_pattern(self):
        mask = make_square_mask(size_img=8, side=2)
        clf = OneHotLinearClassifier()
        clf.classes_ = np.array([0, 1])
        clf.coef_ = np.vstack([
            5.0 * mask.normalized_pattern.ravel(),
            np.ones(64),  # constant image: zero-mean part vanishes
        ])
        clf.intercept_ = np.zeros(2)
        overlaps = input_hessian_overlap(clf, mask)
        np.testing.assert_allclose(overlaps[0], 1.0, atol=1e-6)
        np.testing.assert_allclose(overlaps[1], 0.0, atol=1e-12)

    def test_orthogonal_coefficient(self):
        mask = make_square_mask(size_img=8, side=2)
        pattern = mask.normalized_pattern.ravel()
        v = np.zeros(64)
        v[0], v[1] = 1.0, -1.0  # zero-mean, supported off the trigger
        assert abs(v @ pattern) <= 1e-12
        clf = OneHotLinearClassifier()
        clf.classes_ = np.array([0])
        clf.coef_ = v[None, :]
        clf.intercept_ = np.zeros(1)
        np.testing.assert_allclose(input_hessian_overlap(clf, mask), [0.0],
                                   atol=1e-12)

    def test_sign_and_scale_invariance(self, rng):
        mask = make_square_mask(size_img=8, side=2)
        beta = rng.standard_normal(64)
        clf = OneHotLinearClassifier()
        clf.classes_ = np.array([0, 1, 2])
        clf.coef_ = np.vstack([beta, -beta, 0.37 * beta])
        clf.intercept_ = np.zeros(3)
        overlaps = input_hessian_overlap(clf, mask)
        np.testing.assert_allclose(overlaps[1], overlaps[0], rtol=1e-12)
        np.testing.assert_allclose(overlaps[2], overlaps[0], rtol=1e-12)

    def test_random_coefficients_at_chance(self):
        size = 28
        mask = make_square_mask(size_img=size, side=4)
        rng = np.random.default_rng(11)
        clf = OneHotLinearClassifier()
        n_draws = 200
        clf.classes_ = np.arange(n_draws)
        clf.coef_ = rng.standard_normal((n_draws, size * size))
        clf.intercept_ = np.zeros(n_draws)
        overlaps = input_hessian_overlap(clf, mask)
        # E[cos^2] of a random direction against a fixed one is ~ 1/dim.
        assert 0.0005 <= overlaps.mean() <= 0.003

    def test_zero_coefficients_raise(self):
        mask = make_square_mask(size_img=8, side=2)
        clf = OneHotLinearClassifier()
        clf.classes_ = np.array([0])
        clf.coef_ = np.zeros((1, 64))
        clf.intercept_ = np.zeros(1)
        with pytest.raises(ZeroCoefficient):
            input_hessian_overlap(clf, mask)
