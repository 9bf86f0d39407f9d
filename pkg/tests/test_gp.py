import math

import numpy as np
import pytest

from seedopt import gp
from seedopt.gp import GpHyperparams, build_model, fit, kernel_se, predict, predict_many


def hyper(ell=1.0, sf2=1.0, sn2=1e-6, d=1):
    return GpHyperparams(lengthscales=np.full(d, ell), signal_variance=sf2,
                         noise_variance=sn2)


class TestKernel:
    def test_zero_distance_gives_signal_variance(self):
        h = hyper(sf2=2.5, d=3)
        a = np.array([0.3, 0.7, 0.1])
        assert kernel_se(a, a, h) == 2.5

    def test_symmetry(self, rng):
        h = hyper(ell=0.4, sf2=1.7, d=4)
        for _ in range(50):
            a, b = rng.uniform(size=(2, 4))
            assert kernel_se(a, b, h) == pytest.approx(kernel_se(b, a, h))

    def test_unit_lengthscale_hand_value(self):
        # |a - b|^2 = 2 with ell = 1, sf2 = 1 -> e^-1
        h = hyper(ell=1.0, sf2=1.0, d=2)
        a = np.array([0.0, 0.0])
        b = np.array([1.0, 1.0])
        assert kernel_se(a, b, h) == pytest.approx(math.exp(-1.0))

    def test_ard_lengthscales_weight_dimensions(self):
        h = GpHyperparams(lengthscales=np.array([1.0, 100.0]), signal_variance=1.0,
                          noise_variance=1e-6)
        near = kernel_se(np.array([0.0, 0.0]), np.array([0.0, 1.0]), h)
        far = kernel_se(np.array([0.0, 0.0]), np.array([1.0, 0.0]), h)
        assert near > far

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            kernel_se(np.array([0.0]), np.array([0.0, 1.0]), hyper(d=1))


class TestPredict:
    def test_two_point_closed_form_oracle(self):
        # independent 2x2 linear solve of the posterior equations
        h = hyper(ell=0.5, sf2=1.0, sn2=1e-6)
        x = np.array([[0.0], [1.0]])
        y = np.array([0.0, 1.0])
        model = build_model(x, y, h, normalize_inputs=False,
                            standardize_outputs=False)
        k01 = math.exp(-0.5 * 1.0 / 0.25)
        k_star = math.exp(-0.5 * 0.25 / 0.25)
        big_k = np.array([[1.0 + 1e-6, k01], [k01, 1.0 + 1e-6]])
        weights = np.linalg.solve(big_k, y)
        expected_mean = k_star * weights.sum()
        expected_var = (
            1.0 - np.array([k_star, k_star]) @ np.linalg.solve(big_k, np.array([k_star, k_star]))
            + 1e-6
        )
        mean, var = predict(model, np.array([0.5]))
        assert mean == pytest.approx(expected_mean, rel=1e-9)
        assert var == pytest.approx(expected_var, rel=1e-6)

    def test_noiseless_interpolation(self, rng):
        x = rng.uniform(size=(12, 2))
        y = np.sin(3 * x[:, 0]) + x[:, 1]
        model = build_model(x, y, hyper(ell=0.5, sn2=1e-12, d=2))
        for i in range(len(x)):
            mean, var = predict(model, x[i])
            assert mean == pytest.approx(y[i], rel=1e-6, abs=1e-9)
            assert var <= 1e-8 * model.hyper.signal_variance * model.y_sd**2

    def test_far_point_reverts_to_prior(self):
        x = np.array([[0.0], [0.1], [0.2]])
        y = np.array([1.0, 2.0, 3.0])
        h = hyper(ell=0.05, sf2=2.0, sn2=0.1)
        model = build_model(x, y, h, normalize_inputs=False)
        mean, var = predict(model, np.array([50.0]))
        assert mean == pytest.approx(y.mean(), rel=1e-6)
        assert var == pytest.approx((2.0 + 0.1) * model.y_sd**2, rel=1e-6)

    def test_posterior_variance_bounded_by_prior(self, rng):
        x = rng.uniform(size=(20, 2))
        y = rng.standard_normal(20)
        h = hyper(ell=0.3, sf2=1.5, sn2=0.01, d=2)
        model = build_model(x, y, h)
        pts = rng.uniform(size=(100, 2))
        _, var = predict_many(model, pts)
        prior = (1.5 + 0.01) * model.y_sd**2
        assert np.all(var <= prior + 1e-9)

    def test_adding_a_point_never_increases_variance(self, rng):
        # sparse data keeps variances far above the jitter floor
        h = hyper(ell=0.15, sf2=1.0, sn2=1e-9, d=1)
        x = rng.uniform(size=(5, 1))
        y = np.cos(4 * x[:, 0])
        x_aug = np.vstack([x, [[0.5]]])
        y_aug = np.append(y, np.cos(2.0))
        small = build_model(x, y, h, normalize_inputs=False,
                            standardize_outputs=False)
        big = build_model(x_aug, y_aug, h, normalize_inputs=False,
                          standardize_outputs=False)
        pts = rng.uniform(size=(50, 1))
        _, var_small = predict_many(small, pts)
        _, var_big = predict_many(big, pts)
        assert np.all(var_big <= var_small + 1e-9)

    def test_gram_factorization_with_jitter_escalation(self, rng):
        # duplicated points make the noiseless Gram matrix singular
        x = rng.uniform(size=(15, 2))
        x = np.vstack([x, x[:5]])
        y = rng.standard_normal(len(x))
        h = hyper(ell=0.5, sf2=1.0, sn2=1e-10, d=2)
        model = build_model(x, y, h)
        assert model.jitter <= 1e-6
        assert np.all(np.isfinite(model.alpha))


class TestFit:
    def test_hyperparameter_recovery_self_consistency(self):
        # data generated from known hyperparameters; the fixed seed makes the
        # maximum-likelihood estimate land near the truth
        rng = np.random.default_rng(2)
        x = rng.uniform(0, 6, size=(40, 1))
        true = hyper(ell=0.3, sf2=1.0, sn2=0.01)
        gram = gp._kernel_matrix(x, x, true) + 0.01 * np.eye(40)
        y = np.linalg.cholesky(gram) @ rng.standard_normal(40)
        model = fit(x, y, restarts=10, seed=0)
        ell_raw = model.hyper.lengthscales[0] * model.x_scale[0]
        sf2_raw = model.hyper.signal_variance * model.y_sd**2
        sn2_raw = model.hyper.noise_variance * model.y_sd**2
        assert abs(math.log(ell_raw / 0.3)) <= 0.5
        assert abs(math.log(sf2_raw / 1.0)) <= 0.5
        assert abs(math.log(sn2_raw / 0.01)) <= 0.5

    def test_conflicting_observations_force_noise(self):
        x = np.array([[0.0], [0.0], [1.0], [1.0]])
        y = np.array([0.0, 1.0, 2.0, 3.0])
        model = fit(x, y, restarts=5)
        assert model.hyper.noise_variance > 1e-4

    def test_more_restarts_never_hurt(self):
        rng = np.random.default_rng(8)
        x = rng.uniform(size=(15, 1))
        y = np.sin(6 * x[:, 0]) + 0.1 * rng.standard_normal(15)
        single = fit(x, y, restarts=1, seed=3)
        multi = fit(x, y, restarts=10, seed=3)
        assert multi.log_marginal_likelihood >= single.log_marginal_likelihood - 1e-9

    def test_degenerate_constant_outputs_flagged(self):
        x = np.array([[0.0], [0.5], [1.0]])
        y = np.array([4.0, 4.0, 4.0])
        model = fit(x, y)
        assert model.degenerate
        mean, var = predict(model, np.array([0.25]))
        assert mean == pytest.approx(4.0)
        assert var >= 0.0

    def test_requires_two_distinct_points(self):
        with pytest.raises(ValueError):
            fit(np.array([[1.0], [1.0]]), np.array([0.0, 0.0]))

    def test_normalization_invariance(self, rng):
        x = rng.uniform(size=(20, 2))
        y = np.sin(4 * x[:, 0]) * np.cos(3 * x[:, 1])
        scale = np.array([1000.0, 0.01])
        shift = np.array([-5.0, 40.0])
        model_a = fit(x, y, restarts=3, seed=1)
        model_b = fit(x * scale + shift, y, restarts=3, seed=1)
        pts = rng.uniform(size=(30, 2))
        mean_a, var_a = predict_many(model_a, pts)
        mean_b, var_b = predict_many(model_b, pts * scale + shift)
        assert np.allclose(mean_a, mean_b, rtol=1e-6, atol=1e-9)
        # near-interpolation variances cancel almost to zero, so rounding of
        # the rescaled inputs is amplified; allow that absolute floor
        prior_var = model_a.hyper.signal_variance * model_a.y_sd**2
        assert np.allclose(var_a, var_b, rtol=1e-6, atol=1e-9 * prior_var)

    def test_isotropic_mode_shares_lengthscale(self, rng):
        x = rng.uniform(size=(15, 3))
        y = rng.standard_normal(15)
        model = fit(x, y, restarts=2, isotropic=True)
        assert np.all(model.hyper.lengthscales == model.hyper.lengthscales[0])

    def test_model_dump_round_trips_as_json(self, rng):
        import json

        x = rng.uniform(size=(8, 2))
        y = rng.standard_normal(8)
        model = fit(x, y, restarts=2)
        dump = json.loads(gp.model_to_json(model))
        assert dump["hyperparameters"]["signal_variance"] > 0
        assert len(dump["x_train"]) == 8
