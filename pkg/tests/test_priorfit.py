import logging

import numpy as np
import pytest

from impatient.environments import TraceDataset
from impatient.priorfit import (
    fit_all_classes,
    fit_noise_cov,
    fit_prior_cov,
    fit_prior_mean,
    marginal_nll,
    read_prior_csvs,
    write_prior_csvs,
)


def dataset_from(arrays, z="z0"):
    return TraceDataset(arms={i: (z, np.asarray(tr, float)) for i, tr in enumerate(arrays)})


class TestNoiseCov:
    def test_two_point_variance(self):
        ds = dataset_from([[[0.0], [2.0]]])
        assert fit_noise_cov(ds, "z0")[0, 0] == pytest.approx(1.0)

    def test_identical_traces_zero(self):
        ds = dataset_from([[[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]])
        np.testing.assert_array_equal(fit_noise_cov(ds, "z0"), np.zeros((2, 2)))

    def test_insufficient_traces_names_arm(self):
        ds = dataset_from([[[1.0], [2.0]], [[3.0]]])
        with pytest.raises(ValueError, match="arm 1"):
            fit_noise_cov(ds, "z0")

    def test_recovery(self):
        rng = np.random.default_rng(0)
        v = np.array([[1.0, 0.4], [0.4, 2.0]])
        chol = np.linalg.cholesky(v)
        arms = []
        for _ in range(200):
            theta = rng.standard_normal(2)
            arms.append(theta + rng.standard_normal((500, 2)) @ chol.T)
        ds = dataset_from(arms)
        est = fit_noise_cov(ds, "z0")
        rel = np.linalg.norm(est - v) / np.linalg.norm(v)
        assert rel < 0.05


class TestPriorMean:
    def test_two_arm_average(self):
        ds = dataset_from([[[1.0, 2.0], [1.0, 2.0]], [[3.0, 4.0], [3.0, 4.0]]])
        np.testing.assert_allclose(fit_prior_mean(ds, "z0"), [2.0, 3.0])

    def test_single_arm(self):
        ds = dataset_from([[[1.0], [3.0]]])
        assert fit_prior_mean(ds, "z0")[0] == pytest.approx(2.0)

    def test_empty_class(self):
        ds = dataset_from([[[1.0], [2.0]]])
        with pytest.raises(ValueError, match="no arms"):
            fit_prior_mean(ds, "other")

    def test_clt_band(self):
        rng = np.random.default_rng(1)
        mu = np.array([0.5, -1.0])
        sigma_sd = 0.8
        arms = []
        for _ in range(500):
            theta = mu + sigma_sd * rng.standard_normal(2)
            arms.append(theta + 0.2 * rng.standard_normal((50, 2)))
        ds = dataset_from(arms)
        est = fit_prior_mean(ds, "z0")
        band = 4.0 * sigma_sd / np.sqrt(500)
        np.testing.assert_array_less(np.abs(est - mu), band)


class TestPriorCov:
    def test_all_arms_share_mean(self):
        ds = dataset_from([[[1.0], [1.0]], [[1.0], [1.0]]])
        mu = fit_prior_mean(ds, "z0")
        np.testing.assert_array_equal(fit_prior_cov(ds, "z0", mu), np.zeros((1, 1)))

    def test_hand_arithmetic(self):
        ds = dataset_from([[[0.0], [0.0]], [[2.0], [2.0]]])
        est = fit_prior_cov(ds, "z0", np.array([1.0]))
        assert est[0, 0] == pytest.approx(1.0)

    def test_requires_two_arms(self):
        ds = dataset_from([[[1.0], [2.0]]])
        with pytest.raises(ValueError, match="at least 2"):
            fit_prior_cov(ds, "z0", np.array([1.5]))


class TestMarginalNll:
    def make_synthetic(self, rng, arms=60, traces=40):
        sigma = np.array([[1.0, 0.3], [0.3, 0.8]])
        v = np.array([[0.5, 0.1], [0.1, 0.7]])
        mu = np.array([1.0, -0.5])
        chol_s, chol_v = np.linalg.cholesky(sigma), np.linalg.cholesky(v)
        data = []
        for _ in range(arms):
            theta = mu + chol_s @ rng.standard_normal(2)
            data.append(theta + rng.standard_normal((traces, 2)) @ chol_v.T)
        return dataset_from(data), mu, sigma, v

    def test_true_parameters_beat_shifted_mean(self):
        ds, mu, sigma, v = self.make_synthetic(np.random.default_rng(2))
        good = marginal_nll(ds, "z0", mu, sigma, v)
        bad = marginal_nll(ds, "z0", mu + 10.0, sigma, v)
        assert good < bad

    def test_single_arm_quadratic_vanishes(self):
        ds = dataset_from([[[1.0, 1.0], [3.0, 3.0]]])
        mu = fit_prior_mean(ds, "z0")
        sigma, v = np.eye(2), np.eye(2)
        value = marginal_nll(ds, "z0", mu, sigma, v)
        _, logdet = np.linalg.slogdet(sigma + v / 2)
        assert value == pytest.approx(logdet)

    def test_additive_over_arm_copies(self):
        ds = dataset_from([[[0.0], [1.0]], [[2.0], [3.0]]])
        doubled = dataset_from([[[0.0], [1.0]], [[2.0], [3.0]], [[0.0], [1.0]], [[2.0], [3.0]]])
        mu, sigma, v = np.array([1.5]), np.eye(1), np.eye(1)
        assert marginal_nll(doubled, "z0", mu, sigma, v) == pytest.approx(
            2.0 * marginal_nll(ds, "z0", mu, sigma, v)
        )

    def test_non_pd_combination_rejected(self):
        ds = dataset_from([[[0.0], [1.0]]])
        with pytest.raises(ValueError, match="positive definite"):
            marginal_nll(ds, "z0", np.zeros(1), -np.eye(1), np.zeros((1, 1)))

    def test_equal_n_mean_is_stationary_point(self):
        # with equal trace counts the fitted mean zeroes the nll gradient
        ds, _, sigma, v = self.make_synthetic(np.random.default_rng(3), arms=40, traces=25)
        mu_hat = fit_prior_mean(ds, "z0")
        h = 1e-5
        grad = np.empty(2)
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            grad[k] = (
                marginal_nll(ds, "z0", mu_hat + e, sigma, v)
                - marginal_nll(ds, "z0", mu_hat - e, sigma, v)
            ) / (2 * h)
        assert np.linalg.norm(grad) <= 1e-6


class TestFitAllClasses:
    def test_psd_by_construction_and_order_invariance(self):
        rng = np.random.default_rng(4)
        arms = {}
        for arm_id in range(8):
            z = "a" if arm_id % 2 == 0 else "b"
            arms[arm_id] = (z, rng.standard_normal((12, 3)))
        ds = TraceDataset(arms=arms)
        fitted = fit_all_classes(ds)
        for z in ("a", "b"):
            est = fitted.classes[z]
            assert np.linalg.eigvalsh(est["sigma"]).min() >= -1e-12
            assert np.linalg.eigvalsh(est["v"]).min() >= -1e-12
        shuffled = TraceDataset(arms={k: arms[k] for k in reversed(sorted(arms))})
        refit = fit_all_classes(shuffled)
        for z in ("a", "b"):
            np.testing.assert_allclose(refit.classes[z]["mu"], fitted.classes[z]["mu"])
            np.testing.assert_allclose(refit.classes[z]["sigma"], fitted.classes[z]["sigma"])

    def test_single_arm_class_falls_back_to_pooled(self, caplog):
        rng = np.random.default_rng(5)
        arms = {
            0: ("solo", rng.standard_normal((10, 2))),
            1: ("duo", rng.standard_normal((10, 2))),
            2: ("duo", rng.standard_normal((10, 2))),
        }
        with caplog.at_level(logging.WARNING):
            fitted = fit_all_classes(TraceDataset(arms=arms))
        assert "single arm" in caplog.text
        assert fitted.classes["solo"]["sigma"] is not None

    def test_to_prior_params_repairs_singular(self):
        # constant first coordinate makes both estimates singular
        rng = np.random.default_rng(6)
        arms = {}
        for arm_id in range(4):
            traces = rng.standard_normal((20, 3))
            traces[:, 0] = 1.0
            arms[arm_id] = ("z0", traces)
        fitted = fit_all_classes(TraceDataset(arms=arms))
        prior = fitted.to_prior_params("z0")
        assert np.linalg.eigvalsh(prior.sigma1).min() > 0
        assert np.linalg.eigvalsh(prior.v).min() > 0


class TestPriorCsvRoundTrip:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        arms = {i: ("z" + str(i % 2), rng.standard_normal((15, 2))) for i in range(6)}
        fitted = fit_all_classes(TraceDataset(arms=arms))
        write_prior_csvs(fitted, tmp_path)
        loaded = read_prior_csvs(tmp_path)
        for z in fitted.class_labels():
            np.testing.assert_allclose(loaded.classes[z]["mu"], fitted.classes[z]["mu"])
            np.testing.assert_allclose(loaded.classes[z]["sigma"], fitted.classes[z]["sigma"])
            np.testing.assert_allclose(loaded.classes[z]["v"], fitted.classes[z]["v"])
