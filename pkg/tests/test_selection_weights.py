import numpy as np
import pytest

from trunccox.core import TruncatedDataset
from trunccox.cox_core import cox_standard
from trunccox.errors import NonIdentifiable, ValidationError
from trunccox.selection_weights import (
    coverage_matrix,
    estimate_selection_probabilities,
    fit_weighted,
    fit_weighted_estimator,
    is_connected,
)

from conftest import random_truncated


class TestSelectionProbabilities:
    def test_full_windows_give_one(self):
        rng = np.random.default_rng(0)
        t = rng.uniform(1, 2, 10)
        ds = TruncatedDataset(t, np.zeros(10), np.full(10, 5.0), rng.normal(size=10))
        sel = estimate_selection_probabilities(ds)
        np.testing.assert_allclose(sel.pi, 1.0, atol=1e-12)
        np.testing.assert_allclose(sel.k_mass, 0.1, atol=1e-12)

    def test_disconnected_windows(self):
        ds = TruncatedDataset([1.0, 3.0], [0.5, 2.5], [1.5, 3.5], [0.0, 1.0])
        assert not is_connected(coverage_matrix(ds))
        with pytest.raises(NonIdentifiable):
            estimate_selection_probabilities(ds)

    def test_three_point_likelihood_oracle(self, oracles):
        o = oracles["selection_three"]
        ds = TruncatedDataset(o["time"], o["left"], o["right"], [0.0, 1.0, 2.0])
        sel = estimate_selection_probabilities(ds, tol=1e-12)
        np.testing.assert_allclose(sel.pi, o["pi"], atol=1e-3)
        np.testing.assert_allclose(sel.f_mass, o["f"], atol=1e-3)
        np.testing.assert_allclose(sel.k_mass, o["k"], atol=1e-3)

    def test_masses_are_probabilities(self):
        ds = random_truncated(np.random.default_rng(1), 40, 1)
        sel = estimate_selection_probabilities(ds)
        assert sel.converged
        assert sel.f_mass.sum() == pytest.approx(1.0)
        assert sel.k_mass.sum() == pytest.approx(1.0)
        assert np.all((sel.pi > 0) & (sel.pi <= 1 + 1e-12))
        np.testing.assert_allclose(sel.pi, coverage_matrix(ds) @ sel.k_mass, rtol=1e-12)

    def test_coverage_matrix(self):
        ds = TruncatedDataset([1.0, 2.0], [0.5, 1.5], [1.5, 2.5], [0.0, 1.0])
        np.testing.assert_array_equal(coverage_matrix(ds), [[1, 0], [0, 1]])


class TestWeightedEstimator:
    def test_unit_pi_equals_standard(self):
        ds = random_truncated(np.random.default_rng(2), 30, 2)
        np.testing.assert_allclose(fit_weighted(ds, np.ones(30)).beta, cox_standard(ds).beta, atol=1e-12)

    def test_untruncated_equals_standard(self):
        rng = np.random.default_rng(3)
        t = rng.exponential(size=30)
        ds = TruncatedDataset(t, np.full(30, -np.inf), np.full(30, np.inf), rng.normal(size=(30, 2)))
        fit, sel = fit_weighted_estimator(ds)
        np.testing.assert_allclose(sel.pi, 1.0)
        np.testing.assert_allclose(fit.beta, cox_standard(ds).beta, atol=1e-10)

    def test_pi_validation(self):
        ds = random_truncated(np.random.default_rng(4), 10, 1)
        with pytest.raises(ValidationError):
            fit_weighted(ds, np.zeros(10))
        with pytest.raises(ValidationError):
            fit_weighted(ds, np.ones(3))


@pytest.mark.slow
def test_pi_consistent_under_independent_truncation():
    from scipy import integrate

    from trunccox import _rng
    from trunccox.simulation import SimulationScenario, sample_observed

    sc = SimulationScenario(beta_L=(0.0, 1.0), beta_R=(0.0, 1.0), n=2000, seed=5).resolved()
    ds = sample_observed(sc, _rng.stream(5, _rng.SAMPLE, 0)).dataset
    sel = estimate_selection_probabilities(ds)

    def bound_cdf(t, c):
        # P(c * W <= t) for the Weibull PH bound with linear predictor X, X ~ U[0, upper]
        u = sc.covariate_upper
        return integrate.quad(lambda x: -np.expm1(-sc.nu * np.exp(x) * (t / c) ** sc.kappa), 0, u)[0] / u

    truth = np.array([bound_cdf(t, sc.c_l) * (1 - bound_cdf(t, sc.c_r)) for t in ds.time])
    assert np.mean(np.abs(sel.pi - truth)) < 0.05
