import warnings

import numpy as np
import pytest

from trunccox.core import TruncatedDataset
from trunccox.errors import NoComparablePairs, TooManyFailures, ValidationError
from trunccox.inference import bootstrap, conditional_kendall_tau, resample_indices
from trunccox.simulation import SimulationScenario, sample_observed
from trunccox import _rng

from conftest import inf_or, random_truncated


class TestBootstrap:
    def test_shapes(self):
        ds = random_truncated(np.random.default_rng(0), 40, 2)
        res = bootstrap(ds, "standard", B=20, seed=3)
        assert res.se.shape == (2,)
        assert res.replicates.shape == (20, 2)
        assert res.ci.shape == (2, 2)
        np.testing.assert_allclose(res.ci[:, 1] - res.ci[:, 0], 2 * 1.959963984540054 * res.se)
        np.testing.assert_allclose(res.se, res.replicates.std(axis=0, ddof=1))

    def test_deterministic_and_worker_independent(self):
        ds = random_truncated(np.random.default_rng(1), 30, 1)
        a = bootstrap(ds, "em", B=8, seed=5)
        b = bootstrap(ds, "em", B=8, seed=5, workers=2)
        np.testing.assert_array_equal(a.replicates, b.replicates)

    def test_key_separates_streams(self):
        a = resample_indices(50, 1, 0, key=(0,))
        b = resample_indices(50, 1, 0, key=(1,))
        assert not np.array_equal(a, b)
        np.testing.assert_array_equal(a, resample_indices(50, 1, 0, key=(0,)))

    def test_identical_rows_give_zero_se(self):
        ds = TruncatedDataset([1.0] * 5, [0.5] * 5, [2.0] * 5, np.ones((5, 1)))
        # every resample is the same dataset, so any estimator is constant
        res = bootstrap(ds, lambda d: d.z.mean(axis=0) + d.time.mean(), B=10)
        np.testing.assert_array_equal(res.se, 0.0)

    def test_too_many_failures(self):
        ds = random_truncated(np.random.default_rng(2), 20, 1)

        def flaky(d):
            if d is not ds:  # only resamples fail
                raise ValidationError("fails")
            return d.z.mean(axis=0)

        with pytest.raises(TooManyFailures):
            bootstrap(ds, flaky, B=4)

    def test_failures_are_counted(self):
        ds = random_truncated(np.random.default_rng(3), 20, 1)
        calls = {"k": 0}

        def sometimes(d):
            calls["k"] += 1
            if calls["k"] % 4 == 1 and d is not ds:
                raise ValidationError("fails")
            return d.z.mean(axis=0)

        res = bootstrap(ds, sometimes, B=8)
        assert res.failures == 2 and len(res.failed_indices) == 2
        assert res.replicates.shape == (6, 1)

    def test_small_b_rejected(self):
        ds = random_truncated(np.random.default_rng(4), 20, 1)
        with pytest.raises(ValidationError):
            bootstrap(ds, "standard", B=1)


class TestKendallTau:
    def test_brute_force_oracle(self, oracles):
        o = oracles["kendall_random"]
        ds = TruncatedDataset(o["time"], inf_or(o["left"], -1), inf_or(o["right"], 1), np.zeros(len(o["time"])))
        res = conditional_kendall_tau(ds, permutations=0)
        np.testing.assert_allclose(res.tau, (o["tau_L"], o["tau_R"]), atol=1e-14)
        assert res.comparable_pairs[0] == o["pairs"]

    def test_exact_permutation_p_value(self, oracles):
        o = oracles["kendall_exact"]
        ds = TruncatedDataset(o["time"], o["left"], o["right"], np.zeros(len(o["time"])))
        res = conditional_kendall_tau(ds, permutations=4000, seed=1)
        np.testing.assert_allclose(res.tau, (o["tau_L"], o["tau_R"]), atol=1e-14)
        # Monte Carlo error of a proportion near 0.08 with 4000 draws is about 0.0045
        assert abs(res.p_value - o["p_exact"]) < 0.02

    def test_constant_bounds(self):
        t = np.arange(1.0, 7.0)
        ds = TruncatedDataset(t, np.zeros(6), np.full(6, 10.0), np.zeros(6))
        with warnings.catch_warnings(record=True) as rec:
            warnings.simplefilter("always")
            res = conditional_kendall_tau(ds, permutations=19)
        assert res.tau == (0.0, 0.0)
        assert res.p_value == 1.0
        assert len(rec) == 2 and len(res.warnings) == 2

    def test_no_comparable_pairs(self):
        ds = TruncatedDataset([1.0, 3.0], [0.5, 2.5], [1.5, 3.5], [0.0, 1.0])
        with pytest.raises(NoComparablePairs):
            conditional_kendall_tau(ds)

    def test_sign_under_dependence(self):
        sc = SimulationScenario(beta_L=(1.0, 1.0), beta_R=(1.0, 1.0), n=250, seed=9)
        pos = 0
        for r in range(10):
            ds = sample_observed(sc, _rng.stream(sc.seed, _rng.SAMPLE, r)).dataset
            pos += conditional_kendall_tau(ds, permutations=0).tau[0] > 0
        assert pos >= 9
