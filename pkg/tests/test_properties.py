"""Property-based checks of invariances the estimators must respect."""

import numpy as np
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from trunccox.core import TruncatedDataset, load_dataset, write_dataset
from trunccox.cox_core import ObservationTable, fit_weighted_cox
from trunccox.errors import NoConvergence, NonIdentifiable
from trunccox.em_truncation import EMConfig, alpha_vector, fit_em
from trunccox.selection_weights import estimate_selection_probabilities

from conftest import random_truncated

SETTINGS = settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
CFG = EMConfig(epsilon=1e-9, raise_on_max_iter=False)

datasets = st.builds(
    lambda seed, n, p: random_truncated(np.random.default_rng(seed), n, p),
    st.integers(0, 2**32 - 1),
    st.integers(8, 30),
    st.integers(1, 2),
)


def transformed(ds, time_map=lambda t: t, z_shift=0.0, order=None):
    idx = np.arange(ds.n) if order is None else order
    return TruncatedDataset(time_map(ds.time[idx]), time_map(ds.left[idx]), time_map(ds.right[idx]),
                            ds.z[idx] + z_shift)


class TestEMProperties:
    @SETTINGS
    @given(datasets)
    def test_ascent(self, ds):
        tr = fit_em(ds, EMConfig(raise_on_max_iter=False, max_iter=200)).loglik_trace
        assert np.all(np.diff(tr) >= -1e-8 * np.maximum(1.0, np.abs(tr[1:])))

    @SETTINGS
    @given(datasets, st.floats(0.1, 10.0))
    def test_time_scale_invariance(self, ds, c):
        # only the ordering of times and bounds enters the likelihood
        a = fit_em(ds, CFG).beta
        b = fit_em(transformed(ds, lambda t: c * t), CFG).beta
        np.testing.assert_allclose(a, b, atol=1e-5)

    @SETTINGS
    @given(datasets, st.floats(-2.0, 2.0))
    def test_covariate_shift_invariance(self, ds, s):
        a = fit_em(ds, CFG).beta
        b = fit_em(transformed(ds, z_shift=s), CFG).beta
        np.testing.assert_allclose(a, b, atol=1e-5)

    @SETTINGS
    @given(datasets, st.randoms(use_true_random=False))
    def test_row_order_invariance(self, ds, rnd):
        order = np.array(rnd.sample(range(ds.n), ds.n))
        a = fit_em(ds, CFG).beta
        b = fit_em(transformed(ds, order=order), CFG).beta
        np.testing.assert_allclose(a, b, atol=1e-6)

    @SETTINGS
    @given(datasets)
    def test_alpha_is_probability(self, ds):
        fit = fit_em(ds, CFG)
        for form in ("support", "closed-form"):
            a = alpha_vector(fit.theta, ds, form)
            assert np.all((a > 0) & (a <= 1 + 1e-12))


class TestCoxProperties:
    @SETTINGS
    @given(datasets, st.floats(0.01, 100.0))
    def test_weight_scale_invariance(self, ds, c):
        rng = np.random.default_rng(ds.n)
        w = rng.uniform(0.5, 2.0, ds.n)
        tab = ObservationTable(ds.time, ds.z, w)
        a = fit_weighted_cox(tab)
        b = fit_weighted_cox(ObservationTable(ds.time, ds.z, c * w))
        np.testing.assert_allclose(a.beta, b.beta, atol=1e-7)
        # Breslow jumps are ratios of weighted masses
        np.testing.assert_allclose(a.baseline, b.baseline, rtol=1e-6)


class TestSelectionProperties:
    @SETTINGS
    @given(datasets)
    def test_pi_bounded(self, ds):
        try:
            sel = estimate_selection_probabilities(ds)
        except (NonIdentifiable, NoConvergence):
            # the selection NPMLE need not exist in small samples
            assume(False)
        assert np.all((sel.pi > 0) & (sel.pi <= 1 + 1e-9))


class TestIO:
    @SETTINGS
    @given(ds=datasets)
    def test_csv_round_trip(self, ds, tmp_path_factory):
        path = tmp_path_factory.mktemp("rt") / "d.csv"
        write_dataset(ds, path)
        back = load_dataset(path)
        np.testing.assert_array_equal(back.time, ds.time)
        np.testing.assert_array_equal(back.left, ds.left)
        np.testing.assert_array_equal(back.right, ds.right)
        np.testing.assert_array_equal(back.z, ds.z)
        assert back.digest() == ds.digest()
