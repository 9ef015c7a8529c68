"""The compiled and pure-numpy kernels must agree to round-off."""

import numpy as np
import pytest

from trunccox import kernels
from trunccox.selection_weights import coverage_matrix

from conftest import random_truncated

nb = pytest.importorskip("numba")
NUMBA = kernels.get_backend("numba")
NUMPY = kernels.get_backend("numpy")


@pytest.fixture(params=[(30, 1, 0), (60, 2, 1), (80, 3, 2)])
def case(request):
    n, p, seed = request.param
    rng = np.random.default_rng(seed)
    ds = random_truncated(rng, n, p)
    beta = rng.normal(0.3, 0.2, p)
    lam = rng.uniform(0.02, 0.1, ds.d)
    return ds, beta, lam


def args(ds):
    return ds.left_index, ds.right_index, ds.right_finite


class TestBackendAgreement:
    def test_default_backend(self):
        assert kernels.BACKEND in ("numba", "numpy")
        with pytest.raises(ValueError):
            kernels.get_backend("fortran")

    @pytest.mark.parametrize("support", [True, False])
    def test_alpha(self, case, support):
        ds, beta, lam = case
        eta = ds.z @ beta
        a = NUMBA.alpha(lam, eta, *args(ds), support)
        b = NUMPY.alpha(lam, eta, *args(ds), support)
        np.testing.assert_allclose(a, b, rtol=1e-12)

    @pytest.mark.parametrize("support", [True, False])
    def test_estep(self, case, support):
        ds, beta, lam = case
        eta = ds.z @ beta
        wa, aa = NUMBA.estep(lam, eta, ds.event_index, *args(ds), support)
        wb, ab = NUMPY.estep(lam, eta, ds.event_index, *args(ds), support)
        np.testing.assert_allclose(wa, wb, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(aa, ab, rtol=1e-12)

    @pytest.mark.parametrize("efron", [False, True])
    def test_dense_cox_newton(self, case, efron):
        ds, beta, lam = case
        w, _ = NUMPY.estep(lam, ds.z @ beta, ds.event_index, *args(ds), True)
        z = np.ascontiguousarray(ds.z)
        ra = NUMBA.dense_cox_newton(w, z, np.zeros(ds.p), efron, 1e-10, 50, 30)
        rb = NUMPY.dense_cox_newton(w, z, np.zeros(ds.p), efron, 1e-10, 50, 30)
        np.testing.assert_allclose(ra[0], rb[0], atol=1e-9)
        np.testing.assert_allclose(ra[1], rb[1], rtol=1e-8)
        assert ra[5] == rb[5] == kernels.CONVERGED

    def test_self_consistency(self, case):
        ds, _, _ = case
        J = coverage_matrix(ds)
        ra = NUMBA.self_consistency(J, 1e-10, 5000)
        rb = NUMPY.self_consistency(J, 1e-10, 5000)
        np.testing.assert_allclose(ra[0], rb[0], rtol=1e-9)
        assert ra[4] == rb[4]

    def test_kendall_sums(self, case):
        ds, _, _ = case
        ra = NUMBA.kendall_sums(ds.time, ds.left, ds.right)
        rb = NUMPY.kendall_sums(ds.time, ds.left, ds.right)
        assert ra == pytest.approx(rb)

    def test_swap_chain(self, case):
        ds, _, _ = case
        n = ds.n
        rng = np.random.default_rng(7)
        ii, kk = rng.integers(0, n, 500), rng.integers(0, n, 500)
        pa, pb = np.arange(n), np.arange(n)
        acc_a = NUMBA.swap_chain(ds.time, ds.left, ds.right, pa, ii, kk)
        acc_b = NUMPY.swap_chain(ds.time, ds.left, ds.right, pb, ii, kk)
        np.testing.assert_array_equal(pa, pb)
        assert acc_a == acc_b
        # every state of the chain keeps all subjects observable
        assert np.all((ds.left[pa] <= ds.time) & (ds.time <= ds.right[pa]))


def test_disable_flag_selects_numpy(monkeypatch):
    import importlib

    monkeypatch.setenv("TRUNCCOX_DISABLE_NUMBA", "1")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == "numpy"
        assert mod.estep is NUMPY.estep
    finally:
        monkeypatch.delenv("TRUNCCOX_DISABLE_NUMBA")
        importlib.reload(kernels)
