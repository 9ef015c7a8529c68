"""Compare the numba and pure-numpy kernel backends.

Times each hot kernel on a Table 1 sized problem (n observed subjects, two
covariates), checks that both backends return the same numbers, then times a
complete EM fit under each backend in a subprocess (the backend is chosen at
import time from ``TRUNCCOX_DISABLE_NUMBA``).

Usage::

    python3 benchmarks/bench_kernels.py [--n 100] [--repeat 5]
"""

import argparse
import os
import subprocess
import sys
import timeit
from dataclasses import replace

import numpy as np

from trunccox import _rng
from trunccox.kernels import get_backend
from trunccox.selection_weights import coverage_matrix
from trunccox.simulation import read_scenario, sample_observed

EM_SNIPPET = """
import time
from trunccox import _rng
from trunccox.em_truncation import fit_em
from trunccox.simulation import read_scenario, sample_observed
from dataclasses import replace
sc = replace(read_scenario("table1_rho035_n100"), n={n})
data = [sample_observed(sc, _rng.stream(sc.seed, _rng.SAMPLE, r)).dataset for r in range({reps})]
fit_em(data[0])  # compile / warm up
t = time.perf_counter()
for ds in data:
    fit_em(ds)
print((time.perf_counter() - t) / len(data))
"""


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def kernel_cases(ds, npy):
    rng = np.random.default_rng(0)
    eta = ds.z @ np.array([1.0, 1.0])
    lam = rng.uniform(0.01, 0.05, ds.d)
    args = (ds.left_index, ds.right_index, ds.right_finite)
    w, _ = npy.estep(lam, eta, ds.event_index, *args, True)
    z = np.ascontiguousarray(ds.z)
    J = coverage_matrix(ds)
    perm = np.arange(ds.n)
    ii, kk = rng.integers(0, ds.n, 2000), rng.integers(0, ds.n, 2000)
    return {
        "alpha": lambda m: m.alpha(lam, eta, *args, True),
        "estep": lambda m: m.estep(lam, eta, ds.event_index, *args, True),
        "dense_cox_newton": lambda m: m.dense_cox_newton(w, z, np.zeros(2), False, 1e-9, 100, 30),
        "self_consistency": lambda m: m.self_consistency(J, 1e-8, 5000),
        "kendall_sums": lambda m: m.kendall_sums(ds.time, ds.left, ds.right),
        "swap_chain (2000 steps)": lambda m: m.swap_chain(ds.time, ds.left, ds.right, perm.copy(), ii, kk),
    }


def first_array(out):
    return np.asarray(out[0] if isinstance(out, tuple) else out, dtype=float)


def em_time(n, reps, disable):
    env = dict(os.environ, TRUNCCOX_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", EM_SNIPPET.format(n=n, reps=reps)], env=env,
                         capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=100)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--em-reps", type=int, default=10)
    args = parser.parse_args(argv)

    sc = read_scenario("table1_rho035_n100")
    ds = sample_observed(replace(sc, n=args.n), _rng.stream(sc.seed, _rng.SAMPLE, 0)).dataset
    nb, npy = get_backend("numba"), get_backend("numpy")
    print(f"n={ds.n}, distinct times d={ds.d}, p={ds.p}")
    print(f"{'kernel':26s} {'numba':>12s} {'numpy':>12s} {'speedup':>9s}  agree")
    for name, call in kernel_cases(ds, npy).items():
        a, b = first_array(call(nb)), first_array(call(npy))  # first numba call compiles
        agree = np.allclose(a, b, rtol=1e-8, atol=1e-12)
        number = 20 if name in ("self_consistency", "swap_chain (2000 steps)") else 200
        t_nb = best_of(lambda: call(nb), args.repeat, number)
        t_np = best_of(lambda: call(npy), args.repeat, max(1, number // 10))
        print(f"{name:26s} {t_nb * 1e6:10.1f}us {t_np * 1e6:10.1f}us {t_np / t_nb:8.1f}x  {agree}")

    t_nb = em_time(args.n, args.em_reps, disable=False)
    t_np = em_time(args.n, args.em_reps, disable=True)
    print(f"{'fit_em (end to end)':26s} {t_nb * 1e3:10.2f}ms {t_np * 1e3:10.2f}ms {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
