"""Bootstrap standard errors and the conditional Kendall's tau diagnostic."""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _rng, kernels
from .core import TruncatedDataset
from .em_truncation import EMConfig
from .errors import NoComparablePairs, TooManyFailures, TruncCoxError, ValidationError
from .estimators import EstimatorResult, fit_estimator

log = logging.getLogger(__name__)

Z95 = 1.959963984540054


@dataclass
class BootstrapResult:
    """Bootstrap summary for one estimator.

    Attributes
    ----------
    estimate : ndarray, shape (p,)
        Fit on the original data.
    se : ndarray, shape (p,)
        Standard deviation (``ddof=1``) of the replicate estimates.
    replicates : ndarray, shape (B - failures, p)
    ci : ndarray, shape (p, 2)
        ``estimate -/+ 1.96 se``.
    failures : int
    failed_indices : tuple of int
    """

    estimate: np.ndarray
    se: np.ndarray
    replicates: np.ndarray
    ci: np.ndarray
    failures: int
    failed_indices: tuple = ()


def resample_indices(n: int, seed: int, b: int, key: tuple = ()) -> np.ndarray:
    """Row indices of bootstrap replicate ``b``.

    ``key`` prefixes the stream index, so separate bootstraps sharing a seed
    (e.g. one per simulation replicate) draw independent resamples.
    """
    return _rng.stream(seed, _rng.BOOTSTRAP, *key, b).integers(0, n, size=n)


def _replicate(args):
    dataset, fitter, b, seed, key, original, em_config = args
    ds = dataset.take(resample_indices(dataset.n, seed, b, key))
    try:
        if callable(fitter):
            return b, np.asarray(fitter(ds), dtype=float)
        init = original.warm_start(ds) if original is not None else None
        return b, fit_estimator(fitter, ds, init=init, em_config=em_config).beta
    except TruncCoxError as exc:
        log.debug("bootstrap replicate %d failed: %s", b, exc)
        return b, None


def bootstrap(
    dataset: TruncatedDataset,
    fitter: str | Callable = "em",
    B: int = 200,
    seed: int = 0,
    *,
    key: tuple = (),
    original: EstimatorResult | None = None,
    em_config: EMConfig | None = None,
    warm_start: bool = True,
    workers: int = 1,
) -> BootstrapResult:
    """Nonparametric bootstrap of a fitted estimator.

    Parameters
    ----------
    dataset : TruncatedDataset
    fitter : str or callable
        A name accepted by :func:`~trunccox.estimators.fit_estimator`, or a
        function mapping a dataset to a coefficient vector.
    B : int
        Number of resamples, at least 2.
    seed : int
        Replicate ``b`` uses its own random stream derived from
        ``(seed, *key, b)``, so results do not depend on ``workers``.
    key : tuple of int
        Extra stream index, see :func:`resample_indices`.
    original : EstimatorResult, optional
        Fit on the full data; computed if not given.
    warm_start : bool
        Start each replicate fit from the original fit.
    workers : int
        Number of processes.

    Raises
    ------
    TooManyFailures
        If more than ``B / 2`` replicate fits fail.
    """
    if B < 2:
        raise ValidationError("B must be at least 2")
    if callable(fitter):
        estimate = np.asarray(fitter(dataset), dtype=float)
        original = None
    else:
        if original is None:
            original = fit_estimator(fitter, dataset, em_config=em_config)
        estimate = np.asarray(original.beta, dtype=float)
    start = original if warm_start else None
    jobs = [(dataset, fitter, b, seed, tuple(key), start, em_config) for b in range(B)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_replicate, jobs, chunksize=max(1, B // (4 * workers))))
    else:
        results = [_replicate(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    failed = tuple(b for b, beta in results if beta is None)
    if len(failed) > B / 2:
        raise TooManyFailures(f"{len(failed)} of {B} bootstrap replicates failed")
    reps = np.array([beta for _, beta in results if beta is not None]).reshape(-1, estimate.size)
    se = reps.std(axis=0, ddof=1) if reps.shape[0] > 1 else np.full(estimate.size, np.nan)
    ci = np.column_stack([estimate - Z95 * se, estimate + Z95 * se])
    return BootstrapResult(estimate, se, reps, ci, len(failed), failed)


# -- conditional Kendall's tau -----------------------------------------------------


@dataclass
class KendallTauResult:
    """Conditional Kendall's tau for ``(L, T)`` and ``(R, T)``.

    Attributes
    ----------
    tau : (float, float)
        ``(tau_L, tau_R)``.
    p_value : float
        Permutation p-value for the joint null, based on
        ``max(|tau_L|, |tau_R|)`` over the non-degenerate components.
    comparable_pairs : (int, int)
        Number of comparable pairs behind each statistic.
    permutations : int
    """

    tau: tuple
    p_value: float
    comparable_pairs: tuple
    permutations: int
    warnings: tuple = ()


def _taus(T, L, R):
    sL, sR, cnt = kernels.kendall_sums(T, L, R)
    if cnt == 0:
        return 0.0, 0.0, 0
    return sL / cnt, sR / cnt, cnt


def conditional_kendall_tau(
    dataset: TruncatedDataset,
    permutations: int = 999,
    seed: int = 0,
    chain_steps: int | None = None,
) -> KendallTauResult:
    """Kendall's tau between truncation and event times over comparable pairs.

    A pair ``(i, k)`` is comparable when ``max(L_i, L_k) <= min(T_i, T_k)``
    and ``min(R_i, R_k) >= max(T_i, T_k)``, i.e. each subject's event would
    also have been observed inside the other's window. ``tau_L`` averages
    ``sign((T_i - T_k)(L_i - L_k))`` over comparable pairs and ``tau_R`` is
    the same with ``R``.

    The p-value tests quasi-independence of ``T`` and ``(L, R)``. Under this
    null, every assignment of the observed windows to the observed event times
    that keeps all subjects observable is equally likely. Such assignments
    are sampled by a swap Markov chain and combined with the parallel scheme
    of Besag and Clifford, which gives an exact Monte Carlo p-value without
    requiring the chain to mix fully.

    Parameters
    ----------
    permutations : int
        Number of sampled assignments.
    chain_steps : int, optional
        Swap proposals per chain; defaults to ``20 n``.

    Raises
    ------
    NoComparablePairs
        Fewer than two comparable pairs.
    """
    T = np.ascontiguousarray(dataset.time)
    L = np.ascontiguousarray(dataset.left)
    R = np.ascontiguousarray(dataset.right)
    n = dataset.n
    tL, tR, cnt = _taus(T, L, R)
    if cnt < 2:
        raise NoComparablePairs(f"only {cnt} comparable pair(s); need at least 2")
    notes = []
    use_L = np.unique(L).size > 1
    use_R = np.unique(R).size > 1
    if not use_L:
        notes.append("left truncation times are constant; tau_L is 0 by convention")
    if not use_R:
        notes.append("right truncation times are constant; tau_R is 0 by convention")
    for msg in notes:
        warnings.warn(msg)

    def stat(a, b):
        return max(abs(a) if use_L else 0.0, abs(b) if use_R else 0.0)

    observed = stat(tL, tR)
    if not (use_L or use_R) or permutations < 1:
        p = 1.0
    else:
        K = chain_steps or 20 * n
        rng = _rng.stream(seed, _rng.PERMUTATION)
        hub = np.arange(n, dtype=np.int64)
        kernels.swap_chain(T, L, R, hub, rng.integers(0, n, K), rng.integers(0, n, K))
        exceed = 0
        for _ in range(permutations):
            perm = hub.copy()
            kernels.swap_chain(T, L, R, perm, rng.integers(0, n, K), rng.integers(0, n, K))
            a, b, _ = _taus(T, L[perm], R[perm])
            if stat(a, b) >= observed - 1e-12:
                exceed += 1
        p = (1 + exceed) / (1 + permutations)
    return KendallTauResult((tL, tR), float(p), (cnt, cnt), int(permutations), tuple(notes))
