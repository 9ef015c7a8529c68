"""Inverse-probability-weighted Cox estimator that assumes independent truncation.

The selection probability ``pi_i = P(L <= T_i <= R)`` is estimated by the
nonparametric maximum likelihood estimator of the joint law of ``(L, R)``
under quasi-independence, computed by the self-consistency iteration

    f_i  proportional to 1 / pi_i
    m_j  = sum_i f_i 1{L_j <= T_i <= R_j}
    k_j  proportional to 1 / m_j
    pi_i = sum_j k_j 1{L_j <= T_i <= R_j}

started from uniform ``k``. The Cox model is then fitted with weights
``1 / pi_i`` and risk sets from the origin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import bmat, csr_matrix
from scipy.sparse.csgraph import connected_components

from . import kernels
from .core import TruncatedDataset
from .cox_core import CoxFit, ObservationTable, fit_weighted_cox
from .errors import NoConvergence, NonIdentifiable, ValidationError


@dataclass
class SelectionEstimate:
    """NPMLE of the selection probabilities.

    Attributes
    ----------
    pi : ndarray, shape (n,)
        Estimated probability that a subject failing at ``T_i`` is observed.
    k_mass : ndarray, shape (n,)
        Probability masses on the observed windows ``(L_j, R_j)``.
    f_mass : ndarray, shape (n,)
        Probability masses on the observed event times.
    iterations : int
    converged : bool
    """

    pi: np.ndarray
    k_mass: np.ndarray
    f_mass: np.ndarray
    iterations: int
    converged: bool


def coverage_matrix(dataset: TruncatedDataset) -> np.ndarray:
    """``J[i, j] = 1`` when window ``j`` contains event time ``i``."""
    T = dataset.time[:, None]
    return ((dataset.left[None, :] <= T) & (T <= dataset.right[None, :])).astype(float)


def is_connected(J: np.ndarray) -> bool:
    """Whether the bipartite event/window graph with adjacency ``J`` is connected."""
    n, m = J.shape
    J = csr_matrix(J)
    zero_n = csr_matrix((n, n))
    zero_m = csr_matrix((m, m))

    ncomp, _ = connected_components(bmat([[zero_n, J], [J.T, zero_m]]), directed=False)
    return ncomp == 1


def estimate_selection_probabilities(
    dataset: TruncatedDataset, tol: float = 1e-8, max_iter: int = 5000
) -> SelectionEstimate:
    """Self-consistency NPMLE of ``pi_i`` for truncated data.

    Parameters
    ----------
    dataset : TruncatedDataset
    tol : float
        Convergence threshold on the max-norm change of ``pi`` between
        successive iterations.
    max_iter : int

    Raises
    ------
    NonIdentifiable
        The event/window graph is disconnected, so the masses are not
        identified.
    NoConvergence
    """
    if dataset.n < 2:
        raise ValidationError("at least two subjects are required")
    J = coverage_matrix(dataset)
    if not is_connected(J):
        raise NonIdentifiable(
            "event times and truncation windows split into disconnected groups; "
            "selection probabilities are not identified"
        )
    pi, f, k, it, conv = kernels.self_consistency(J, tol, max_iter)
    if not conv:
        raise NoConvergence(it, f"self-consistency iteration did not converge in {it} iterations")
    return SelectionEstimate(pi, k, f, int(it), bool(conv))


def fit_weighted(dataset: TruncatedDataset, pi, **kw) -> CoxFit:
    """Cox fit with weights ``1 / pi_i`` and risk sets from the origin.

    With ``pi`` identically 1 this is the standard Cox fit.
    """
    pi = np.asarray(pi, dtype=float).ravel()
    if pi.size != dataset.n:
        raise ValidationError("pi must have one entry per subject")
    if not np.all((pi > 0) & (pi <= 1 + 1e-12)):
        raise ValidationError("pi must lie in (0, 1]")
    return fit_weighted_cox(ObservationTable(dataset.time, dataset.z, weight=1.0 / pi), "from-origin", **kw)


def fit_weighted_estimator(dataset: TruncatedDataset, tol: float = 1e-8, max_iter: int = 5000):
    """Estimate ``pi`` and fit the weighted Cox model.

    Returns
    -------
    fit : CoxFit
    selection : SelectionEstimate
    """
    sel = estimate_selection_probabilities(dataset, tol, max_iter)
    return fit_weighted(dataset, sel.pi), sel
