"""Weighted Cox partial likelihood with Newton-Raphson and Breslow baseline.

Two risk-set rules are supported. Under ``"from-origin"`` a row is at risk at
time ``t`` when ``time >= t``; under ``"from-entry"`` it is at risk when
``entry <= t <= time`` (delayed entry, used for left truncation). Ties are
handled with the Breslow approximation.

Risk-set sums are computed from sorted suffix sums, so one likelihood
evaluation costs ``O(n log n + n p^2)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import TruncatedDataset
from .errors import EmptyRiskSet, NoConvergence, SingularHessian, ValidationError

RISK_RULES = ("from-origin", "from-entry")


@dataclass(frozen=True)
class WeightedObservation:
    """One row of a weighted Cox design."""

    time: float
    weight: float = 1.0
    entry: float = -np.inf
    z: tuple = ()


@dataclass
class ObservationTable:
    """Columnar form of a list of :class:`WeightedObservation`.

    Parameters
    ----------
    time : array, shape (m,)
    z : array, shape (m, p)
    weight : array, shape (m,), optional
        Defaults to ones.
    entry : array, shape (m,), optional
        Defaults to ``-inf`` (no delayed entry).
    """

    time: np.ndarray
    z: np.ndarray
    weight: np.ndarray | None = None
    entry: np.ndarray | None = None

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=float).ravel()
        z = np.asarray(self.z, dtype=float)
        self.z = z.reshape(-1, 1) if z.ndim == 1 else z
        m = self.time.size
        self.weight = np.ones(m) if self.weight is None else np.asarray(self.weight, float).ravel()
        self.entry = np.full(m, -np.inf) if self.entry is None else np.asarray(self.entry, float).ravel()
        if not (self.z.shape[0] == self.weight.size == self.entry.size == m):
            raise ValidationError("observation columns have different lengths")
        if np.any(self.weight < 0) or not np.all(np.isfinite(self.weight)):
            raise ValidationError("weights must be finite and nonnegative")
        if np.any(self.entry > self.time):
            raise ValidationError("entry time after event time")

    @classmethod
    def from_list(cls, observations: Sequence[WeightedObservation]) -> "ObservationTable":
        if not observations:
            raise ValidationError("no observations")
        return cls(
            time=[o.time for o in observations],
            z=np.array([o.z for o in observations], dtype=float),
            weight=[o.weight for o in observations],
            entry=[o.entry for o in observations],
        )

    def positive(self) -> "ObservationTable":
        keep = self.weight > 0
        if keep.all():
            return self
        return ObservationTable(self.time[keep], self.z[keep], self.weight[keep], self.entry[keep])


@dataclass
class CoxFit:
    """Result of a weighted Cox fit.

    Attributes
    ----------
    beta : ndarray, shape (p,)
    baseline_times : ndarray, shape (d,)
        Distinct event times with positive weighted event mass.
    baseline : ndarray, shape (d,)
        Breslow jumps at ``baseline_times``.
    loglik : float
        Weighted partial log-likelihood at ``beta``.
    iterations : int
    converged : bool
    score_norm : float
        Max-norm of the score divided by the total weight.
    information : ndarray, shape (p, p)
        Negative Hessian of the partial log-likelihood at ``beta``.
    """

    beta: np.ndarray
    baseline_times: np.ndarray
    baseline: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    score_norm: float
    information: np.ndarray = field(repr=False, default=None)

    def cumulative_hazard(self, t) -> np.ndarray:
        """Breslow cumulative hazard, a right-continuous step function."""
        cum = np.concatenate(([0.0], np.cumsum(self.baseline)))
        return cum[np.searchsorted(self.baseline_times, np.asarray(t, float), side="right")]


def _as_table(observations) -> ObservationTable:
    if isinstance(observations, ObservationTable):
        return observations
    return ObservationTable.from_list(list(observations))


class _PartialLikelihood:
    """Breslow partial likelihood of one observation table under one risk rule."""

    def __init__(self, obs: ObservationTable, risk_rule: str):
        if risk_rule not in RISK_RULES:
            raise ValidationError(f"risk_rule must be one of {RISK_RULES}, got {risk_rule!r}")
        obs = obs.positive()
        if obs.time.size == 0:
            raise ValidationError("at least one observation with positive weight is required")
        self.obs = obs
        self.p = obs.z.shape[1]
        self.rule = risk_rule
        self.times, inv = np.unique(obs.time, return_inverse=True)
        d = self.times.size
        w = obs.weight
        self.mass = np.bincount(inv, weights=w, minlength=d)
        self.total = self.mass.sum()
        self.wz = w @ obs.z
        self.order = np.argsort(obs.time, kind="stable")
        self.start = np.searchsorted(obs.time[self.order], self.times, side="left")
        if risk_rule == "from-entry":
            self.eorder = np.argsort(obs.entry, kind="stable")
            self.estart = np.searchsorted(obs.entry[self.eorder], self.times, side="right")
            at_risk = (obs.time.size - self.start) - (obs.entry.size - self.estart)
        else:
            at_risk = obs.time.size - self.start
        empty = np.flatnonzero(at_risk <= 0)
        if empty.size:
            raise EmptyRiskSet(float(self.times[empty[0]]))
        p = self.p
        z = obs.z
        self.M = np.hstack([np.ones((z.shape[0], 1)), z, (z[:, :, None] * z[:, None, :]).reshape(-1, p * p)])

    def risk_sums(self, beta, shift: float = 0.0) -> np.ndarray:
        """Columns 1, z, z z' summed over each risk set, shape (d, 1+p+p^2).

        Terms are scaled by ``exp(-shift)``.
        """
        v = (self.obs.weight * np.exp(self.obs.z @ beta - shift))[:, None] * self.M
        suffix = np.cumsum(v[self.order][::-1], axis=0)[::-1]
        suffix = np.vstack([suffix, np.zeros((1, v.shape[1]))])
        S = suffix[self.start]
        if self.rule == "from-entry":
            esuffix = np.cumsum(v[self.eorder][::-1], axis=0)[::-1]
            esuffix = np.vstack([esuffix, np.zeros((1, v.shape[1]))])
            S = S - esuffix[self.estart]
        return S

    def evaluate(self, beta):
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            # non-finite values are rejected by the step-halving test
            return self._evaluate(beta)

    def _evaluate(self, beta):
        p = self.p
        eta = self.obs.z @ beta
        shift = float(eta.max())
        S = self.risk_sums(beta, shift)
        s0 = S[:, 0]
        mean = S[:, 1 : 1 + p] / s0[:, None]
        second = S[:, 1 + p :].reshape(-1, p, p) / s0[:, None, None]
        ll = self.obs.weight @ eta - self.mass @ (np.log(s0) + shift)
        U = self.wz - self.mass @ mean
        H = np.einsum("j,jkl->kl", self.mass, second - mean[:, :, None] * mean[:, None, :])
        diag = 1 + p + np.arange(p) * (p + 1)
        scale = self.mass @ (S[:, diag] / s0[:, None])
        return ll, U, H, scale, s0


def _solve_pd(H, U, scale):
    """Cholesky solve; raises SingularHessian on a negligible pivot."""
    p = H.shape[0]
    if np.any(scale <= 0):
        raise SingularHessian("covariate with no variation in the risk sets")
    try:
        Lm = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise SingularHessian("information matrix is not positive definite") from None
    piv = np.diag(Lm) ** 2
    if np.any(piv <= 1e-10 * scale):
        raise SingularHessian("information matrix is numerically singular (collinear covariates)")
    return np.linalg.solve(Lm.T, np.linalg.solve(Lm, U)) if p else U


def newton_maximize(evaluate, beta0, total, tol=1e-8, max_iter=100, max_halving=30):
    """Newton-Raphson ascent with step halving.

    ``evaluate(beta)`` returns ``(loglik, score, information, scale, s0)``.
    Convergence is declared when ``max|score| / total < tol``.

    Returns
    -------
    beta, loglik, score_norm, iterations, converged, information, s0
    """
    beta = np.array(beta0, dtype=float)
    ll, U, H, scale, s0 = evaluate(beta)
    it = 0
    while True:
        snorm = float(np.max(np.abs(U), initial=0.0) / total)
        if snorm < tol:
            _solve_pd(H, U, scale)  # a flat direction is an error even at a zero score
            return beta, ll, snorm, it, True, H, s0
        if it >= max_iter:
            return beta, ll, snorm, it, False, H, s0
        step = _solve_pd(H, U, scale)
        t = 1.0
        for _ in range(max_halving + 1):
            cand = beta + t * step
            res = evaluate(cand)
            if np.isfinite(res[0]) and res[0] >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        else:
            raise NoConvergence(it + 1, "partial log-likelihood decreased after all step halvings")
        it += 1
        beta = cand
        ll, U, H, scale, s0 = res


def fit_weighted_cox(
    observations,
    risk_rule: str = "from-origin",
    init=None,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> CoxFit:
    """Fit a weighted Cox model by Newton-Raphson.

    Parameters
    ----------
    observations : ObservationTable or sequence of WeightedObservation
        Rows with zero weight are ignored.
    risk_rule : {"from-origin", "from-entry"}
    init : array_like, optional
        Starting coefficients; zeros by default.
    tol : float
        Threshold on the max-norm of the score divided by the total weight.
        Dividing by the total weight makes the fit invariant to rescaling
        all weights by a constant.
    max_iter : int

    Returns
    -------
    CoxFit

    Raises
    ------
    SingularHessian
        Collinear or constant covariates.
    NoConvergence
        The log-likelihood could not be increased by any halved step.
    EmptyRiskSet
    """
    obs = _as_table(observations)
    pl = _PartialLikelihood(obs, risk_rule)
    beta0 = np.zeros(pl.p) if init is None else np.asarray(init, dtype=float)
    beta, ll, snorm, it, conv, H, s0 = newton_maximize(pl.evaluate, beta0, pl.total, tol, max_iter)
    if not conv:
        warnings.warn(f"Cox fit stopped at max_iter={max_iter} with score norm {snorm:.2e}")
    lam = pl.mass / pl.risk_sums(beta)[:, 0]
    return CoxFit(beta, pl.times.copy(), lam, float(ll), it, conv, snorm, H)


def breslow_baseline(beta, observations, risk_rule: str = "from-origin"):
    """Breslow jumps at the distinct event times.

    Returns
    -------
    times, lam : ndarray
        ``lam[j]`` is the weighted event mass at ``times[j]`` divided by the
        sum of ``weight * exp(beta'z)`` over the risk set at ``times[j]``.
    """
    pl = _PartialLikelihood(_as_table(observations), risk_rule)
    s0 = pl.risk_sums(np.asarray(beta, dtype=float))[:, 0]
    return pl.times.copy(), pl.mass / s0


def cox_standard(dataset: TruncatedDataset, **kw) -> CoxFit:
    """Cox fit that ignores truncation: unit weights, risk sets from the origin."""
    return fit_weighted_cox(ObservationTable(dataset.time, dataset.z), "from-origin", **kw)


def cox_left_adjusted(dataset: TruncatedDataset, **kw) -> CoxFit:
    """Cox fit with delayed entry at the left truncation time.

    Right truncation, if any, is ignored. With every ``L_i = -inf`` this is
    the same fit as :func:`cox_standard`.
    """
    obs = ObservationTable(dataset.time, dataset.z, entry=dataset.left)
    return fit_weighted_cox(obs, "from-entry", **kw)
