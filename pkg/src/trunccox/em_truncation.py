"""EM estimation of the Cox model under left, right or double truncation.

The baseline hazard is discrete, with jumps ``lam_j`` at the distinct
observed event times ``t_1 < ... < t_d``. Given ``theta = (beta, lam)`` the
discrete density of a subject with covariates ``z`` is

    f(t_j) = lam_j * e * exp(-C_j * e),   e = exp(beta'z),  C_j = lam_1 + ... + lam_j,

and a subject with window ``[L, R]`` is observed with probability ``alpha``.
The log-likelihood of the observed sample is the average over subjects of
``log f(T_i) - log alpha_i``.

Two forms of ``alpha`` are available.

``"support"`` (default)
    ``1 - sum of f(t_j) over the truncated support points t_j < L or t_j > R``.
    This is the observation probability of the same discrete model that the
    E-step imputes from, so every EM iteration increases the log-likelihood.
``"closed-form"``
    ``exp(-Lambda(L-) e) - exp(-Lambda(R) e)``, the continuous-time survival
    difference evaluated with the discrete cumulative hazard. The two forms
    differ by the mass the discrete model leaves beyond ``t_d``, and with this
    form the iteration is not guaranteed to be monotone.

Ties in the M-step can be handled by the Breslow approximation (default) or
by the Efron approximation applied to the weighted expanded design.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import SubjectRecord, TruncatedDataset
from .cox_core import ObservationTable
from .errors import AlphaUnderflow, NoConvergence, SingularHessian, ValidationError

log = logging.getLogger(__name__)

ALPHA_FORMS = ("support", "closed-form")
TIES = ("breslow", "efron")


@dataclass(frozen=True)
class ParameterState:
    """Regression coefficients and baseline-hazard jumps ``theta = (beta, lam)``."""

    beta: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float).ravel()
        lam = np.array(self.lam, dtype=float).ravel()
        if not np.all(np.isfinite(beta)):
            raise ValidationError("beta must be finite")
        if not (np.all(np.isfinite(lam)) and np.all(lam > 0)):
            raise ValidationError("baseline jumps must be finite and strictly positive")
        beta.setflags(write=False)
        lam.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "lam", lam)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.beta, self.lam])

    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.lam)


@dataclass(frozen=True)
class InnerSolver:
    """Newton settings for the M-step."""

    tol: float = 1e-9
    max_iter: int = 100
    max_halving: int = 30


@dataclass(frozen=True)
class EMConfig:
    """EM settings.

    Parameters
    ----------
    epsilon : float
        Stop when the change in ``(beta, lam)`` is below this.
    max_iter : int
        Cap on EM iterations.
    norm : {"max", "euclidean"}
        Norm applied to the concatenated change in ``(beta, lam)``.
    inner : InnerSolver
    alpha_form : {"support", "closed-form"}
    ties : {"breslow", "efron"}
    alpha_floor : float
        Smallest admissible observation probability.
    raise_on_max_iter : bool
        Raise :class:`NoConvergence` when ``max_iter`` is reached; otherwise
        return a fit with ``converged=False``.
    """

    epsilon: float = 1e-6
    max_iter: int = 2000
    norm: str = "max"
    inner: InnerSolver = field(default_factory=InnerSolver)
    alpha_form: str = "support"
    ties: str = "breslow"
    alpha_floor: float = 1e-12
    raise_on_max_iter: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be > 0")
        if self.max_iter < 1:
            raise ValidationError("max_iter must be >= 1")
        if self.norm not in ("max", "euclidean"):
            raise ValidationError("norm must be 'max' or 'euclidean'")
        if self.alpha_form not in ALPHA_FORMS:
            raise ValidationError(f"alpha_form must be one of {ALPHA_FORMS}")
        if self.ties not in TIES:
            raise ValidationError(f"ties must be one of {TIES}")


@dataclass(frozen=True)
class WeightMatrix:
    """E-step output: ``w[i, j]`` is the expected number of subject-``i``
    copies (observed plus latent) failing at ``t_j``."""

    w: np.ndarray
    alpha: np.ndarray

    @property
    def row_sums(self) -> np.ndarray:
        return self.w.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.w.sum(axis=0)


@dataclass
class EMFit:
    """Result of :func:`fit_em`.

    Attributes
    ----------
    theta : ParameterState
    times : ndarray
        Distinct event times carrying the jumps ``theta.lam``.
    loglik_trace : ndarray
        Observed-data log-likelihood at every iterate, starting with the
        initial value.
    alpha : ndarray
        Observation probabilities at the final iterate.
    iterations : int
    converged : bool
    """

    theta: ParameterState
    times: np.ndarray
    loglik_trace: np.ndarray
    alpha: np.ndarray
    iterations: int
    converged: bool
    config: EMConfig = field(default_factory=EMConfig, repr=False)

    @property
    def beta(self) -> np.ndarray:
        return self.theta.beta

    @property
    def lam(self) -> np.ndarray:
        return self.theta.lam

    @property
    def loglik(self) -> float:
        return float(self.loglik_trace[-1])

    def cumulative_hazard(self, t):
        return cumulative_hazard(self, t)


# -- observation probability and log-likelihood --------------------------------


def _form(form: str) -> bool:
    if form not in ALPHA_FORMS:
        raise ValidationError(f"alpha form must be one of {ALPHA_FORMS}, got {form!r}")
    return form == "support"


def _check_theta(theta: ParameterState, dataset: TruncatedDataset):
    if theta.lam.size != dataset.d or theta.beta.size != dataset.p:
        raise ValidationError(
            f"theta has p={theta.beta.size}, d={theta.lam.size}; dataset has p={dataset.p}, d={dataset.d}"
        )


def _check_floor(a: np.ndarray, floor: float, iteration=None):
    if a.size and not a.min() >= floor:
        i = int(np.argmin(np.where(np.isnan(a), -np.inf, a)))
        raise AlphaUnderflow(i, float(a[i]), iteration)


def alpha(theta: ParameterState, subject: SubjectRecord, times, form: str = "support", floor: float = 1e-12) -> float:
    """Observation probability of one subject.

    Parameters
    ----------
    theta : ParameterState
    subject : SubjectRecord
    times : array_like
        The distinct event times carrying ``theta.lam``.
    form : {"support", "closed-form"}
        See the module docstring. For the closed form,
        ``Lambda(L-)`` sums ``lam_s`` over ``t_s < L`` and ``Lambda(R)`` over
        ``t_s <= R``.

    Raises
    ------
    AlphaUnderflow
        If the value is below ``floor``.
    """
    t = np.asarray(times, dtype=float)
    lo = np.searchsorted(t, [subject.l], side="left").astype(np.int64)
    hi = np.searchsorted(t, [subject.r], side="right").astype(np.int64)
    rfin = np.array([np.isfinite(subject.r)])
    eta = np.array([float(np.dot(theta.beta, subject.z))])
    a = kernels.alpha(np.ascontiguousarray(theta.lam), eta, lo, hi, rfin, _form(form))
    _check_floor(a, floor)
    return float(a[0])


def alpha_vector(theta: ParameterState, dataset: TruncatedDataset, form: str = "support") -> np.ndarray:
    """Observation probabilities of every subject."""
    _check_theta(theta, dataset)
    eta = dataset.z @ theta.beta
    return kernels.alpha(
        np.ascontiguousarray(theta.lam), eta, dataset.left_index, dataset.right_index,
        dataset.right_finite, _form(form),
    )


def _loglik_from_alpha(lam, jidx, eta, a):
    C = np.cumsum(lam)
    return float(np.mean(eta + np.log(lam[jidx]) - C[jidx] * np.exp(eta) - np.log(a)))


def observed_loglik(theta: ParameterState, dataset: TruncatedDataset, form: str = "support", floor: float = 1e-12) -> float:
    """Average observed-data log-likelihood.

    ``mean_i [beta'Z_i + log lam_{j(i)} - C_{j(i)} exp(beta'Z_i) - log alpha_i]``.
    """
    a = alpha_vector(theta, dataset, form)
    _check_floor(a, floor)
    return _loglik_from_alpha(theta.lam, dataset.event_index, dataset.z @ theta.beta, a)


def observed_score(theta: ParameterState, dataset: TruncatedDataset, form: str = "support"):
    """Gradient of :func:`observed_loglik` with respect to ``beta`` and ``lam``.

    Returns
    -------
    grad_beta : ndarray, shape (p,)
    grad_lam : ndarray, shape (d,)
    """
    _check_theta(theta, dataset)
    support = _form(form)
    n, d = dataset.n, dataset.d
    lam, C = theta.lam, theta.cumulative()
    eta = dataset.z @ theta.beta
    e = np.exp(eta)
    j_ev, lo, hi, rfin = dataset.event_index, dataset.left_index, dataset.right_index, dataset.right_finite
    a = kernels.alpha(np.ascontiguousarray(lam), eta, lo, hi, rfin, support)

    # part not involving alpha
    g_eta = 1.0 - C[j_ev] * e
    g_lam = np.bincount(j_ev, minlength=d) / lam
    g_lam -= np.cumsum(np.bincount(j_ev, weights=e, minlength=d)[::-1])[::-1]

    if support:
        jj = np.arange(d)
        trunc = (jj[None, :] < lo[:, None]) | (rfin[:, None] & (jj[None, :] >= hi[:, None]))
        surv = np.exp(-C[None, :] * e[:, None])
        f = np.where(trunc, lam[None, :] * e[:, None] * surv, 0.0)
        da_deta = -(f * (1.0 - C[None, :] * e[:, None])).sum(axis=1)
        # d alpha_i / d lam_k = -1{k trunc} e g_ik + e sum_{j trunc, j >= k} f_ij
        tail = np.cumsum(f[:, ::-1], axis=1)[:, ::-1]
        da_dlam = -np.where(trunc, e[:, None] * surv, 0.0) + e[:, None] * tail
    else:
        cl = np.where(lo > 0, C[np.maximum(lo - 1, 0)], 0.0)
        cr = np.where(hi > 0, C[np.maximum(hi - 1, 0)], 0.0)
        sl = np.exp(-cl * e)
        sr = np.where(rfin, np.exp(-cr * e), 0.0)
        da_deta = -cl * e * sl + cr * e * sr
        kk = np.arange(d)
        da_dlam = -(e * sl)[:, None] * (kk[None, :] < lo[:, None]) + (e * sr)[:, None] * (
            rfin[:, None] & (kk[None, :] < hi[:, None])
        )
    g_eta -= da_deta / a
    g_lam -= (da_dlam / a[:, None]).sum(axis=0)
    return dataset.z.T @ g_eta / n, g_lam / n


# -- E and M steps ----------------------------------------------------------------


def e_step(theta_k: ParameterState, dataset: TruncatedDataset, form: str = "support", floor: float = 1e-12) -> WeightMatrix:
    """Expected complete-data counts given the current parameters.

    ``w[i, j] = 1{T_i = t_j} + 1{t_j < L_i or t_j > R_i} f_i(t_j) / alpha_i``.
    """
    _check_theta(theta_k, dataset)
    eta = dataset.z @ theta_k.beta
    w, a = kernels.estep(
        np.ascontiguousarray(theta_k.lam), eta, dataset.event_index, dataset.left_index,
        dataset.right_index, dataset.right_finite, _form(form),
    )
    _check_floor(a, floor)
    return WeightMatrix(w, a)


def expand_design(weights: WeightMatrix | np.ndarray, dataset: TruncatedDataset) -> ObservationTable:
    """Rows ``(t_j, w_ij, Z_i)`` of the expanded design with ``w_ij > 0``."""
    w = weights.w if isinstance(weights, WeightMatrix) else np.asarray(weights, float)
    i, j = np.nonzero(w > 0)
    return ObservationTable(dataset.distinct_times[j], dataset.z[i], w[i, j])


def _newton_status(status, snorm, it):
    if status == kernels.SINGULAR:
        raise SingularHessian("M-step information matrix is singular")
    if status != kernels.CONVERGED:
        # The accepted iterate never lowers Q, so ascent still holds.
        log.debug("M-step Newton stopped early (status %d, score %.2e, %d steps)", status, snorm, it)


def m_step(
    weights: WeightMatrix | np.ndarray,
    dataset: TruncatedDataset,
    init=None,
    ties: str = "breslow",
    inner: InnerSolver = InnerSolver(),
) -> ParameterState:
    """Maximise the expected complete-data log-likelihood.

    ``beta`` maximises the weighted partial likelihood of the expanded design
    (time ``t_j``, weight ``w_ij``, covariate ``Z_i``, risk sets from the
    origin), and ``lam_j = w_+j / sum_i sum_{s >= j} w_is exp(beta'Z_i)``.

    The expanded design is never materialised: risk-set sums are computed
    from the reverse cumulative row sums of ``w``, which gives the same
    numbers as :func:`~trunccox.cox_core.fit_weighted_cox` applied to
    :func:`expand_design`.
    """
    if ties not in TIES:
        raise ValidationError(f"ties must be one of {TIES}")
    w = weights.w if isinstance(weights, WeightMatrix) else np.asarray(weights, float)
    if w.shape != (dataset.n, dataset.d):
        raise ValidationError("weight matrix shape does not match the dataset")
    if np.any(w < 0) or not np.any(w.sum(axis=0) > 0):
        raise ValidationError("weights must be nonnegative with a positive column sum")
    beta0 = np.zeros(dataset.p) if init is None else np.array(init, dtype=float).ravel()
    beta, lam, _, snorm, it, status = kernels.dense_cox_newton(
        np.ascontiguousarray(w), np.ascontiguousarray(dataset.z), beta0, ties == "efron",
        inner.tol, inner.max_iter, inner.max_halving,
    )
    _newton_status(status, snorm, it)
    return ParameterState(beta, lam)


# -- driver -------------------------------------------------------------------------


def standard_start(dataset: TruncatedDataset, tol: float = 1e-8) -> ParameterState:
    """Standard Cox fit (truncation ignored) with its Breslow baseline.

    Computed with the dense kernel on indicator weights; this is the same
    fit as :func:`~trunccox.cox_core.cox_standard`, only faster.
    """
    w = np.zeros((dataset.n, dataset.d))
    w[np.arange(dataset.n), dataset.event_index] = 1.0
    beta, lam, _, snorm, it, status = kernels.dense_cox_newton(
        w, np.ascontiguousarray(dataset.z), np.zeros(dataset.p), False, tol, 100, 30
    )
    if status == kernels.SINGULAR:
        raise SingularHessian("standard Cox information matrix is singular")
    if status == kernels.STALLED:
        raise NoConvergence(it, "standard Cox fit: log-likelihood decreased after all step halvings")
    return ParameterState(beta, lam)


def _change(a: np.ndarray, b: np.ndarray, norm: str) -> float:
    diff = a - b
    return float(np.max(np.abs(diff)) if norm == "max" else np.sqrt(diff @ diff))


def transfer_baseline(theta: ParameterState, times_from, times_to) -> ParameterState:
    """Re-express ``theta`` on another time grid by matching the cumulative hazard.

    Used to warm-start fits on a resample whose event times are a subset of
    the original ones.
    """
    cum = np.concatenate(([0.0], np.cumsum(theta.lam)))
    at = cum[np.searchsorted(np.asarray(times_from), np.asarray(times_to), side="right")]
    lam = np.diff(np.concatenate(([0.0], at)))
    if not np.all(lam > 0):
        raise ValidationError("cannot transfer baseline: target grid has empty intervals")
    return ParameterState(theta.beta, lam)


def fit_em(dataset: TruncatedDataset, config: EMConfig | None = None, init: ParameterState | None = None) -> EMFit:
    """Fit the Cox model to truncated data by EM.

    Parameters
    ----------
    dataset : TruncatedDataset
        Any truncation mode. With no truncation at all the standard Cox fit
        is returned directly.
    config : EMConfig, optional
    init : ParameterState, optional
        Starting point. Defaults to the standard Cox fit (truncation
        ignored) and its Breslow baseline.

    Returns
    -------
    EMFit

    Raises
    ------
    NoConvergence
        ``max_iter`` reached (when ``config.raise_on_max_iter``); the
        log-likelihood trace is attached as ``exc.trace``.
    AlphaUnderflow
        Carries the iteration index.
    SingularHessian
    """
    cfg = config or EMConfig()
    support = cfg.alpha_form == "support"
    efron = cfg.ties == "efron"
    if dataset.mode == "none":
        theta = standard_start(dataset)
        ll = observed_loglik(theta, dataset, cfg.alpha_form, cfg.alpha_floor)
        return EMFit(theta, dataset.distinct_times, np.array([ll]), np.ones(dataset.n), 0, True, cfg)
    if init is None:
        theta = standard_start(dataset)
    else:
        theta = init
        _check_theta(theta, dataset)

    Z = np.ascontiguousarray(dataset.z)
    jidx, lo, hi, rfin = dataset.event_index, dataset.left_index, dataset.right_index, dataset.right_finite
    inner = cfg.inner
    beta, lam = np.array(theta.beta), np.array(theta.lam)
    trace = []
    converged = False
    it = 0
    while it < cfg.max_iter:
        eta = Z @ beta
        w, a = kernels.estep(lam, eta, jidx, lo, hi, rfin, support)
        _check_floor(a, cfg.alpha_floor, it)
        trace.append(_loglik_from_alpha(lam, jidx, eta, a))
        nb, nl, _, snorm, nit, status = kernels.dense_cox_newton(
            w, Z, beta, efron, inner.tol, inner.max_iter, inner.max_halving
        )
        _newton_status(status, snorm, nit)
        it += 1
        delta = _change(np.concatenate([nb, nl]), np.concatenate([beta, lam]), cfg.norm)
        beta, lam = nb, nl
        if delta < cfg.epsilon:
            converged = True
            break

    theta = ParameterState(beta, lam)
    eta = Z @ beta
    a = kernels.alpha(lam, eta, lo, hi, rfin, support)
    _check_floor(a, cfg.alpha_floor, it)
    trace.append(_loglik_from_alpha(lam, jidx, eta, a))
    trace = np.array(trace)
    if not converged and cfg.raise_on_max_iter:
        raise NoConvergence(it, f"EM did not converge within {it} iterations", trace=trace)
    return EMFit(theta, dataset.distinct_times, trace, a, it, converged, cfg)


def cumulative_hazard(fit: EMFit, t):
    """``Lambda(t) = sum of lam_j over t_j <= t``; zero before ``t_1``.

    Accepts a scalar or an array and returns the same shape.
    """
    cum = np.concatenate(([0.0], np.cumsum(fit.theta.lam)))
    idx = np.searchsorted(fit.times, np.asarray(t, dtype=float), side="right")
    out = cum[idx]
    return float(out) if np.ndim(out) == 0 else out
