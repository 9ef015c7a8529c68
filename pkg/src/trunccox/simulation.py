"""Monte Carlo harness: Weibull PH generators, calibration and study runner.

Population model
----------------
``Z1, Z2, X, Y ~ Uniform[0, upper]`` independently, and

* ``T`` has hazard ``nu kappa t^(kappa-1) exp(b1 Z1 + b2 Z2)``
* ``L = c_l * L0`` with ``L0`` Weibull PH on ``bL1 Z1 + bL2 X``
* ``R = c_r * R0`` with ``R0`` Weibull PH on ``bR1 Z1 + bR2 Y``

all drawn by inversion: ``(-log(1 - U) / (nu exp(lin)))^(1/kappa)``. ``T``
depends on the truncation times only through ``Z1``; ``bL1`` and ``bR1``
set the strength of that dependence. A subject is observed when
``L <= T <= R``.
"""

from __future__ import annotations

import configparser
import csv
import functools
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _rng
from .core import TruncatedDataset
from .em_truncation import EMConfig
from .errors import CalibrationFailed, ScenarioError, TooManyFailures, TruncationTooSevere, TruncCoxError
from .estimators import ESTIMATORS, fit_estimator
from .inference import Z95, bootstrap

log = logging.getLogger(__name__)

SCENARIO_FORMAT_VERSION = 1
TRUNCATION_KINDS = ("double", "left", "right", "none")
C_LOWER, C_UPPER = 1e-6, 1e6


@dataclass(frozen=True)
class SimulationScenario:
    """Generator and study settings.

    ``c_l`` / ``c_r`` set to ``None`` are calibrated on first use so that the
    marginal proportions ``P(T < L)`` and ``P(T > R)`` hit ``target_left``
    and ``target_right``.
    """

    name: str = "scenario"
    beta: tuple = (1.0, 1.0)
    beta_L: tuple = (1.0, 1.0)
    beta_R: tuple = (1.0, 1.0)
    nu: float = 0.001
    kappa: float = 5.0
    c_l: float | None = None
    c_r: float | None = None
    n: int = 100
    reps: int = 200
    seed: int = 0
    truncation: str = "double"
    target_left: float = 0.25
    target_right: float = 0.25
    covariate_upper: float = 5.0
    bootstrap_B: int = 100
    estimators: tuple = ("em", "weighted", "standard")

    def __post_init__(self):
        for f in ("beta", "beta_L", "beta_R", "estimators"):
            object.__setattr__(self, f, tuple(getattr(self, f)))
        if self.n < 2 or self.reps < 1:
            raise ScenarioError("need n >= 2 and reps >= 1")
        if not (self.nu > 0 and self.kappa > 0 and self.covariate_upper > 0):
            raise ScenarioError("nu, kappa and covariate_upper must be > 0")
        for c in (self.c_l, self.c_r):
            if c is not None and not c > 0:
                raise ScenarioError("c_l and c_r must be > 0")
        if self.truncation not in TRUNCATION_KINDS:
            raise ScenarioError(f"truncation must be one of {TRUNCATION_KINDS}")
        if len(self.beta) != 2 or len(self.beta_L) != 2 or len(self.beta_R) != 2:
            raise ScenarioError("beta, beta_L and beta_R must have two entries")
        bad = set(self.estimators) - set(ESTIMATORS)
        if bad:
            raise ScenarioError(f"unknown estimators {sorted(bad)}")
        if not (0 <= self.target_left <= 0.9 and 0 <= self.target_right <= 0.9):
            raise ScenarioError("truncation targets must lie in [0, 0.9]")

    @property
    def has_left(self) -> bool:
        return self.truncation in ("double", "left")

    @property
    def has_right(self) -> bool:
        return self.truncation in ("double", "right")

    def generator_key(self) -> str:
        """Hash of the fields that determine the population (constants excluded)."""
        keys = ("beta", "beta_L", "beta_R", "nu", "kappa", "truncation", "covariate_upper")
        blob = json.dumps({k: getattr(self, k) for k in keys}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def resolved(self, pilot_size: int = 200_000) -> "SimulationScenario":
        """Copy with ``c_l`` and ``c_r`` filled in by calibration where missing."""
        if (self.c_l is not None or not self.has_left) and (self.c_r is not None or not self.has_right):
            return self
        cl, cr = calibrate_constants(self, self.target_left, self.target_right, pilot_size)
        return replace(
            self,
            c_l=self.c_l if self.c_l is not None else (cl if self.has_left else None),
            c_r=self.c_r if self.c_r is not None else (cr if self.has_right else None),
        )


# -- scenario files -------------------------------------------------------------------


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def read_scenario(path_or_name) -> SimulationScenario:
    """Load a scenario file (INI with a ``[scenario]`` section).

    A bare name such as ``table1_rho035_n100`` refers to a bundled file.
    """
    p = Path(str(path_or_name))
    if p.suffix != ".ini" and not p.exists():
        p = resources.files("trunccox") / "scenarios" / f"{path_or_name}.ini"
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        text = p.read_text(encoding="utf-8")
    except (FileNotFoundError, OSError):
        raise ScenarioError(f"scenario {path_or_name!r} not found") from None
    cp.read_string(text)
    if "scenario" not in cp:
        raise ScenarioError("scenario file needs a [scenario] section")
    s = cp["scenario"]
    version = s.getint("format_version", fallback=SCENARIO_FORMAT_VERSION)
    if version != SCENARIO_FORMAT_VERSION:
        raise ScenarioError(f"unsupported scenario format_version {version}")
    kw = {}
    try:
        for key in ("beta", "beta_L", "beta_R"):
            if key in s:
                kw[key] = _floats(s[key])
        for key in ("nu", "kappa", "c_l", "c_r", "target_left", "target_right", "covariate_upper"):
            if key in s and s[key].strip().lower() not in ("", "auto"):
                kw[key] = float(s[key])
        for key in ("n", "reps", "seed", "bootstrap_B"):
            if key in s:
                kw[key] = int(s[key])
        if "estimators" in s:
            kw["estimators"] = tuple(e.strip() for e in s["estimators"].split(",") if e.strip())
        for key in ("name", "truncation"):
            if key in s:
                kw[key] = s[key].strip()
    except ValueError as exc:
        raise ScenarioError(f"bad value in scenario file: {exc}") from None
    unknown = set(s) - {
        "format_version", "beta", "beta_l", "beta_r", "nu", "kappa", "c_l", "c_r", "target_left",
        "target_right", "covariate_upper", "n", "reps", "seed", "bootstrap_b", "estimators", "name",
        "truncation", "description",
    }
    if unknown:
        raise ScenarioError(f"unknown scenario keys {sorted(unknown)}")
    return SimulationScenario(**kw)


def write_scenario(scenario: SimulationScenario, path) -> None:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    d = asdict(scenario)
    out = {"format_version": str(SCENARIO_FORMAT_VERSION)}
    for k, v in d.items():
        if v is None:
            out[k] = "auto"
        elif isinstance(v, tuple):
            out[k] = ", ".join(str(x) for x in v)
        else:
            out[k] = str(v)
    cp["scenario"] = out
    with open(path, "w", encoding="utf-8") as fh:
        cp.write(fh)


def bundled_scenarios() -> list[str]:
    root = resources.files("trunccox") / "scenarios"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


# -- generators ----------------------------------------------------------------------------


def _weibull_ph(u, lin, nu, kappa):
    return (-np.log1p(-u) / (nu * np.exp(lin))) ** (1.0 / kappa)


def generate_population(scenario: SimulationScenario, rng: np.random.Generator, size: int, c_l=None, c_r=None):
    """Draw ``size`` population records.

    Returns a dict of arrays ``T, L, R, Z1, Z2, X, Y, observed``. ``L`` is
    ``-inf`` and ``R`` is ``inf`` on a side without truncation. ``c_l`` and
    ``c_r`` default to the scenario's constants (1 if unset).
    """
    s = scenario
    cl = c_l if c_l is not None else (s.c_l if s.c_l is not None else 1.0)
    cr = c_r if c_r is not None else (s.c_r if s.c_r is not None else 1.0)
    U = rng.random((7, size))
    Z1, Z2, X, Y = (s.covariate_upper * U[k] for k in range(4))
    T = _weibull_ph(U[4], s.beta[0] * Z1 + s.beta[1] * Z2, s.nu, s.kappa)
    if s.has_left:
        L = cl * _weibull_ph(U[5], s.beta_L[0] * Z1 + s.beta_L[1] * X, s.nu, s.kappa)
    else:
        L = np.full(size, -np.inf)
    if s.has_right:
        R = cr * _weibull_ph(U[6], s.beta_R[0] * Z1 + s.beta_R[1] * Y, s.nu, s.kappa)
    else:
        R = np.full(size, np.inf)
    return {"T": T, "L": L, "R": R, "Z1": Z1, "Z2": Z2, "X": X, "Y": Y, "observed": (L <= T) & (T <= R)}


def generate_one(scenario: SimulationScenario, rng: np.random.Generator) -> dict:
    """One population record as a dict of floats plus the ``observed`` flag."""
    rec = generate_population(scenario, rng, 1)
    return {k: (bool(v[0]) if k == "observed" else float(v[0])) for k, v in rec.items()}


@functools.lru_cache(maxsize=256)
def _acceptance_rate(scenario: SimulationScenario, size: int = 10_000) -> float:
    pop = generate_population(scenario, _rng.stream(scenario.seed, _rng.PILOT), size)
    return float(pop["observed"].mean())


@dataclass
class ObservedSample:
    """Sample of ``n`` observed subjects plus bookkeeping about the draws."""

    dataset: TruncatedDataset
    drawn: int  # population records drawn until the n-th acceptance
    left_truncated: int  # among those, records with T < L
    right_truncated: int  # records with T > R

    @property
    def q(self) -> float:
        return 1.0 - self.dataset.n / self.drawn


def sample_observed(scenario: SimulationScenario, rng: np.random.Generator) -> ObservedSample:
    """Draw population records until ``n`` are observable.

    Raises
    ------
    TruncationTooSevere
        If a pilot draw accepts fewer than 1 in 10^4 records.
    """
    s = scenario.resolved()
    rate = _acceptance_rate(s)
    if rate < 1e-4:
        raise TruncationTooSevere(f"pilot acceptance rate {rate:.2e} is below 1e-4")
    batch = int(math.ceil(1.25 * s.n / rate)) + 16
    parts, got, drawn = [], 0, 0
    nl = nr = 0
    while got < s.n:
        pop = generate_population(s, rng, batch)
        ok = pop["observed"]
        need = s.n - got
        idx = np.flatnonzero(ok)
        if idx.size >= need:
            last = idx[need - 1] + 1
            sl = slice(0, last)
        else:
            last = batch
            sl = slice(0, batch)
        keep = idx[:need]
        parts.append({k: v[keep] for k, v in pop.items()})
        nl += int(np.sum(pop["T"][sl] < pop["L"][sl]))
        nr += int(np.sum(pop["T"][sl] > pop["R"][sl]))
        got += keep.size
        drawn += last
    cat = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    ds = TruncatedDataset(cat["T"], cat["L"], cat["R"], np.column_stack([cat["Z1"], cat["Z2"]]), ["z1", "z2"])
    return ObservedSample(ds, drawn, nl, nr)


# -- calibration ----------------------------------------------------------------------------


def _bisect_log(frac, target, increasing, tol, max_iter):
    lo, hi = math.log(C_LOWER), math.log(C_UPPER)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        v = frac(math.exp(mid))
        if abs(v - target) <= tol:
            return math.exp(mid)
        if (v < target) == increasing:
            lo = mid
        else:
            hi = mid
    return math.exp(0.5 * (lo + hi))


@functools.lru_cache(maxsize=256)
def _calibrate_cached(key, scenario, target_left, target_right, pilot_size, tol, max_iter):
    pop = generate_population(
        replace(scenario, c_l=1.0, c_r=1.0), _rng.stream(scenario.seed, _rng.CALIBRATION), pilot_size
    )
    T, L0, R0 = pop["T"], pop["L"], pop["R"]
    c_l = c_r = None
    if scenario.has_left:
        if target_left == 0:
            c_l = C_LOWER
        else:
            c_l = _bisect_log(lambda c: np.mean(T < c * L0), target_left, True, tol, max_iter)
            if abs(np.mean(T < c_l * L0) - target_left) > 0.01:
                raise CalibrationFailed(f"left proportion target {target_left} not reached")
    if scenario.has_right:
        if target_right == 0:
            c_r = C_UPPER
        else:
            c_r = _bisect_log(lambda c: np.mean(T > c * R0), target_right, False, tol, max_iter)
            if abs(np.mean(T > c_r * R0) - target_right) > 0.01:
                raise CalibrationFailed(f"right proportion target {target_right} not reached")
    return c_l, c_r


def calibrate_constants(
    scenario: SimulationScenario,
    target_left: float,
    target_right: float,
    pilot_size: int = 200_000,
    tol: float = 5e-4,
    max_iter: int = 200,
):
    """Scaling constants giving the requested marginal truncation proportions.

    Left: ``P(T < c_l L0) = target_left``; right: ``P(T > c_r R0) =
    target_right``. Each is a monotone function of its constant and is solved
    by bisection on ``log c`` over ``[1e-6, 1e6]``, using one fixed pilot
    draw (common random numbers) so the result is deterministic given the
    scenario seed. A zero target returns the end of the search interval.
    Results are cached per scenario.

    Returns
    -------
    (c_l, c_r)
        ``None`` for a side the scenario does not truncate.
    """
    if not (0 <= target_left <= 0.9 and 0 <= target_right <= 0.9 and target_left + target_right < 1):
        raise ScenarioError("targets must lie in [0, 0.9] and sum to less than 1")
    key = scenario.generator_key()
    base = replace(scenario, c_l=None, c_r=None, n=2, reps=1, name="", estimators=("em",))
    return _calibrate_cached(key, base, target_left, target_right, pilot_size, tol, max_iter)


def population_summary(scenario: SimulationScenario, size: int = 100_000) -> dict:
    """Population truncation proportions and correlations of ``T`` with ``L`` and ``R``."""
    s = scenario.resolved()
    pop = generate_population(s, _rng.stream(s.seed, _rng.VALIDATION), size)
    T = pop["T"]
    out = {
        "left": float(np.mean(T < pop["L"])),
        "right": float(np.mean(T > pop["R"])),
        "q": float(1 - pop["observed"].mean()),
    }
    out["rho_LT"] = float(np.corrcoef(T, pop["L"])[0, 1]) if s.has_left else float("nan")
    out["rho_RT"] = float(np.corrcoef(T, pop["R"])[0, 1]) if s.has_right else float("nan")
    return out


# -- study runner ---------------------------------------------------------------------------


@dataclass
class StudyReport:
    """Per-estimator, per-coefficient metrics over the replicates of one scenario.

    Attributes
    ----------
    rows : list of dict
        Keys ``estimator, coef, bias, sd, mean_se, mse, rmse, coverage,
        n_ok, n_failed``.
    truncation : dict
        Mean observed proportions ``left``, ``right``, ``q`` over replicates
        and population correlations ``rho_LT``, ``rho_RT``.
    estimates, ses : dict of ndarray, shape (reps, p)
        Per-replicate values, NaN where the fit failed.
    """

    scenario: SimulationScenario
    rows: list
    truncation: dict
    estimates: dict = field(repr=False, default_factory=dict)
    ses: dict = field(repr=False, default_factory=dict)

    def row(self, estimator: str, coef: int) -> dict:
        for r in self.rows:
            if r["estimator"] == estimator and r["coef"] == coef:
                return r
        raise KeyError((estimator, coef))

    def metric(self, estimator: str, coef: int, name: str) -> float:
        return self.row(estimator, coef)[name]

    COLUMNS = ("estimator", "coef", "bias", "sd", "mean_se", "mse", "rmse", "coverage", "n_ok", "n_failed")

    def to_csv(self, path) -> None:
        write_reports([self], path)


def write_reports(reports: Sequence[StudyReport], path) -> None:
    """One CSV row per scenario x estimator x coefficient."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "target_left", "target_right", *StudyReport.COLUMNS,
                    "q", "left", "right", "rho_LT", "rho_RT"])
        for rep in reports:
            t, s = rep.truncation, rep.scenario
            for r in rep.rows:
                w.writerow([
                    s.name, _fmt(s.target_left), _fmt(s.target_right), *(_fmt(r[c]) for c in StudyReport.COLUMNS),
                    *(_fmt(t[k]) for k in ("q", "left", "right", "rho_LT", "rho_RT")),
                ])


def _fmt(v):
    if isinstance(v, float):
        return "NA" if math.isnan(v) else repr(v)
    return str(v)


def _run_replicate(args):
    scenario, r, estimators, B, em_config = args
    sample = sample_observed(scenario, _rng.stream(scenario.seed, _rng.SAMPLE, r))
    ds = sample.dataset
    out = {"left": sample.left_truncated / sample.drawn, "right": sample.right_truncated / sample.drawn,
           "q": sample.q, "fits": {}}
    for name in estimators:
        try:
            res = fit_estimator(name, ds, em_config=em_config)
            if B > 0:
                boot = bootstrap(ds, name, B, seed=scenario.seed, key=(r,), original=res, em_config=em_config)
                se = boot.se
            else:
                se = np.full(res.beta.size, np.nan)
            out["fits"][name] = (np.asarray(res.beta), np.asarray(se))
        except TruncCoxError as exc:
            log.info("replicate %d, estimator %s failed: %s", r, name, exc)
            out["fits"][name] = None
    return r, out


def run_study(
    scenario: SimulationScenario,
    estimators: Iterable[str] | None = None,
    bootstrap_B: int | None = None,
    *,
    reps: int | None = None,
    em_config: EMConfig | None = None,
    workers: int = 1,
    max_failure_rate: float = 0.10,
) -> StudyReport:
    """Run the Monte Carlo study of one scenario.

    Parameters
    ----------
    scenario : SimulationScenario
    estimators : iterable of str, optional
        Defaults to ``scenario.estimators``. The standard estimator is always
        fitted because rMSE is relative to it.
    bootstrap_B : int, optional
        Resamples per replicate and estimator (0 disables standard errors).
        Defaults to ``scenario.bootstrap_B``.
    reps : int, optional
        Overrides ``scenario.reps``.
    workers : int
        Processes used for replicates. Output does not depend on it.

    Raises
    ------
    TooManyFailures
        More than ``max_failure_rate`` of the replicates failed for some estimator.
    """
    s = scenario.resolved()
    if reps is not None:
        s = replace(s, reps=reps)
    names = list(dict.fromkeys(estimators if estimators is not None else s.estimators))
    if "standard" not in names:
        names.append("standard")
    B = s.bootstrap_B if bootstrap_B is None else bootstrap_B
    jobs = [(s, r, tuple(names), B, em_config) for r in range(s.reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_replicate, jobs, chunksize=1))
    else:
        results = [_run_replicate(j) for j in jobs]
    results.sort(key=lambda x: x[0])

    p = 2
    beta0 = np.asarray(s.beta, dtype=float)
    est = {k: np.full((s.reps, p), np.nan) for k in names}
    ses = {k: np.full((s.reps, p), np.nan) for k in names}
    for r, out in results:
        for k in names:
            if out["fits"][k] is not None:
                est[k][r], ses[k][r] = out["fits"][k]
    for k in names:
        nfail = int(np.isnan(est[k][:, 0]).sum())
        if nfail > max_failure_rate * s.reps:
            raise TooManyFailures(f"estimator {k!r} failed in {nfail} of {s.reps} replicates")

    def mse(k):
        e = est[k][~np.isnan(est[k][:, 0])]
        return np.mean((e - beta0) ** 2, axis=0) if e.size else np.full(p, np.nan)

    mse_std = mse("standard")
    rows = []
    for k in names:
        ok = ~np.isnan(est[k][:, 0])
        e, se = est[k][ok], ses[k][ok]
        m = mse(k)
        for j in range(p):
            nok = int(ok.sum())
            bias = float(np.mean(e[:, j]) - beta0[j]) if nok else float("nan")
            sd = float(np.std(e[:, j], ddof=1)) if nok > 1 else float("nan")
            has_se = nok > 0 and not np.all(np.isnan(se[:, j]))
            mean_se = float(np.nanmean(se[:, j])) if has_se else float("nan")
            cover = float("nan")
            if nok > 1 and has_se:
                cover = float(np.mean(np.abs(e[:, j] - beta0[j]) <= Z95 * se[:, j]))
            rows.append({
                "estimator": k, "coef": j + 1, "bias": bias, "sd": sd, "mean_se": mean_se,
                "mse": float(m[j]), "rmse": float(m[j] / mse_std[j]) if k != "standard" else 1.0,
                "coverage": cover, "n_ok": nok, "n_failed": s.reps - nok,
            })
    summ = population_summary(s)
    trunc = {
        "left": float(np.mean([o["left"] for _, o in results])),
        "right": float(np.mean([o["right"] for _, o in results])),
        "q": float(np.mean([o["q"] for _, o in results])),
        "rho_LT": summ["rho_LT"],
        "rho_RT": summ["rho_RT"],
    }
    return StudyReport(s, rows, trunc, est, ses)


def run_grid(
    scenario: SimulationScenario,
    left_targets: Sequence[float],
    right_targets: Sequence[float],
    **kw,
) -> list[tuple[float, float, StudyReport]]:
    """Run :func:`run_study` on every (left, right) truncation-target pair."""
    out = []
    for tl in left_targets:
        for tr in right_targets:
            sc = replace(scenario, target_left=tl, target_right=tr, c_l=None, c_r=None,
                         name=f"{scenario.name}_L{tl:g}_R{tr:g}")
            out.append((tl, tr, run_study(sc, **kw)))
    return out


def write_long_csv(cells, path) -> None:
    """Long-format metrics for plotting: one row per cell x estimator x coef x metric."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["target_left", "target_right", "estimator", "coef", "metric", "value"])
        for tl, tr, rep in cells:
            for r in rep.rows:
                for metric in ("bias", "sd", "mean_se", "mse", "rmse", "coverage"):
                    w.writerow([repr(tl), repr(tr), r["estimator"], r["coef"], metric, _fmt(r[metric])])
