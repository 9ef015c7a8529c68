"""Named estimators with a common calling convention.

``fit_estimator(name, dataset)`` returns an :class:`EstimatorResult` whose
``beta`` is the coefficient vector. Bootstrap, simulation and the command
line all go through this table.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .core import TruncatedDataset
from .cox_core import cox_left_adjusted, cox_standard
from .em_truncation import EMConfig, ParameterState, fit_em, transfer_baseline
from .errors import ValidationError
from .selection_weights import fit_weighted_estimator

ESTIMATORS = ("em", "weighted", "standard", "left-adjusted")


@dataclass
class EstimatorResult:
    name: str
    beta: np.ndarray
    fit: Any
    extra: Any = None

    def warm_start(self, dataset: TruncatedDataset):
        """Starting value for refitting on ``dataset`` (a resample of the original)."""
        if self.name == "em":
            try:
                return transfer_baseline(self.fit.theta, self.fit.times, dataset.distinct_times)
            except ValidationError:
                return None
        return self.beta


def fit_estimator(
    name: str,
    dataset: TruncatedDataset,
    init=None,
    em_config: EMConfig | None = None,
) -> EstimatorResult:
    """Fit estimator ``name`` to ``dataset``.

    Parameters
    ----------
    name : {"em", "weighted", "standard", "left-adjusted"}
    init : optional
        Warm start: a ParameterState for "em", a coefficient vector otherwise.
    em_config : EMConfig, optional
    """
    if name == "em":
        if init is not None and not isinstance(init, ParameterState):
            init = None
        fit = fit_em(dataset, em_config, init=init)
        return EstimatorResult(name, np.array(fit.beta), fit)
    kw = {} if init is None or isinstance(init, ParameterState) else {"init": init}
    if name == "weighted":
        fit, sel = fit_weighted_estimator(dataset)
        return EstimatorResult(name, fit.beta, fit, sel)
    if name == "standard":
        fit = cox_standard(dataset, **kw)
        return EstimatorResult(name, fit.beta, fit)
    if name == "left-adjusted":
        fit = cox_left_adjusted(dataset, **kw)
        return EstimatorResult(name, fit.beta, fit)
    raise ValidationError(f"unknown estimator {name!r}; choose from {ESTIMATORS}")
