"""Influence-function style baseline and per-sample alignment of the three estimators.

The baseline keeps the parameter at theta_hat and adds a second-order
correction to the training loss:

    IF_i = loss(z_i; theta_hat) + (1/(n-1)) g_i^T H_{-i}^{-1} g_i,   g_i = grad loss(z_i; theta_hat)

Its mean is the in-sample loss plus the correction term R_hat.  Unlike the
approximate CV it never evaluates the loss away from theta_hat, which is
why it underestimates the leave-one-out loss of badly fit points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .approx import AcvReport, EstimatorUndefinedError, free_coordinates, loo_steps
from .core import Dataset, RegularizedObjective, empirical_hessian
from .solver import FittedModel


def influence_baseline(dataset: Dataset, fitted: FittedModel, objective: RegularizedObjective, i: int) -> float:
    theta = fitted.theta_hat
    free = free_coordinates(fitted)
    sample = dataset[i]
    g = objective.loss.grad(sample, theta)[free]
    H = empirical_hessian(dataset, theta, objective, exclude=i)[np.ix_(free, free)]
    try:
        quad = g @ cho_solve(cho_factor(H), g)
    except LinAlgError:
        raise EstimatorUndefinedError(i) from None
    return objective.loss.loss(sample, theta) + quad / (dataset.n - 1)


def influence_vector(dataset: Dataset, fitted: FittedModel, objective: RegularizedObjective, method: str = "sherman_morrison") -> np.ndarray:
    """IF_i for every sample (NaN where the leave-out Hessian is not positive definite)."""
    _, bad, quad = loo_steps(dataset, fitted, objective, method)
    out = objective.loss.value(dataset.X, dataset.y, fitted.theta_hat) + quad
    out[bad] = np.nan
    return out


def correction_terms(dataset: Dataset, fitted: FittedModel, objective: RegularizedObjective) -> tuple[float, float]:
    """In-sample loss L_hat and correction R_hat evaluated term by term with explicit inverses."""
    theta = fitted.theta_hat
    free = free_coordinates(fitted)
    n = dataset.n
    L = float(np.mean(objective.loss.value(dataset.X, dataset.y, theta)))
    G = objective.loss.gradient(dataset.X, dataset.y, theta)[:, free]
    R = 0.0
    for i in range(n):
        Hinv = np.linalg.inv(empirical_hessian(dataset, theta, objective, exclude=i)[np.ix_(free, free)])
        R += G[i] @ Hinv @ G[i]
    return L, R / (n * (n - 1))


@dataclass(frozen=True)
class EstimatorComparison:
    in_sample: np.ndarray
    cv: np.ndarray
    acv: np.ndarray
    influence: np.ndarray

    @property
    def means(self) -> dict:
        return {
            "in_sample": float(np.mean(self.in_sample)),
            "cv": float(np.nanmean(self.cv)),
            "acv": float(np.nanmean(self.acv)),
            "if": float(np.nanmean(self.influence)),
        }

    def ordering_holds(self) -> bool:
        """IF below ACV on average, and ACV closer than IF to exact CV."""
        m = self.means
        return m["if"] < m["acv"] and abs(m["acv"] - m["cv"]) < abs(m["if"] - m["cv"])

    def normalized_differences(self) -> np.ndarray:
        """(ACV_i - CV_i) / CV_i for every sample."""
        return (self.acv - self.cv) / self.cv


def align(dataset: Dataset, fitted: FittedModel, objective: RegularizedObjective, report: AcvReport) -> EstimatorComparison:
    """Line up training loss, exact CV, ACV and IF per sample from a report built with exact and IF columns."""
    if any(e.cv_exact is None or e.if_baseline is None for e in report.estimates):
        raise ValueError("report must be built with with_exact=True and with_if=True")
    train = objective.loss.value(dataset.X, dataset.y, fitted.theta_hat)
    return EstimatorComparison(train, report.cv, report.acv, report.influence)
