"""Concrete model families: diagonal ridge, logistic regression, elastic net."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .core import GLMLoss, L1Norm, NonFiniteError, RegularizedObjective, SquaredCoordinate, SquaredNorm


class SquaredLoss(GLMLoss):
    """0.5 * (y - a^T theta)^2"""

    constant_curvature = True

    def _value(self, eta, y):
        return 0.5 * (y - eta) ** 2

    def _d1(self, eta, y):
        return eta - y

    def _d2(self, eta, y):
        return np.ones_like(eta)

    def hessian_sum(self, X, y, theta):
        self.score(X, theta)  # dimension check
        A = self.design(X)
        H = A.T @ A
        if not np.all(np.isfinite(H)):
            raise NonFiniteError("non-finite per-sample Hessian")
        return 0.5 * (H + H.T)

    def __repr__(self):
        return f"SquaredLoss(intercept={self.intercept})"


class LogisticLoss(GLMLoss):
    """Binary cross entropy H(y || sigmoid(a^T theta)) for labels in {0, 1}.

    Equal to log(1 + exp(eta)) - y * eta; evaluated as
    log(1 + exp(-|eta|)) plus a linear term so that confident predictions
    keep their relative precision.
    """

    def _value(self, eta, y):
        return np.logaddexp(0.0, -np.abs(eta)) + np.where(eta > 0, (1.0 - y) * eta, -y * eta)

    def _d1(self, eta, y):
        return expit(eta) - y

    def _d2(self, eta, y):
        return expit(eta) * expit(-eta)

    def __repr__(self):
        return f"LogisticLoss(intercept={self.intercept})"


def ridge_diagonal(p: int, lambdas=None) -> RegularizedObjective:
    """Least squares with one penalty 0.5 * theta_m^2 per coordinate (M = p)."""
    if p < 1:
        raise ValueError("p must be positive")
    regs = tuple(SquaredCoordinate(p, m) for m in range(p))
    return RegularizedObjective(SquaredLoss(), regs, lambdas)


def ridge(p: int, lam: float = 0.0, intercept: bool = False) -> RegularizedObjective:
    """Least squares with a single penalty 0.5 * ||theta||^2 (M = 1)."""
    if p < 1:
        raise ValueError("p must be positive")
    loss = SquaredLoss(intercept)
    k = loss.n_params(p)
    coords = range(1, k) if intercept else None
    return RegularizedObjective(loss, (SquaredNorm(k, coords),), [lam])


def logistic(p: int, with_intercept: bool = True, lam: float = 0.0) -> RegularizedObjective:
    """Logistic regression with penalty 0.5 * ||theta||^2; the intercept is not penalised."""
    if p < 1:
        raise ValueError("p must be positive")
    loss = LogisticLoss(with_intercept)
    k = loss.n_params(p)
    coords = range(1, k) if with_intercept else None
    return RegularizedObjective(loss, (SquaredNorm(k, coords),), [lam])


def elastic_net(p: int, lambdas=(0.0, 0.0)) -> RegularizedObjective:
    """Least squares with r_1 = ||theta||_1 (l1) and r_2 = 0.5 * ||theta||^2."""
    if p < 1:
        raise ValueError("p must be positive")
    return RegularizedObjective(SquaredLoss(), (L1Norm(p), SquaredNorm(p)), lambdas)


FAMILIES = ("ridge", "ridge_diagonal", "logistic", "elastic_net")


def make_objective(family: str, p: int, lambdas) -> RegularizedObjective:
    """Build a family's objective from its name; a scalar lambda is broadcast."""
    lam = np.atleast_1d(np.asarray(lambdas, dtype=float))
    if family in ("ridge", "logistic") and lam.size != 1:
        raise ValueError(f"family {family!r} takes a single lambda, got {lam.size}")
    if family == "ridge":
        return ridge(p, float(lam[0]))
    if family == "ridge_diagonal":
        return ridge_diagonal(p, np.broadcast_to(lam, (p,)) if lam.size == 1 else lam)
    if family == "logistic":
        return logistic(p, True, float(lam[0]))
    if family == "elastic_net":
        return elastic_net(p, np.broadcast_to(lam, (2,)) if lam.size == 1 else lam)
    raise ValueError(f"unknown model family {family!r}; choose from {list(FAMILIES)}")
