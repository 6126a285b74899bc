"""Approximate leave-one-out parameters and the approximate CV vector.

For a converged fit theta_hat, the leave-one-out parameter for sample i is
approximated by one Newton step on the leave-one-out objective started at
theta_hat:

    theta_tilde_i = theta_hat + (1/(n-1)) H_{-i}(theta_hat)^{-1} grad loss(z_i; theta_hat)

where H_{-i} is the empirical Hessian over the other n-1 samples.  For
quadratic objectives the step is exact.  With an l1 penalty the step is
taken on the support of theta_hat only.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .core import Dataset, GLMLoss, RegularizedObjective, _as_index_array, empirical_hessian
from .solver import FittedModel, LoocvResult, SolverConfig, fit, loocv_exact

# below this the downdated Hessian is treated as singular
_PIVOT_FLOOR = 1e-12

METHODS = ("sherman_morrison", "downdate")


class EstimatorUndefinedError(ArithmeticError):
    """The leave-out Hessian is singular or indefinite for this index."""

    def __init__(self, index, message="leave-out Hessian is not positive definite"):
        super().__init__(f"index {index}: {message}")
        self.index = index


@dataclass
class LooEstimate:
    index: int | tuple[int, ...]
    theta_tilde: np.ndarray | None
    acv: float
    cv_exact: float | None = None
    if_baseline: float | None = None
    support_violation: bool | None = None
    error: str | None = None


@dataclass
class AcvReport:
    estimates: list[LooEstimate]
    acv_mean: float
    acv_std_error: float
    wall_time: float
    n_undefined: int = 0
    exact: LoocvResult | None = field(default=None, repr=False)

    @property
    def acv(self) -> np.ndarray:
        return np.array([e.acv for e in self.estimates])

    @property
    def cv(self) -> np.ndarray:
        return np.array([np.nan if e.cv_exact is None else e.cv_exact for e in self.estimates])

    @property
    def influence(self) -> np.ndarray:
        return np.array([np.nan if e.if_baseline is None else e.if_baseline for e in self.estimates])

    @property
    def thetas(self) -> np.ndarray:
        k = next((e.theta_tilde.shape[0] for e in self.estimates if e.theta_tilde is not None), 0)
        return np.vstack([np.full(k, np.nan) if e.theta_tilde is None else e.theta_tilde for e in self.estimates])

    @property
    def cv_mean(self) -> float:
        return float(np.nanmean(self.cv))

    @property
    def if_mean(self) -> float:
        return float(np.nanmean(self.influence))


def mean_and_stderr(values) -> tuple[float, float]:
    """Mean and population standard deviation over sqrt(n), ignoring NaNs."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return float("nan"), float("nan")
    return float(v.mean()), float(v.std() / np.sqrt(v.size))


def free_coordinates(fitted: FittedModel) -> np.ndarray:
    """Coordinates the approximation may move: the active set for l1 fits, else all."""
    if fitted.active_set is not None:
        return np.asarray(fitted.active_set, dtype=int)
    return np.arange(fitted.k)


def _require_converged(fitted: FittedModel):
    if not fitted.converged:
        raise ValueError("approximate leave-out estimates need a converged fit")
    if fitted.exclude:
        raise ValueError("fitted model must be a full-data fit")


def aloocv_parameter_q(dataset: Dataset, fitted: FittedModel, objective: RegularizedObjective, S) -> np.ndarray:
    """Approximate parameter after leaving out the index set ``S``.

    ``theta_hat + (1/(n-q)) H_{-S}^{-1} sum_{i in S} grad loss(z_i; theta_hat)``,
    restricted to the free coordinates.  The Hessian is assembled from
    scratch over the retained samples.
    """
    _require_converged(fitted)
    S = _as_index_array(S, dataset.n)
    q = S.size
    if not 1 <= q < dataset.n:
        raise ValueError(f"leave-out set size must satisfy 1 <= q < n, got q={q}, n={dataset.n}")
    theta = fitted.theta_hat
    free = free_coordinates(fitted)
    H = empirical_hessian(dataset, theta, objective, exclude=S)[np.ix_(free, free)]
    g = objective.loss.gradient(dataset.X[S], dataset.y[S], theta).sum(axis=0)[free]
    try:
        step = cho_solve(cho_factor(H), g)
    except LinAlgError:
        raise EstimatorUndefinedError(tuple(S.tolist()) if q > 1 else int(S[0])) from None
    out = theta.copy()
    out[free] += step / (dataset.n - q)
    return out


def aloocv_parameter(dataset: Dataset, fitted: FittedModel, objective: RegularizedObjective, i: int) -> np.ndarray:
    """Approximate leave-one-out parameter for sample ``i``."""
    return aloocv_parameter_q(dataset, fitted, objective, [i])


def _sherman_morrison(dataset, fitted, objective, free, want_quad=False):
    loss = objective.loss
    theta = fitted.theta_hat
    A = loss.design(dataset.X)[:, free]
    c = loss.curvature(dataset.X, dataset.y, theta)
    s = loss.slope(dataset.X, dataset.y, theta)
    T = (A * c[:, None]).T @ A + objective.penalty_hessian(theta)[np.ix_(free, free)]
    n = dataset.n
    try:
        factor = cho_factor(0.5 * (T + T.T))
    except LinAlgError:
        bad = np.ones(n, dtype=bool)
        return np.full((n, free.size), np.nan), bad, np.full(n, np.nan)
    B = cho_solve(factor, A.T)  # T^{-1} a_i in column i
    h = np.einsum("ij,ji->i", A, B)
    denom = 1.0 - c * h
    bad = ~(denom > _PIVOT_FLOOR)
    safe = np.where(bad, 1.0, denom)
    steps = (B * (s / safe)).T
    steps[bad] = np.nan
    quad = np.where(bad, np.nan, s * s * h / safe)
    return steps, bad, quad


def _downdate(dataset, fitted, objective, free):
    loss = objective.loss
    theta = fitted.theta_hat
    n = dataset.n
    T = objective.total_hessian(dataset, theta)[np.ix_(free, free)]
    G = loss.gradient(dataset.X, dataset.y, theta)[:, free]
    steps = np.full((n, free.size), np.nan)
    quad = np.full(n, np.nan)
    bad = np.zeros(n, dtype=bool)
    for i in range(n):
        Hi = loss.hess(dataset[i], theta)[np.ix_(free, free)]
        try:
            f = cho_factor(T - Hi)
        except LinAlgError:
            bad[i] = True
            continue
        steps[i] = cho_solve(f, G[i])
        quad[i] = G[i] @ steps[i]
    return steps, bad, quad


def loo_steps(dataset: Dataset, fitted: FittedModel, objective: RegularizedObjective, method: str = "sherman_morrison"):
    """All leave-one-out Newton steps at once.

    Returns ``(thetas, undefined, quad)``: the n x k approximate parameters
    (NaN rows where undefined), a boolean mask of indices whose leave-out
    Hessian is not positive definite, and the quadratic forms
    ``g_i^T (n-1)^{-1} H_{-i}^{-1} g_i`` used by the influence baseline.

    ``method="sherman_morrison"`` factors the full Hessian once and corrects
    for each sample with a rank-one update (GLM losses only);
    ``method="downdate"`` refactors the downdated Hessian for every i.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    _require_converged(fitted)
    free = free_coordinates(fitted)
    if method == "sherman_morrison" and isinstance(objective.loss, GLMLoss):
        steps, bad, quad = _sherman_morrison(dataset, fitted, objective, free)
    else:
        steps, bad, quad = _downdate(dataset, fitted, objective, free)
    thetas = np.tile(fitted.theta_hat, (dataset.n, 1))
    thetas[:, free] += steps
    thetas[bad] = np.nan
    return thetas, bad, quad


def rowwise_loss(objective: RegularizedObjective, dataset: Dataset, thetas) -> np.ndarray:
    """loss(z_i; thetas[i]) for every i."""
    loss = objective.loss
    if isinstance(loss, GLMLoss):
        eta = np.einsum("ij,ij->i", loss.design(dataset.X), thetas)
        return loss._value(eta, dataset.y)
    return np.array([loss.loss(dataset[i], thetas[i]) for i in range(dataset.n)])


def acv_vector(
    dataset: Dataset,
    fitted: FittedModel,
    objective: RegularizedObjective,
    with_exact: bool = False,
    with_if: bool = False,
    method: str = "sherman_morrison",
    config: SolverConfig | None = None,
    threads: int = 1,
) -> AcvReport:
    """Approximate cross-validation vector, optionally next to exact LOOCV and the influence baseline."""
    start = time.perf_counter()
    thetas, bad, quad = loo_steps(dataset, fitted, objective, method)
    acv = rowwise_loss(objective, dataset, np.where(bad[:, None], fitted.theta_hat, thetas))
    acv[bad] = np.nan
    wall = time.perf_counter() - start

    influence = None
    if with_if:
        influence = objective.loss.value(dataset.X, dataset.y, fitted.theta_hat) + quad
    exact = None
    if with_exact:
        exact = loocv_exact(dataset, objective, config, fitted=fitted, threads=threads)

    full_support = fitted.theta_hat != 0
    estimates = []
    for i in range(dataset.n):
        est = LooEstimate(i, None if bad[i] else thetas[i], float(acv[i]))
        if bad[i]:
            est.error = EstimatorUndefinedError.__name__
        if influence is not None:
            est.if_baseline = float(influence[i])
        if exact is not None:
            est.cv_exact = float(exact.values[i])
            if fitted.active_set is not None:
                est.support_violation = bool(np.any((exact.thetas[i] != 0) != full_support))
        estimates.append(est)
    mean, se = mean_and_stderr(acv)
    return AcvReport(estimates, mean, se, wall, int(bad.sum()), exact)


# ---------------------------------------------------------------------------
# Error scaling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalingTable:
    n: np.ndarray
    loo_shift: np.ndarray  # max_i ||theta_hat(z^n) - theta_hat(z^{n minus i})||_inf
    approx_error: np.ndarray  # max_i ||theta_hat(z^{n minus i}) - theta_tilde_i||_inf

    def slopes(self) -> tuple[float, float]:
        return loglog_slope(self.n, self.loo_shift), loglog_slope(self.n, self.approx_error)

    def to_csv(self) -> str:
        lines = ["n,loo_shift,approx_error"]
        lines += [f"{int(n)},{float(a)!r},{float(b)!r}" for n, a, b in zip(self.n, self.loo_shift, self.approx_error)]
        return "\n".join(lines) + "\n"


def loglog_slope(x, y) -> float:
    """Least-squares slope of log(y) against log(x)."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(lx, ly, 1)[0])


def _probe_problem(family, n, p, lam, seed):
    from . import data, models

    if family == "ridge":
        ds, _ = data.synth_ridge(n, p, max(1, p // 5), 0.1, seed)
        return ds, models.ridge(p, lam)
    if family == "logistic":
        ds, _ = data.synth_logistic(n, p, seed)
        return ds, models.logistic(p, True, lam)
    if family == "elastic_net":
        ds, _ = data.synth_elastic(n, p, seed)
        return ds, models.elastic_net(p, (lam, lam))
    raise ValueError(f"unknown family {family!r}")


def error_scaling_probe(family: str, n_grid, seed=0, p: int = 10, lam: float = 1.0, config: SolverConfig | None = None) -> ScalingTable:
    """Measure how the leave-one-out shift and the approximation error shrink with n.

    Exact refits are the ground truth.  ``seed`` may be a sequence, in which
    case the maxima are averaged over seeds.
    """
    n_grid = [int(v) for v in n_grid]
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])) or min(n_grid) < 20:
        raise ValueError("n_grid must be ascending with every entry >= 20")
    seeds = [int(s) for s in np.atleast_1d(seed)]
    config = config or SolverConfig()
    shift = np.zeros(len(n_grid))
    err = np.zeros(len(n_grid))
    for s in seeds:
        for j, n in enumerate(n_grid):
            ds, obj = _probe_problem(family, n, p, lam, s)
            fitted = fit(ds, obj, config)
            exact = loocv_exact(ds, obj, config, fitted=fitted)
            approx, bad, _ = loo_steps(ds, fitted, obj)
            if bad.any():
                raise EstimatorUndefinedError(int(np.flatnonzero(bad)[0]))
            shift[j] += np.max(np.abs(exact.thetas - fitted.theta_hat))
            err[j] += np.max(np.abs(exact.thetas - approx))
    return ScalingTable(np.array(n_grid), shift / len(seeds), err / len(seeds))
