"""High-precision solvers for the regularized ERM problem.

Smooth objectives are minimised by Newton's method with Armijo
backtracking.  Objectives with a positively weighted l1 term are handled by
proximal gradient (to find the support) followed by Newton on the support.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .core import Dataset, RegularizedObjective, _as_index_array

log = logging.getLogger(__name__)

# relative size of the roundoff band for objective values (sums of many terms)
_FLOOR = 1e-11


class ConvergenceError(RuntimeError):
    """Raised when a fit does not reach its tolerance; ``fitted`` holds the last iterate."""

    def __init__(self, message, fitted=None, index=None):
        super().__init__(message)
        self.fitted = fitted
        self.index = index


@dataclass(frozen=True)
class SolverConfig:
    gradient_tolerance: float = 1e-10
    max_iterations: int = 100
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 60
    # l1 problems
    prox_max_iterations: int = 20000
    prox_step: float | None = None
    support_patience: int = 5
    max_polish_rounds: int = 50

    def __post_init__(self):
        if not self.gradient_tolerance > 0:
            raise ValueError("gradient_tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not 0 < self.backtrack < 1 or not 0 < self.armijo < 1:
            raise ValueError("line search constants must lie in (0, 1)")


@dataclass(frozen=True)
class FittedModel:
    theta_hat: np.ndarray
    lambdas: np.ndarray
    converged: bool
    iterations: int
    final_gradient_norm: float
    active_set: np.ndarray | None = None
    exclude: tuple[int, ...] | None = None

    @property
    def k(self) -> int:
        return self.theta_hat.shape[0]


@dataclass
class _NewtonResult:
    x: np.ndarray
    iterations: int
    gnorm: float
    converged: bool
    history: list


def _newton(fun, grad, hess, x0, config: SolverConfig, max_iterations=None) -> _NewtonResult:
    x = np.array(x0, dtype=float)
    f = fun(x)
    g = grad(x)
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    history = [f]
    max_iterations = config.max_iterations if max_iterations is None else max_iterations
    it = 0
    while gnorm > config.gradient_tolerance and it < max_iterations:
        it += 1
        try:
            # a non-finite Hessian yields a non-finite slope and the gradient fallback
            d = -cho_solve(cho_factor(hess(x), check_finite=False), g, check_finite=False)
        except (LinAlgError, ValueError):
            d = -g
        slope = float(g @ d)
        if not np.isfinite(slope) or slope >= 0:
            d = -g
            slope = -float(g @ g)
        t = 1.0
        noise = _FLOOR * max(abs(f), 1.0)
        accepted = False
        for _ in range(config.max_backtracks):
            cand = x + t * d
            f_new = fun(cand)
            if f_new <= f + config.armijo * t * slope:
                g_new = grad(cand)
                accepted = True
                break
            if f_new <= f + noise:
                # inside the roundoff band the Armijo test cannot register a
                # decrease; accept the step if it shrinks the gradient instead
                g_new = grad(cand)
                if np.max(np.abs(g_new)) < gnorm:
                    accepted = True
                    break
            t *= config.backtrack
        if not accepted:
            log.debug("line search failed at iteration %d, |g|=%.3e", it, gnorm)
            break
        x, f, g = cand, min(f, f_new), g_new
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        history.append(f)
    return _NewtonResult(x, it, gnorm, gnorm <= config.gradient_tolerance, history)


def _soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def kkt_residual(objective: RegularizedObjective, X, y, theta) -> float:
    """Largest violation of the (sub)gradient optimality conditions."""
    g = objective.smooth_gradient(X, y, theta)
    w = objective.l1_weights(theta.shape[0])
    nz = theta != 0
    r = np.where(w > 0, np.where(nz, np.abs(g + w * np.sign(theta)), np.maximum(np.abs(g) - w, 0.0)), np.abs(g))
    return float(np.max(r)) if r.size else 0.0


def _fit_smooth(objective, X, y, theta0, config):
    res = _newton(
        lambda th: objective.smooth_total(X, y, th),
        lambda th: objective.smooth_gradient(X, y, th),
        lambda th: objective.loss.hessian_sum(X, y, th) + objective.penalty_hessian(th),
        theta0,
        config,
    )
    return res.x, res.iterations, res.gnorm, res.converged


def _fit_l1(objective, X, y, theta0, config):
    k = theta0.shape[0]
    w = objective.l1_weights(k)
    smooth = lambda th: objective.smooth_total(X, y, th)  # noqa: E731
    sgrad = lambda th: objective.smooth_gradient(X, y, th)  # noqa: E731
    shess = lambda th: objective.loss.hessian_sum(X, y, th) + objective.penalty_hessian(th)  # noqa: E731

    theta = np.array(theta0, dtype=float)
    step = config.prox_step
    if step is None:
        step = 1.0 / max(np.linalg.eigvalsh(shess(theta))[-1], 1e-12)
    iterations = 0
    resid = kkt_residual(objective, X, y, theta)
    for _ in range(config.max_polish_rounds):
        if resid <= config.gradient_tolerance:
            return theta, iterations, resid, True

        # proximal gradient until the support settles
        support = theta != 0
        stable = 0
        f = smooth(theta)
        g = sgrad(theta)
        for _ in range(config.prox_max_iterations):
            iterations += 1
            while True:
                cand = _soft_threshold(theta - step * g, step * w)
                diff = cand - theta
                f_new = smooth(cand)
                if f_new <= f + g @ diff + (diff @ diff) / (2 * step) + _FLOOR * max(abs(f), 1.0):
                    break
                step *= config.backtrack
            theta, f = cand, f_new
            g = sgrad(theta)
            new_support = theta != 0
            stable = stable + 1 if np.array_equal(new_support, support) else 0
            support = new_support
            small = np.max(np.abs(diff)) <= 1e-6 * max(1.0, np.max(np.abs(theta)))
            if stable >= config.support_patience and small:
                break
        # Newton polish with the sign pattern held fixed
        free = np.flatnonzero(support | (w == 0))
        signs = np.sign(theta)
        lin = w * signs

        def embed(v):
            full = np.zeros(k)
            full[free] = v
            return full

        res = _newton(
            lambda v: smooth(embed(v)) + lin[free] @ v,
            lambda v: sgrad(embed(v))[free] + lin[free],
            lambda v: shess(embed(v))[np.ix_(free, free)],
            theta[free],
            config,
        )
        iterations += res.iterations
        polished = embed(res.x)
        same_signs = np.array_equal(np.sign(polished[w > 0]), signs[w > 0])
        if same_signs:
            resid = kkt_residual(objective, X, y, polished)
            theta = polished
        else:
            resid = kkt_residual(objective, X, y, theta)
    return theta, iterations, resid, resid <= config.gradient_tolerance


def fit(
    dataset: Dataset,
    objective: RegularizedObjective,
    config: SolverConfig | None = None,
    exclude=None,
    warm_start=None,
    raise_on_failure: bool = True,
) -> FittedModel:
    """Minimise ``sum_{j in S} loss(z_j; theta) + lambda^T r(theta)``.

    Parameters
    ----------
    dataset : Dataset
    objective : RegularizedObjective
    config : SolverConfig, optional
    exclude : int or sequence of int, optional
        Rows left out of the sum (leave-one-out / leave-q-out refits).
    warm_start : array, optional
        Starting point; only affects the iteration count.
    raise_on_failure : bool
        Raise :class:`ConvergenceError` if the tolerance is not met.  When
        False, the unconverged model is returned with ``converged=False``.

    Returns
    -------
    FittedModel
    """
    config = config or SolverConfig()
    k = objective.n_params(dataset.p)
    excl = None
    if exclude is not None:
        excl = tuple(int(i) for i in _as_index_array(exclude, dataset.n))
        if dataset.n - len(excl) < 1:
            raise ValueError("leave-out refits need at least one retained sample")
    X, y = dataset.rows(excl)
    theta0 = np.zeros(k) if warm_start is None else np.array(warm_start, dtype=float)
    if theta0.shape != (k,):
        raise ValueError(f"warm start has shape {theta0.shape}, expected ({k},)")

    l1 = objective.l1_mask
    if l1 is None:
        theta, iters, gnorm, ok = _fit_smooth(objective, X, y, theta0, config)
    else:
        theta, iters, gnorm, ok = _fit_l1(objective, X, y, theta0, config)

    active = None
    if objective.has_l1:
        penalised = l1 if l1 is not None else np.zeros(k, dtype=bool)
        active = np.flatnonzero((theta != 0) | ~penalised)
    theta.setflags(write=False)
    fitted = FittedModel(theta, objective.lambdas, ok, iters, gnorm, active, excl)
    if not ok and raise_on_failure:
        raise ConvergenceError(
            f"solver stopped after {iters} iterations with optimality residual {gnorm:.3e} "
            f"(tolerance {config.gradient_tolerance:.1e})",
            fitted,
        )
    return fitted


@dataclass(frozen=True)
class LoocvResult:
    """Exact leave-one-out refits: one parameter row and one loss per sample."""

    thetas: np.ndarray
    values: np.ndarray
    iterations: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    def __len__(self):
        return self.values.shape[0]

    def __iter__(self):
        return iter(zip(self.thetas, self.values))


def loocv_exact(
    dataset: Dataset,
    objective: RegularizedObjective,
    config: SolverConfig | None = None,
    fitted: FittedModel | None = None,
    threads: int = 1,
) -> LoocvResult:
    """Refit with each sample held out and evaluate the loss on it.

    Refits are warm-started at the full-data solution.  A failed refit raises
    :class:`ConvergenceError` with ``index`` set to the held-out sample.
    """
    config = config or SolverConfig()
    if fitted is None:
        fitted = fit(dataset, objective, config)
    start = fitted.theta_hat

    def one(i):
        try:
            return fit(dataset, objective, config, exclude=i, warm_start=start)
        except ConvergenceError as err:
            raise ConvergenceError(f"leave-out refit {i} failed: {err}", err.fitted, index=i) from err

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fits = list(pool.map(one, range(dataset.n)))
    else:
        fits = [one(i) for i in range(dataset.n)]
    thetas = np.vstack([f.theta_hat for f in fits])
    values = np.array([objective.loss.loss(dataset[i], thetas[i]) for i in range(dataset.n)])
    return LoocvResult(thetas, values, np.array([f.iterations for f in fits]))
