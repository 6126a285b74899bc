"""Gradient-based tuning of the regularization vector on the approximate CV loss.

The CV loss of sample i depends on lambda through the leave-one-out
parameter; by the implicit function theorem

    d theta_{-i} / d lambda = -(1/(n-1)) H_{-i}(theta_{-i})^{-1} J_r(theta_{-i})

with J_r the k x M matrix of regularizer gradients.  Replacing theta_{-i}
by its one-step approximation gives the per-sample gradient

    g_i = -(1/(n-1)) J_r(theta_i)^T H_{-i}(theta_i)^{-1} grad loss(z_i; theta_i)

which is averaged (batch descent) or sampled (stochastic descent).
"""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .approx import EstimatorUndefinedError, aloocv_parameter, free_coordinates, loo_steps, rowwise_loss
from .core import Dataset, GLMLoss, RegularizedObjective, as_lambdas, empirical_hessian
from .data import make_rng
from .solver import ConvergenceError, FittedModel, SolverConfig, fit

log = logging.getLogger(__name__)

STEP_RULES = ("backtracking", "fixed", "decay")
GRADIENT_MODES = ("tilde", "hat")


def lambda_gradient_full(dataset: Dataset, fitted: FittedModel, objective: RegularizedObjective) -> np.ndarray:
    """Derivative of the full-data solution with respect to lambda (k x M).

    ``-(1/n) H(theta_hat)^{-1} J_r(theta_hat)``; coordinates outside the
    active set of an l1 fit have zero derivative.
    """
    theta = fitted.theta_hat
    free = free_coordinates(fitted)
    H = empirical_hessian(dataset, theta, objective)[np.ix_(free, free)]
    J = objective.penalty_jacobian(theta)[free]
    try:
        D = cho_solve(cho_factor(H), J)
    except LinAlgError:
        raise EstimatorUndefinedError("full", "full-data Hessian is not positive definite") from None
    out = np.zeros((fitted.k, objective.M))
    out[free] = -D / dataset.n
    return out


def per_sample_gradient(
    dataset: Dataset,
    fitted: FittedModel,
    objective: RegularizedObjective,
    i: int,
    theta_tilde=None,
    mode: str = "tilde",
) -> np.ndarray:
    """Approximate gradient of the i-th CV loss with respect to lambda (length M).

    ``mode="tilde"`` evaluates every factor at the approximate leave-one-out
    parameter; ``mode="hat"`` evaluates them at theta_hat instead (cheaper,
    less faithful).
    """
    if mode not in GRADIENT_MODES:
        raise ValueError(f"mode must be one of {GRADIENT_MODES}")
    if mode == "hat":
        point = fitted.theta_hat
    elif theta_tilde is None:
        point = aloocv_parameter(dataset, fitted, objective, i)
    else:
        point = np.asarray(theta_tilde, dtype=float)
    free = free_coordinates(fitted)
    H = empirical_hessian(dataset, point, objective, exclude=i)[np.ix_(free, free)]
    gl = objective.loss.grad(dataset[i], point)[free]
    J = objective.penalty_jacobian(point, l1_at=fitted.theta_hat)[free]
    try:
        u = cho_solve(cho_factor(H), gl)
    except LinAlgError:
        raise EstimatorUndefinedError(i) from None
    return -(J.T @ u) / (dataset.n - 1)


@dataclass(frozen=True)
class GradientResult:
    mean: np.ndarray  # averaged over the sample pool
    per_sample: np.ndarray  # n x M (rows outside the pool are still filled)
    thetas: np.ndarray  # evaluation points, n x k
    acv: np.ndarray  # loss(z_i; theta_tilde_i)


def _solve_stack(T, rhs):
    """Solve T_i u_i = rhs_i for a stack of symmetric matrices; flag non-PD ones."""
    n = T.shape[0]
    try:
        L = np.linalg.cholesky(T)
        bad = np.zeros(n, dtype=bool)
    except np.linalg.LinAlgError:
        bad = np.zeros(n, dtype=bool)
        for i in range(n):
            try:
                np.linalg.cholesky(T[i])
            except np.linalg.LinAlgError:
                bad[i] = True
        T = T.copy()
        T[bad] = np.eye(T.shape[1])
        L = np.linalg.cholesky(T)
    z = np.linalg.solve(L, rhs[:, :, None])
    u = np.linalg.solve(np.swapaxes(L, 1, 2), z)[:, :, 0]
    return u, bad


def _loo_directions(dataset, fitted, objective, points, free, mode):
    """u_i = T_{-i}(point_i)^{-1} grad loss(z_i; point_i), restricted to ``free``."""
    loss = objective.loss
    n = dataset.n
    if not isinstance(loss, GLMLoss):
        U = np.zeros((n, free.size))
        for i in range(n):
            H = objective.total_hessian(dataset, points[i], exclude=i)[np.ix_(free, free)]
            try:
                U[i] = cho_solve(cho_factor(H), loss.grad(dataset[i], points[i])[free])
            except LinAlgError:
                raise EstimatorUndefinedError(i) from None
        return U

    A = loss.design(dataset.X)[:, free]
    slopes = loss._d1(np.einsum("ij,ij->i", loss.design(dataset.X), points), dataset.y)
    same_hessian = mode == "hat" or (loss.constant_curvature and objective.quadratic_penalty)
    if same_hessian:
        # every leave-out Hessian is the full one minus a rank-one term
        theta = fitted.theta_hat
        c = loss.curvature(dataset.X, dataset.y, theta)
        T = (A * c[:, None]).T @ A + objective.penalty_hessian(theta)[np.ix_(free, free)]
        try:
            B = cho_solve(cho_factor(T), A.T)
        except LinAlgError:
            raise EstimatorUndefinedError("full", "full-data Hessian is not positive definite") from None
        denom = 1.0 - c * np.einsum("ij,ji->i", A, B)
        bad = ~(denom > 1e-12)
        if bad.any():
            raise EstimatorUndefinedError(int(np.flatnonzero(bad)[0]))
        return (B * (slopes / denom)).T

    # curvature of sample j evaluated at point i
    E = points[:, free] @ A.T
    C = loss._d2(E, dataset.y[None, :])
    np.fill_diagonal(C, 0.0)
    T = np.einsum("ij,jk,jl->ikl", C, A, A)
    if objective.quadratic_penalty:
        T += objective.penalty_hessian(fitted.theta_hat)[np.ix_(free, free)]
    else:
        for i in range(n):
            T[i] += objective.penalty_hessian(points[i])[np.ix_(free, free)]
    U, bad = _solve_stack(T, slopes[:, None] * A)
    if bad.any():
        raise EstimatorUndefinedError(int(np.flatnonzero(bad)[0]))
    return U


def approximate_gradient(
    dataset: Dataset,
    fitted: FittedModel,
    objective: RegularizedObjective,
    mode: str = "tilde",
    points=None,
    pool=None,
    l1_signs=None,
) -> GradientResult:
    """Per-sample approximate gradients and their mean over ``pool`` (default: all samples).

    ``points`` overrides the evaluation points; passing the exact
    leave-one-out solutions yields the exact CV gradient.  l1 columns use
    the sign pattern of ``l1_signs`` (default theta_hat): the approximation
    holds the active set and its signs fixed, so its derivative does too.
    """
    if mode not in GRADIENT_MODES:
        raise ValueError(f"mode must be one of {GRADIENT_MODES}")
    thetas, bad, _ = loo_steps(dataset, fitted, objective)
    if bad.any():
        raise EstimatorUndefinedError(int(np.flatnonzero(bad)[0]))
    acv = rowwise_loss(objective, dataset, thetas)
    if points is None:
        points = thetas if mode == "tilde" else np.tile(fitted.theta_hat, (dataset.n, 1))
    points = np.asarray(points, dtype=float)
    free = free_coordinates(fitted)
    if l1_signs is None:
        l1_signs = fitted.theta_hat
    U = _loo_directions(dataset, fitted, objective, points, free, mode)
    J = objective.penalty_jacobian(points, l1_at=l1_signs)[:, free, :]
    G = -np.einsum("nkm,nk->nm", J, U)
    idx = np.arange(dataset.n) if pool is None else np.asarray(pool, dtype=int)
    return GradientResult(G[idx].mean(axis=0), G, points, acv)


def exact_cv_gradient(dataset: Dataset, objective: RegularizedObjective, config: SolverConfig | None = None, fitted=None, loo=None) -> np.ndarray:
    """Gradient of the exact mean CV loss, using exact leave-one-out refits."""
    from .solver import loocv_exact

    config = config or SolverConfig()
    fitted = fitted or fit(dataset, objective, config)
    loo = loo or loocv_exact(dataset, objective, config, fitted=fitted)
    return approximate_gradient(dataset, fitted, objective, "tilde", points=loo.thetas, l1_signs=loo.thetas).mean


# ---------------------------------------------------------------------------
# Descent loops
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TuneConfig:
    step_rule: str = "backtracking"
    step_size: float = 1.0
    max_iterations: int = 100
    lower_bound: float = 0.0
    gradient_tolerance: float = 0.0
    growth: float = 2.0
    shrink: float = 0.5
    armijo: float = 1e-4
    max_backtracks: int = 40
    refit_every: int | None = None
    seed: int = 0
    gradient_mode: str = "tilde"
    sample_pool: tuple[int, ...] | None = None
    warm_start: bool = True
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.step_rule not in STEP_RULES:
            raise ValueError(f"step_rule must be one of {STEP_RULES}")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if not np.isfinite(self.lower_bound):
            raise ValueError("lower_bound must be finite")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")
        if self.gradient_mode not in GRADIENT_MODES:
            raise ValueError(f"gradient_mode must be one of {GRADIENT_MODES}")


@dataclass(frozen=True)
class TraceRecord:
    t: int
    lambdas: np.ndarray
    acv_mean: float
    gradient_norm: float
    refit_iterations: int
    wall_time: float


@dataclass
class TuneTrace:
    records: list[TraceRecord] = field(default_factory=list)
    aborted: bool = False
    error: str | None = None

    def append(self, record: TraceRecord):
        if self.records and record.t <= self.records[-1].t:
            raise ValueError("trace iterations must increase")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    @property
    def acv(self) -> np.ndarray:
        return np.array([r.acv_mean for r in self.records])

    @property
    def lambdas(self) -> np.ndarray:
        return np.vstack([r.lambdas for r in self.records])

    def to_csv(self, groups: dict | None = None) -> str:
        """Plot-ready CSV: one row per record, with lambda means per named group
        (or every lambda component when no groups are given)."""
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        M = self.records[0].lambdas.shape[0] if self.records else 0
        cols = list(groups) if groups else [f"lambda_{m}" for m in range(M)]
        w.writerow(["iteration", "acv_mean", "gradient_norm", "refit_iterations", "wall_time"] + cols)
        for r in self.records:
            if groups:
                vals = [float(np.mean(r.lambdas[np.asarray(ix, dtype=int)])) for ix in groups.values()]
            else:
                vals = [float(v) for v in r.lambdas]
            w.writerow([r.t, repr(float(r.acv_mean)), repr(float(r.gradient_norm)), r.refit_iterations, f"{r.wall_time:.6f}"] + [repr(v) for v in vals])
        return out.getvalue()


class TuningError(RuntimeError):
    """A refit or gradient evaluation failed; carries the partial trace."""

    def __init__(self, message, trace: TuneTrace, lambdas):
        super().__init__(message)
        self.trace = trace
        self.lambdas = lambdas


@dataclass
class _State:
    lambdas: np.ndarray
    objective: RegularizedObjective
    fitted: FittedModel
    grad: GradientResult
    acv_mean: float


def _evaluate(dataset, objective, lambdas, config: TuneConfig, warm=None) -> _State:
    obj = objective.with_lambdas(lambdas)
    fitted = fit(dataset, obj, config.solver, warm_start=warm if config.warm_start else None)
    grad = approximate_gradient(dataset, fitted, obj, config.gradient_mode, pool=config.sample_pool)
    pool = slice(None) if config.sample_pool is None else np.asarray(config.sample_pool, dtype=int)
    return _State(obj.lambdas, obj, fitted, grad, float(np.mean(grad.acv[pool])))


def _project(lam, bound):
    return np.maximum(lam, bound)


def _start(objective, lambda0, config):
    lam = as_lambdas(lambda0 if lambda0 is not None else objective.lambdas, objective.M)
    if np.any(lam < config.lower_bound):
        raise ValueError("initial lambda lies below the lower bound")
    return np.array(lam)


def tune_batch(dataset: Dataset, objective: RegularizedObjective, lambda0=None, config: TuneConfig | None = None):
    """Projected descent on the mean approximate CV loss using the averaged approximate gradient.

    Returns ``(lambdas, trace)``.  The trace holds the evaluation at
    ``lambda0`` followed by one record per accepted update, so a run of T
    updates has T + 1 records.  With the backtracking rule a step is
    accepted only if it passes an Armijo test on the mean approximate CV
    loss; the trial step grows after each success.
    """
    config = config or TuneConfig()
    lam = _start(objective, lambda0, config)
    trace = TuneTrace()
    clock = time.perf_counter()

    def record(t, s):
        trace.append(TraceRecord(t, s.lambdas.copy(), s.acv_mean, float(np.max(np.abs(s.grad.mean))), s.fitted.iterations, time.perf_counter() - clock))

    try:
        state = _evaluate(dataset, objective, lam, config)
    except (ConvergenceError, EstimatorUndefinedError) as err:
        trace.aborted, trace.error = True, str(err)
        raise TuningError(f"initial evaluation failed: {err}", trace, lam) from err
    record(0, state)
    alpha = config.step_size
    for t in range(config.max_iterations):
        g = state.grad.mean
        if np.max(np.abs(g)) <= config.gradient_tolerance:
            break
        try:
            if config.step_rule == "backtracking":
                new = None
                trial = alpha
                for _ in range(config.max_backtracks):
                    cand = _project(state.lambdas - trial * g, config.lower_bound)
                    if np.array_equal(cand, state.lambdas):
                        break
                    s = _evaluate(dataset, objective, cand, config, state.fitted.theta_hat)
                    if s.acv_mean <= state.acv_mean + config.armijo * float(g @ (cand - state.lambdas)):
                        new = s
                        alpha = trial * config.growth
                        break
                    trial *= config.shrink
                if new is None:
                    log.info("no acceptable step at iteration %d; stopping", t)
                    break
            else:
                step = config.step_size if config.step_rule == "fixed" else config.step_size / np.sqrt(1.0 + t)
                cand = _project(state.lambdas - step * g, config.lower_bound)
                if np.array_equal(cand, state.lambdas):
                    break
                new = _evaluate(dataset, objective, cand, config, state.fitted.theta_hat)
        except (ConvergenceError, EstimatorUndefinedError) as err:
            trace.aborted, trace.error = True, str(err)
            raise TuningError(f"iteration {t + 1} failed: {err}", trace, state.lambdas) from err
        state = new
        record(t + 1, state)
    return state.lambdas.copy(), trace


def tune_stochastic(dataset: Dataset, objective: RegularizedObjective, lambda0=None, config: TuneConfig | None = None):
    """Stochastic descent: one randomly drawn per-sample gradient per step.

    Step sizes follow ``step_size / sqrt(1 + t)`` (or stay fixed with
    ``step_rule="fixed"``).  theta_hat is refit, warm-started, every
    ``refit_every`` steps (default max(1, n // 10)); between refits the
    per-sample gradient uses the last fit with the current lambda.  The
    trace gets a record at the start, after every refit and at the end.
    """
    config = config or TuneConfig(step_rule="decay")
    lam = _start(objective, lambda0, config)
    pool = np.arange(dataset.n) if config.sample_pool is None else np.asarray(config.sample_pool, dtype=int)
    every = config.refit_every or max(1, dataset.n // 10)
    rng = make_rng(config.seed)
    trace = TuneTrace()
    clock = time.perf_counter()

    def record(t, s):
        trace.append(TraceRecord(t, s.lambdas.copy(), s.acv_mean, float(np.max(np.abs(s.grad.mean))), s.fitted.iterations, time.perf_counter() - clock))

    try:
        state = _evaluate(dataset, objective, lam, config)
    except (ConvergenceError, EstimatorUndefinedError) as err:
        trace.aborted, trace.error = True, str(err)
        raise TuningError(f"initial evaluation failed: {err}", trace, lam) from err
    record(0, state)
    fitted = state.fitted
    for t in range(config.max_iterations):
        i = int(pool[int(rng.random() * pool.size)])
        obj_t = objective.with_lambdas(lam)
        try:
            point = fitted.theta_hat if config.gradient_mode == "hat" else aloocv_parameter(dataset, fitted, obj_t, i)
            g = per_sample_gradient(dataset, fitted, obj_t, i, point, config.gradient_mode)
        except EstimatorUndefinedError as err:
            trace.aborted, trace.error = True, str(err)
            raise TuningError(f"step {t + 1} failed: {err}", trace, lam) from err
        step = config.step_size if config.step_rule == "fixed" else config.step_size / np.sqrt(1.0 + t)
        lam = _project(lam - step * g, config.lower_bound)
        if (t + 1) % every == 0 or t + 1 == config.max_iterations:
            try:
                state = _evaluate(dataset, objective, lam, config, fitted.theta_hat)
            except (ConvergenceError, EstimatorUndefinedError) as err:
                trace.aborted, trace.error = True, str(err)
                raise TuningError(f"refit after step {t + 1} failed: {err}", trace, lam) from err
            fitted = state.fitted
            record(t + 1, state)
    return np.array(lam), trace
