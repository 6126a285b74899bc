"""Independent reference computations.

Nothing here calls the package's solvers or estimators: closed-form normal
equations, naive row deletion, coordinate descent, scipy's general-purpose
minimiser and central finite differences.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize


def central_gradient(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def central_jacobian(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def ridge_solution(X, y, penalty_diag):
    """argmin 1/2 ||y - X theta||^2 + 1/2 sum_j d_j theta_j^2."""
    return np.linalg.solve(X.T @ X + np.diag(penalty_diag), X.T @ y)


def ridge_loo_naive(X, y, penalty_diag):
    """Delete each row in turn and re-solve the normal equations."""
    n = X.shape[0]
    thetas = np.zeros((n, X.shape[1]))
    for i in range(n):
        keep = np.arange(n) != i
        thetas[i] = ridge_solution(X[keep], y[keep], penalty_diag)
    losses = 0.5 * (y - np.einsum("ij,ij->i", X, thetas)) ** 2
    return thetas, losses


def ridge_cv_mean(X, y, penalty_diag):
    return float(np.mean(ridge_loo_naive(X, y, penalty_diag)[1]))


def ridge_lambda_gradient_fd(X, y, penalty_diag, h=1e-6):
    """d theta_hat / d lambda for diagonal ridge by central differences of the closed form."""
    return central_jacobian(lambda d: ridge_solution(X, y, d), penalty_diag, h)


def ridge_cv_gradient_fd(X, y, penalty_diag, rel=1e-5):
    d = np.asarray(penalty_diag, dtype=float)
    g = np.zeros_like(d)
    for m in range(d.size):
        h = rel * max(d[m], 1.0)
        e = np.zeros_like(d)
        e[m] = h
        g[m] = (ridge_cv_mean(X, y, d + e) - ridge_cv_mean(X, y, d - e)) / (2 * h)
    return g


def elastic_net_cd(X, y, l1, l2, tol=1e-14, max_sweeps=200000):
    """Cyclic coordinate descent for 1/2||y - X theta||^2 + l1 ||theta||_1 + l2/2 ||theta||^2."""
    n, p = X.shape
    theta = np.zeros(p)
    r = y.copy()
    sq = np.einsum("ij,ij->j", X, X)
    for _ in range(max_sweeps):
        delta = 0.0
        for j in range(p):
            rho = X[:, j] @ r + sq[j] * theta[j]
            new = np.sign(rho) * max(abs(rho) - l1, 0.0) / (sq[j] + l2)
            if new != theta[j]:
                r -= X[:, j] * (new - theta[j])
                delta = max(delta, abs(new - theta[j]))
                theta[j] = new
        if delta < tol:
            break
    return theta


def logistic_fit_scipy(X, y, lam, intercept=True):
    """Penalised logistic regression via scipy's trust-region Newton-CG, intercept unpenalised."""
    A = np.hstack([np.ones((X.shape[0], 1)), X]) if intercept else X
    mask = np.ones(A.shape[1])
    if intercept:
        mask[0] = 0.0

    def f(t):
        eta = A @ t
        return np.sum(np.logaddexp(0, eta) - y * eta) + 0.5 * lam * np.sum(mask * t * t)

    def g(t):
        s = 1 / (1 + np.exp(-(A @ t)))
        return A.T @ (s - y) + lam * mask * t

    def H(t):
        s = 1 / (1 + np.exp(-(A @ t)))
        return (A * (s * (1 - s))[:, None]).T @ A + lam * np.diag(mask)

    res = minimize(f, np.zeros(A.shape[1]), jac=g, hess=H, method="trust-exact", options={"gtol": 1e-11, "maxiter": 500})
    return res.x
