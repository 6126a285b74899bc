"""Datasets, losses, regularizers and the regularized objective.

Everything downstream works with the *total* objective

    F(theta) = sum_j loss(z_j; theta) + lambda^T r(theta)

and with the empirical Hessian, which is the total Hessian of the smooth
part divided by the number of retained samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class DimensionError(ValueError):
    pass


class NonFiniteError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Data containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    response: float

    def __post_init__(self):
        x = np.array(self.features, dtype=float).reshape(-1)
        if not np.all(np.isfinite(x)) or not np.isfinite(self.response):
            raise NonFiniteError("sample has non-finite entries")
        x.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "response", float(self.response))


class Dataset:
    """Immutable n x p feature matrix with a response vector.

    Leave-out views are never materialised as new datasets; functions that
    need them take an ``exclude`` argument and mask rows internally.
    """

    __slots__ = ("_X", "_y")

    def __init__(self, X, y):
        X = np.array(X, dtype=float)
        y = np.array(y, dtype=float).reshape(-1)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DimensionError(f"X has shape {X.shape} but y has {y.shape[0]} rows")
        if X.shape[0] < 2:
            raise ValueError("a dataset needs at least two samples")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise NonFiniteError("dataset contains non-finite entries")
        X.setflags(write=False)
        y.setflags(write=False)
        self._X = X
        self._y = y

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "Dataset":
        dims = {s.features.shape[0] for s in samples}
        if len(dims) > 1:
            raise DimensionError(f"samples have mixed dimensions {sorted(dims)}")
        return cls(np.vstack([s.features for s in samples]), [s.response for s in samples])

    @property
    def X(self) -> np.ndarray:
        return self._X

    @property
    def y(self) -> np.ndarray:
        return self._y

    @property
    def n(self) -> int:
        return self._X.shape[0]

    @property
    def p(self) -> int:
        return self._X.shape[1]

    def __len__(self):
        return self.n

    def __getitem__(self, i) -> Sample:
        return Sample(self._X[i], self._y[i])

    @property
    def samples(self) -> list[Sample]:
        return [self[i] for i in range(self.n)]

    def rows(self, exclude=None) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(X, y)`` with the rows in ``exclude`` removed."""
        if exclude is None:
            return self._X, self._y
        mask = np.ones(self.n, dtype=bool)
        mask[_as_index_array(exclude, self.n)] = False
        return self._X[mask], self._y[mask]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(self._X[idx], self._y[idx])

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return np.array_equal(self._X, other._X) and np.array_equal(self._y, other._y)

    def __repr__(self):
        return f"Dataset(n={self.n}, p={self.p})"


def _as_index_array(exclude, n: int) -> np.ndarray:
    if isinstance(exclude, (int, np.integer)):
        if not 0 <= exclude < n:
            raise IndexError(f"leave-out index out of range for n={n}: [{int(exclude)}]")
        return np.array([int(exclude)])
    idx = np.atleast_1d(np.asarray(exclude, dtype=int))
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"leave-out index out of range for n={n}: {idx.tolist()}")
    if idx.size > 1 and np.unique(idx).size != idx.size:
        raise ValueError("leave-out indices must be distinct")
    return idx


def as_lambdas(lambdas, M: int | None = None) -> np.ndarray:
    """Validate a regularization vector: finite, nonnegative, length M."""
    lam = np.array(lambdas, dtype=float).reshape(-1)
    if M is not None and lam.shape[0] != M:
        raise DimensionError(f"expected {M} regularization weights, got {lam.shape[0]}")
    if not np.all(np.isfinite(lam)):
        raise NonFiniteError("regularization weights must be finite")
    if np.any(lam < 0):
        raise ValueError(f"regularization weights must be nonnegative, got {lam.tolist()}")
    lam.setflags(write=False)
    return lam


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


class Loss:
    """Per-sample loss with analytic derivatives.

    Subclasses implement the batched methods ``value``, ``gradient`` and
    ``hessian``; these take a feature matrix ``X`` (m x p), responses ``y``
    and a parameter vector and return one entry per row.  The single-sample
    methods ``loss``/``grad``/``hess`` wrap them.
    """

    #: True when the loss Hessian does not depend on theta (quadratic loss).
    constant_curvature = False

    def n_params(self, p: int) -> int:
        return p

    def value(self, X, y, theta) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, X, y, theta) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, X, y, theta) -> np.ndarray:
        raise NotImplementedError

    def gradient_sum(self, X, y, theta) -> np.ndarray:
        return self.gradient(X, y, theta).sum(axis=0)

    def hessian_sum(self, X, y, theta) -> np.ndarray:
        return self.hessian(X, y, theta).sum(axis=0)

    def loss(self, sample: Sample, theta) -> float:
        return float(self.value(sample.features[None, :], np.array([sample.response]), theta)[0])

    def grad(self, sample: Sample, theta) -> np.ndarray:
        return self.gradient(sample.features[None, :], np.array([sample.response]), theta)[0]

    def hess(self, sample: Sample, theta) -> np.ndarray:
        return self.hessian(sample.features[None, :], np.array([sample.response]), theta)[0]


class GLMLoss(Loss):
    """Loss depending on theta only through a linear score ``eta = a^T theta``.

    ``a`` is the feature vector, with a leading 1 when an intercept is
    fitted.  Per-sample Hessians are rank one, ``curvature * a a^T``, which
    is what makes Sherman-Morrison leave-one-out solves possible.
    """

    def __init__(self, intercept: bool = False):
        self.intercept = bool(intercept)

    def n_params(self, p: int) -> int:
        return p + int(self.intercept)

    def design(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.intercept:
            return np.hstack([np.ones((X.shape[0], 1)), X])
        return X

    def score(self, X, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        A = self.design(X)
        if A.shape[1] != theta.shape[-1]:
            raise DimensionError(f"theta has length {theta.shape[-1]}, expected {A.shape[1]}")
        return A @ theta

    # scalar link functions of (eta, y)
    def _value(self, eta, y):
        raise NotImplementedError

    def _d1(self, eta, y):
        raise NotImplementedError

    def _d2(self, eta, y):
        raise NotImplementedError

    def value(self, X, y, theta):
        return self._value(self.score(X, theta), np.asarray(y, dtype=float))

    def slope(self, X, y, theta):
        return self._d1(self.score(X, theta), np.asarray(y, dtype=float))

    def curvature(self, X, y, theta):
        return self._d2(self.score(X, theta), np.asarray(y, dtype=float))

    def gradient(self, X, y, theta):
        return self.slope(X, y, theta)[:, None] * self.design(X)

    def gradient_sum(self, X, y, theta):
        # A^T d1 avoids the m x k intermediate of gradient().sum()
        return self.design(X).T @ self.slope(X, y, theta)

    def hessian(self, X, y, theta):
        A = self.design(X)
        c = self.curvature(X, y, theta)
        # outer product first: a_j * a_k is symmetric bit for bit
        H = c[:, None, None] * (A[:, :, None] * A[:, None, :])
        if not np.all(np.isfinite(H)):
            raise NonFiniteError("non-finite per-sample Hessian")
        return H

    def hessian_sum(self, X, y, theta):
        A = self.design(X)
        c = self.curvature(X, y, theta)
        H = (A * c[:, None]).T @ A
        if not np.all(np.isfinite(H)):
            raise NonFiniteError("non-finite per-sample Hessian")
        return 0.5 * (H + H.T)


# ---------------------------------------------------------------------------
# Regularizers
# ---------------------------------------------------------------------------


class Regularizer:
    """One penalty r_m(theta).

    ``gradient`` accepts a single vector or a stack of vectors (..., k).
    ``kind`` is ``"smooth"`` or ``"l1"``; l1 penalties never contribute to
    Hessians.  ``quadratic`` marks penalties with a constant Hessian.
    """

    kind = "smooth"
    quadratic = False

    def value(self, theta) -> float:
        raise NotImplementedError

    def gradient(self, theta) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, theta) -> np.ndarray:
        raise NotImplementedError


def _mask(k: int, coords) -> np.ndarray:
    m = np.zeros(k, dtype=bool)
    m[np.asarray(coords, dtype=int)] = True
    return m


class SquaredNorm(Regularizer):
    """Half the squared Euclidean norm over a subset of coordinates."""

    quadratic = True

    def __init__(self, k: int, coords=None):
        self.k = k
        self.mask = np.ones(k, dtype=bool) if coords is None else _mask(k, coords)
        self._full = bool(self.mask.all())
        self._hessian = np.diag(self.mask.astype(float))
        self._hessian.setflags(write=False)

    def value(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self._full:
            return 0.5 * float(theta @ theta)
        return 0.5 * float(np.sum(theta[self.mask] ** 2))

    def gradient(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self._full:
            return theta.copy()
        return np.where(self.mask, theta, 0.0)

    def hessian(self, theta=None):
        return self._hessian

    def __repr__(self):
        return f"SquaredNorm(k={self.k}, n_coords={int(self.mask.sum())})"


class SquaredCoordinate(SquaredNorm):
    """Half the square of a single coordinate, for per-coordinate ridge."""

    def __init__(self, k: int, index: int):
        super().__init__(k, [index])
        self.index = index

    def __repr__(self):
        return f"SquaredCoordinate(k={self.k}, index={self.index})"


class L1Norm(Regularizer):
    """l1 norm over a subset of coordinates; gradient is sign(theta)."""

    kind = "l1"
    quadratic = True

    def __init__(self, k: int, coords=None):
        self.k = k
        self.mask = np.ones(k, dtype=bool) if coords is None else _mask(k, coords)

    def value(self, theta):
        theta = np.asarray(theta, dtype=float)
        return float(np.sum(np.abs(theta[self.mask])))

    def gradient(self, theta):
        theta = np.asarray(theta, dtype=float)
        return np.where(self.mask, np.sign(theta), 0.0)

    def hessian(self, theta=None):
        return np.zeros((self.k, self.k))

    def __repr__(self):
        return f"L1Norm(k={self.k}, n_coords={int(self.mask.sum())})"


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegularizedObjective:
    loss: Loss
    regularizers: tuple[Regularizer, ...]
    lambdas: np.ndarray = field(default=None)

    def __post_init__(self):
        regs = tuple(self.regularizers)
        object.__setattr__(self, "regularizers", regs)
        lam = np.zeros(len(regs)) if self.lambdas is None else self.lambdas
        object.__setattr__(self, "lambdas", as_lambdas(lam, len(regs)))

    @property
    def M(self) -> int:
        return len(self.regularizers)

    def with_lambdas(self, lambdas) -> "RegularizedObjective":
        return RegularizedObjective(self.loss, self.regularizers, lambdas)

    def n_params(self, p: int) -> int:
        return self.loss.n_params(p)

    @property
    def l1_mask(self) -> np.ndarray | None:
        """Coordinates penalised by an l1 term with positive weight."""
        out = None
        for lam, reg in zip(self.lambdas, self.regularizers):
            if reg.kind == "l1" and lam > 0:
                out = reg.mask.copy() if out is None else out | reg.mask
        return out

    @property
    def has_l1(self) -> bool:
        return any(reg.kind == "l1" for reg in self.regularizers)

    @property
    def quadratic_penalty(self) -> bool:
        return all(reg.quadratic for reg in self.regularizers)

    def l1_weights(self, k: int) -> np.ndarray:
        """Per-coordinate l1 weight vector (zero where no l1 term applies)."""
        w = np.zeros(k)
        for lam, reg in zip(self.lambdas, self.regularizers):
            if reg.kind == "l1":
                w = w + lam * reg.mask
        return w

    # penalty pieces -------------------------------------------------------

    def penalty(self, theta, smooth_only: bool = False) -> float:
        total = 0.0
        for lam, reg in zip(self.lambdas, self.regularizers):
            if smooth_only and reg.kind == "l1":
                continue
            total += lam * reg.value(theta)
        return total

    def penalty_gradient(self, theta, smooth_only: bool = False) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        g = np.zeros_like(theta)
        for lam, reg in zip(self.lambdas, self.regularizers):
            if smooth_only and reg.kind == "l1":
                continue
            if lam != 0:
                g = g + lam * reg.gradient(theta)
        return g

    def penalty_hessian(self, theta) -> np.ndarray:
        k = np.asarray(theta).shape[-1]
        H = np.zeros((k, k))
        for lam, reg in zip(self.lambdas, self.regularizers):
            if reg.kind == "l1" or lam == 0:
                continue
            H = H + lam * reg.hessian(theta)
        return H

    def penalty_jacobian(self, theta, l1_at=None) -> np.ndarray:
        """Regularizer gradients stacked as columns: shape (..., k, M).

        ``l1_at`` evaluates the l1 columns at another point (their sign
        pattern), broadcast against ``theta``.
        """
        theta = np.asarray(theta, dtype=float)
        cols = []
        for reg in self.regularizers:
            if reg.kind == "l1" and l1_at is not None:
                cols.append(np.broadcast_to(reg.gradient(l1_at), theta.shape))
            else:
                cols.append(reg.gradient(theta))
        return np.stack(cols, axis=-1)

    # totals over a dataset ------------------------------------------------

    def total(self, dataset: Dataset, theta, exclude=None) -> float:
        X, y = dataset.rows(exclude)
        return float(np.sum(self.loss.value(X, y, theta))) + self.penalty(theta)

    def smooth_total(self, X, y, theta) -> float:
        return float(np.sum(self.loss.value(X, y, theta))) + self.penalty(theta, smooth_only=True)

    def smooth_gradient(self, X, y, theta) -> np.ndarray:
        return self.loss.gradient_sum(X, y, theta) + self.penalty_gradient(theta, smooth_only=True)

    def total_gradient(self, dataset: Dataset, theta, exclude=None) -> np.ndarray:
        X, y = dataset.rows(exclude)
        return self.loss.gradient_sum(X, y, theta) + self.penalty_gradient(theta)

    def total_hessian(self, dataset: Dataset, theta, exclude=None) -> np.ndarray:
        """Sum of loss Hessians over retained rows plus lambda-weighted penalty Hessians."""
        X, y = dataset.rows(exclude)
        return self.loss.hessian_sum(X, y, theta) + self.penalty_hessian(theta)


def empirical_hessian(dataset: Dataset, theta, objective: RegularizedObjective, exclude=None) -> np.ndarray:
    """Empirical Hessian of the regularized loss.

    With ``exclude`` given (an index or a set of indices) the loss Hessians
    of those rows are dropped and the result is divided by the number of
    retained rows; the penalty Hessian keeps its full weight either way.
    l1 penalties contribute nothing.
    """
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise NonFiniteError("theta has non-finite entries")
    k = objective.n_params(dataset.p)
    if theta.shape != (k,):
        raise DimensionError(f"theta has shape {theta.shape}, expected ({k},)")
    m = dataset.n
    if exclude is not None:
        m -= _as_index_array(exclude, dataset.n).size
        if m < 1:
            raise ValueError("leave-out Hessian needs at least one retained sample")
    H = objective.total_hessian(dataset, theta, exclude) / m
    return 0.5 * (H + H.T)


def in_sample_loss(dataset: Dataset, objective: RegularizedObjective, theta) -> float:
    """Average training loss (no penalty)."""
    return float(np.mean(objective.loss.value(dataset.X, dataset.y, theta)))

