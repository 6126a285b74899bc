"""Synthetic datasets and CSV ingestion.

Random numbers come from numpy's PCG64 bit generator seeded explicitly.
Only its uniform doubles are consumed; normal variates are produced from
them with the Box-Muller transform, so the streams do not depend on
numpy's choice of normal sampler.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .core import Dataset

RNG_NAME = "PCG64/box-muller/v1"


class CSVFormatError(ValueError):
    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def normal(rng: np.random.Generator, size) -> np.ndarray:
    shape = (size,) if np.isscalar(size) else tuple(size)
    count = int(np.prod(shape))
    half = (count + 1) // 2
    u1 = 1.0 - rng.random(half)  # (0, 1]
    u2 = rng.random(half)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
    return z[:count].reshape(shape)


def synth_ridge(n: int, p: int = 50, n_relevant: int = 10, noise_var: float = 0.1, seed: int = 0):
    """Linear model with the first ``p - n_relevant`` true coefficients at zero.

    Features are i.i.d. standard normal, the relevant coefficients standard
    normal, and the noise normal with variance ``noise_var``.

    Returns
    -------
    (Dataset, theta_star)
    """
    if not 0 <= n_relevant <= p:
        raise ValueError("need 0 <= n_relevant <= p")
    if noise_var < 0:
        raise ValueError("noise_var must be nonnegative")
    rng = make_rng(seed)
    theta = np.zeros(p)
    theta[p - n_relevant:] = normal(rng, n_relevant)
    X = normal(rng, (n, p))
    eps = math.sqrt(noise_var) * normal(rng, n)
    return Dataset(X, X @ theta + eps), theta


def synth_elastic(n: int, p: int, seed: int = 0, noise_var: float = 1.0):
    """Sparse linear model with coefficient kappa * Bernoulli(1/2) * N(0, 1) at index kappa = 1..p."""
    if n < 1 or p < 1:
        raise ValueError("n and p must be positive")
    rng = make_rng(seed)
    keep = rng.random(p) < 0.5
    psi = normal(rng, p)
    theta = np.arange(1, p + 1) * keep * psi
    X = normal(rng, (n, p))
    eps = math.sqrt(noise_var) * normal(rng, n)
    return Dataset(X, X @ theta + eps), theta


def synth_logistic(n: int, p: int, seed: int = 0, signal: float = 1.0, intercept: float = 0.0):
    """Binary labels drawn from a logistic model with standard normal features.

    Coefficients are N(0, signal^2 / p) so the true score has standard
    deviation close to ``signal``.  Returns ``(Dataset, theta_star)`` where
    ``theta_star[0]`` is the intercept.
    """
    rng = make_rng(seed)
    theta = signal / math.sqrt(p) * normal(rng, p)
    X = normal(rng, (n, p))
    prob = 1.0 / (1.0 + np.exp(-(intercept + X @ theta)))
    y = (rng.random(n) < prob).astype(float)
    return Dataset(X, y), np.concatenate([[intercept], theta])


def train_test_split(dataset: Dataset, test_fraction: float, seed: int = 0):
    """Random split into training and held-out datasets."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    order = np.argsort(make_rng(seed).random(dataset.n), kind="stable")
    n_test = max(2, int(round(test_fraction * dataset.n)))
    return dataset.subset(np.sort(order[n_test:])), dataset.subset(np.sort(order[:n_test]))


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def save_csv(dataset: Dataset, path, label_column: str = "y", feature_names=None) -> None:
    """Write features and response with a header; floats are written with repr() so they round-trip."""
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(dataset.p)]
    if len(names) != dataset.p:
        raise ValueError("feature_names must have one entry per feature")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names + [label_column])
        for x, y in zip(dataset.X, dataset.y):
            w.writerow([repr(float(v)) for v in x] + [repr(float(y))])


def _parse(cell: str, row: int, col: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise CSVFormatError(f"non-numeric value {cell!r} in column {col!r}", row) from None
    if not math.isfinite(value):
        raise CSVFormatError(f"non-finite value {cell!r} in column {col!r}", row)
    return value


def load_csv(path, label_column: str, binarize=None) -> Dataset:
    """Read a numeric CSV with a header row.

    Parameters
    ----------
    path : str or Path
    label_column : str
        Name of the response column; every other column is a feature.
    binarize : pair of labels, optional
        Keep only rows whose label equals one of the pair (compared
        numerically) and map them to 0 and 1 respectively.

    Raises
    ------
    CSVFormatError
        Missing label column, ragged or non-numeric rows.  Row numbers are
        1-based data rows (the header is row 0).
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CSVFormatError("empty file") from None
        if label_column not in header:
            raise CSVFormatError(f"missing label column {label_column!r}")
        li = header.index(label_column)
        feature_cols = [j for j in range(len(header)) if j != li]
        pair = None
        if binarize is not None:
            if len(binarize) != 2:
                raise ValueError("binarize takes exactly two labels")
            pair = (float(binarize[0]), float(binarize[1]))
        X, y = [], []
        for r, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise CSVFormatError(f"expected {len(header)} fields, found {len(row)}", r)
            label = _parse(row[li], r, label_column)
            if pair is not None:
                if label == pair[0]:
                    label = 0.0
                elif label == pair[1]:
                    label = 1.0
                else:
                    continue
            X.append([_parse(row[j], r, header[j]) for j in feature_cols])
            y.append(label)
    if len(y) < 2:
        raise CSVFormatError(f"only {len(y)} usable rows; need at least two")
    return Dataset(np.array(X, dtype=float).reshape(len(y), len(feature_cols)), y)
