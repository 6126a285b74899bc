"""Wall-clock comparison of exact leave-one-out refits against the one-step approximation."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass

import numpy as np

from .approx import _probe_problem, acv_vector, loglog_slope
from .solver import SolverConfig, fit, loocv_exact


@dataclass(frozen=True)
class BenchTable:
    n: np.ndarray
    cv_seconds: np.ndarray
    acv_seconds: np.ndarray

    @property
    def ratio(self) -> np.ndarray:
        return self.cv_seconds / self.acv_seconds

    def slopes(self) -> tuple[float, float]:
        """Log-log slopes of the exact and approximate timings against n."""
        return loglog_slope(self.n, self.cv_seconds), loglog_slope(self.n, self.acv_seconds)

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["n", "cv_seconds", "acv_seconds", "ratio"])
        for n, a, b, r in zip(self.n, self.cv_seconds, self.acv_seconds, self.ratio):
            w.writerow([int(n), f"{a:.6e}", f"{b:.6e}", f"{r:.6e}"])
        return out.getvalue()


def _best_of(repeats, func, min_total=0.25):
    # millisecond timings need many repeats before the minimum is stable
    best, total, count = np.inf, 0.0, 0
    while count < repeats or total < min_total:
        t0 = time.perf_counter()
        func()
        dt = time.perf_counter() - t0
        best, total, count = min(best, dt), total + dt, count + 1
    return best


def runtime_scaling(
    family: str = "ridge",
    n_grid=(200, 400, 800, 1600),
    p: int = 20,
    lam: float = 1.0,
    seed: int = 0,
    repeats: int = 3,
    config: SolverConfig | None = None,
    threads: int = 1,
) -> BenchTable:
    """Time fit + exact LOOCV and fit + ACV at each sample size.

    The grid is timed ``repeats`` times round-robin and each entry keeps its
    fastest run.
    """
    config = config or SolverConfig()
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    problems = [_probe_problem(family, int(n), p, lam, seed) for n in n_grid]

    def runner(dataset, objective, exact):
        def run():
            fitted = fit(dataset, objective, config)
            if exact:
                loocv_exact(dataset, objective, config, fitted=fitted, threads=threads)
            else:
                acv_vector(dataset, fitted, objective)

        return run

    # machine speed drifts on shared hosts; visiting the grid round-robin
    # exposes every n to the same drift, and the minimum over rounds is kept
    cv_t = np.full(len(problems), np.inf)
    acv_t = np.full(len(problems), np.inf)
    for _ in range(repeats):
        for j, (dataset, objective) in enumerate(problems):
            cv_t[j] = min(cv_t[j], _best_of(1, runner(dataset, objective, True), min_total=0.0))
            acv_t[j] = min(acv_t[j], _best_of(1, runner(dataset, objective, False), min_total=0.05))
    return BenchTable(np.asarray(n_grid, dtype=int), cv_t, acv_t)
