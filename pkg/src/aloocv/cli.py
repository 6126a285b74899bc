"""Command-line front end.

    aloocv synth    emit a synthetic dataset as CSV
    aloocv fit      fit one model and report theta_hat and diagnostics
    aloocv compare  training loss, exact CV, ACV and IF over a lambda grid
    aloocv tune     descend the approximate CV loss in lambda
    aloocv bench    time exact LOOCV against ACV over a grid of n

Settings come from defaults, then an optional JSON file (``--config``),
then ``--set section.key=value`` and the shortcut flags.  Exit codes: 0 on
success, 1 for invalid input, 2 for numerical failures.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError

from . import __version__
from .approx import METHODS, EstimatorUndefinedError, acv_vector, mean_and_stderr
from .baselines import EstimatorComparison
from .benchmark import runtime_scaling
from .core import as_lambdas, in_sample_loss
from .data import RNG_NAME, load_csv, save_csv, synth_elastic, synth_logistic, synth_ridge, train_test_split
from .models import FAMILIES, make_objective
from .solver import ConvergenceError, SolverConfig, fit
from .tuning import GRADIENT_MODES, STEP_RULES, TuneConfig, TuningError, tune_batch, tune_stochastic

THREADS_ENV = "ALOOCV_THREADS"
LAMBDA_GRID = [3.3333, 1.6667, 0.8333, 0.4167, 0.2083, 0.1042, 0.0521]
SOURCES = ("synth", "synth_ridge", "synth_logistic", "synth_elastic", "csv")

DEFAULTS = {
    "dataset": {
        "source": "synth",
        "n": 150,
        "p": 50,
        "seed": 0,
        "n_relevant": None,
        "noise_var": None,
        "signal": 1.0,
        "path": None,
        "label_column": "y",
        "binarize": None,
        "holdout": 0.0,
    },
    "model": {"family": "ridge", "lambdas": 1.0},
    "solver": {"gradient_tolerance": 1e-10, "max_iterations": 100},
    "estimator": {"method": "sherman_morrison", "exact": True, "influence": True, "lambda_grid": LAMBDA_GRID, "bins": 20},
    "tuner": {
        "algorithm": "batch",
        "step_rule": None,
        "step_size": 1.0,
        "max_iterations": 100,
        "lower_bound": 0.0,
        "refit_every": None,
        "seed": 0,
        "gradient_mode": "tilde",
        "groups": None,
    },
    "bench": {"n_grid": [200, 400, 800, 1600], "repeats": 3},
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _merge(base: dict, update: dict, where: str = "") -> dict:
    for key, value in update.items():
        if key not in base:
            raise ConfigError(f"unknown setting '{where}{key}'")
        if isinstance(base[key], dict) and not where:
            if not isinstance(value, dict):
                raise ConfigError(f"section {key!r} must be an object")
            _merge(base[key], value, f"{key}.")
        else:
            base[key] = value
    return base


def _parse_set(item: str):
    if "=" not in item or "." not in item.split("=", 1)[0]:
        raise ConfigError(f"--set expects section.key=value, got {item!r}")
    path, raw = item.split("=", 1)
    section, key = path.split(".", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return {section: {key: value}}


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None


def build_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as err:
            raise ConfigError(f"config file is not valid JSON: {err}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        _merge(cfg, loaded)
    for item in args.set or ():
        _merge(cfg, _parse_set(item))
    shortcuts = {
        ("model", "family"): args.family,
        ("dataset", "n"): args.n,
        ("dataset", "p"): args.p,
        ("dataset", "seed"): args.seed,
    }
    if args.lambdas is not None:
        lam = _float_list(args.lambdas)
        shortcuts[("model", "lambdas")] = lam[0] if len(lam) == 1 else lam
    if args.data is not None:
        shortcuts[("dataset", "source")] = "csv"
        shortcuts[("dataset", "path")] = args.data
    for extra in ("grid", "no_exact", "holdout", "algorithm", "iterations", "step_size", "n_grid", "repeats"):
        if not hasattr(args, extra):
            continue
        value = getattr(args, extra)
        if value is None or value is False:
            continue
        if extra == "grid":
            shortcuts[("estimator", "lambda_grid")] = _float_list(value)
        elif extra == "no_exact":
            shortcuts[("estimator", "exact")] = False
        elif extra == "holdout":
            shortcuts[("dataset", "holdout")] = value
        elif extra == "algorithm":
            shortcuts[("tuner", "algorithm")] = value
        elif extra == "iterations":
            shortcuts[("tuner", "max_iterations")] = value
        elif extra == "step_size":
            shortcuts[("tuner", "step_size")] = value
        elif extra == "n_grid":
            shortcuts[("bench", "n_grid")] = [int(v) for v in _float_list(value)]
        elif extra == "repeats":
            shortcuts[("bench", "repeats")] = value
    for (section, key), value in shortcuts.items():
        if value is not None:
            cfg[section][key] = value
    validate(cfg)
    return cfg


def _require(cond, message):
    if not cond:
        raise ConfigError(message)


def validate(cfg: dict) -> None:
    """Reject bad settings before any computation starts."""
    ds, model, est, tun = cfg["dataset"], cfg["model"], cfg["estimator"], cfg["tuner"]
    _require(ds["source"] in SOURCES, f"dataset.source must be one of {list(SOURCES)}")
    _require(model["family"] in FAMILIES, f"model.family must be one of {list(FAMILIES)}")
    if ds["source"] == "csv":
        _require(bool(ds["path"]), "dataset.path is required for csv sources")
    else:
        _require(isinstance(ds["n"], int) and ds["n"] >= 2, "dataset.n must be an integer >= 2")
        _require(isinstance(ds["p"], int) and ds["p"] >= 1, "dataset.p must be a positive integer")
        _require(ds["n_relevant"] is None or (isinstance(ds["n_relevant"], int) and 0 <= ds["n_relevant"] <= ds["p"]), "dataset.n_relevant must lie in [0, p]")
        _require(ds["noise_var"] is None or ds["noise_var"] >= 0, "dataset.noise_var must be nonnegative")
    _require(isinstance(ds["seed"], int) and ds["seed"] >= 0, "dataset.seed must be a nonnegative integer")
    _require(0 <= ds["holdout"] < 1, "dataset.holdout must lie in [0, 1)")
    try:
        as_lambdas(model["lambdas"])
        for lam in est["lambda_grid"]:
            as_lambdas(lam)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid lambda: {err}") from None
    _require(len(est["lambda_grid"]) >= 1, "estimator.lambda_grid must not be empty")
    _require(est["method"] in METHODS, f"estimator.method must be one of {list(METHODS)}")
    _require(isinstance(est["bins"], int) and est["bins"] >= 1, "estimator.bins must be a positive integer")
    _require(tun["algorithm"] in ("batch", "stochastic"), "tuner.algorithm must be 'batch' or 'stochastic'")
    _require(tun["step_rule"] is None or tun["step_rule"] in STEP_RULES, f"tuner.step_rule must be one of {list(STEP_RULES)}")
    _require(tun["gradient_mode"] in GRADIENT_MODES, f"tuner.gradient_mode must be one of {list(GRADIENT_MODES)}")
    _require(min(cfg["bench"]["n_grid"], default=0) >= 20, "bench.n_grid entries must be >= 20")
    _require(cfg["bench"]["repeats"] >= 1, "bench.repeats must be >= 1")
    try:
        solver_config(cfg)
        tune_config(cfg)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from None


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def solver_config(cfg) -> SolverConfig:
    s = cfg["solver"]
    return SolverConfig(gradient_tolerance=float(s["gradient_tolerance"]), max_iterations=int(s["max_iterations"]))


def tune_config(cfg) -> TuneConfig:
    t = cfg["tuner"]
    rule = t["step_rule"] or ("backtracking" if t["algorithm"] == "batch" else "decay")
    return TuneConfig(
        step_rule=rule,
        step_size=float(t["step_size"]),
        max_iterations=int(t["max_iterations"]),
        lower_bound=float(t["lower_bound"]),
        refit_every=t["refit_every"],
        seed=int(t["seed"]),
        gradient_mode=t["gradient_mode"],
        solver=solver_config(cfg),
    )


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    _require(value >= 1, f"{THREADS_ENV} must be a positive integer")
    return value


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


def _generator(cfg) -> str:
    source = cfg["dataset"]["source"]
    if source != "synth":
        return source
    return {"logistic": "synth_logistic", "elastic_net": "synth_elastic"}.get(cfg["model"]["family"], "synth_ridge")


def make_dataset(cfg):
    """Returns (dataset, theta_star or None)."""
    ds = cfg["dataset"]
    source = _generator(cfg)
    if source == "csv":
        return load_csv(ds["path"], ds["label_column"], ds["binarize"]), None
    if source == "synth_ridge":
        noise = 0.1 if ds["noise_var"] is None else ds["noise_var"]
        return synth_ridge(ds["n"], ds["p"], _n_relevant(cfg), noise, ds["seed"])
    if source == "synth_logistic":
        return synth_logistic(ds["n"], ds["p"], ds["seed"], ds["signal"])
    noise = 1.0 if ds["noise_var"] is None else ds["noise_var"]
    return synth_elastic(ds["n"], ds["p"], ds["seed"], noise)


def _n_relevant(cfg) -> int:
    ds = cfg["dataset"]
    # unset: one relevant feature in five
    return max(1, ds["p"] // 5) if ds["n_relevant"] is None else ds["n_relevant"]


def split(cfg, dataset):
    frac = cfg["dataset"]["holdout"]
    if frac > 0:
        return train_test_split(dataset, frac, cfg["dataset"]["seed"])
    return dataset, None


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _envelope(command, cfg, result, timing):
    return {
        "command": command,
        "status": "ok",
        "version": __version__,
        "rng": RNG_NAME,
        "config_hash": config_hash(cfg),
        "seed": cfg["dataset"]["seed"],
        "config": cfg,
        "result": result,
        "timing": timing,
    }


def _emit(report, path):
    text = json.dumps(report, indent=2, default=_json_default, allow_nan=False) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _finite_or_none(x):
    x = float(x)
    return x if np.isfinite(x) else None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args, cfg):
    dataset, theta = make_dataset(cfg)
    if cfg["dataset"]["source"] == "csv":
        raise ConfigError("synth needs a synthetic dataset source")
    save_csv(dataset, args.out, cfg["dataset"]["label_column"])
    result = {"n": dataset.n, "p": dataset.p, "generator": _generator(cfg), "path": str(args.out), "theta_star": theta}
    _emit(_envelope("synth", cfg, result, {}), args.report)


def cmd_fit(args, cfg):
    t0 = time.perf_counter()
    dataset, _ = make_dataset(cfg)
    train, test = split(cfg, dataset)
    objective = make_objective(cfg["model"]["family"], train.p, cfg["model"]["lambdas"])
    fitted = fit(train, objective, solver_config(cfg))
    result = {
        "family": cfg["model"]["family"],
        "n": train.n,
        "p": train.p,
        "lambdas": fitted.lambdas,
        "theta_hat": fitted.theta_hat,
        "converged": fitted.converged,
        "iterations": fitted.iterations,
        "final_gradient_norm": fitted.final_gradient_norm,
        "active_set": fitted.active_set,
        "in_sample_loss": in_sample_loss(train, objective, fitted.theta_hat),
        "out_of_sample_loss": None if test is None else in_sample_loss(test, objective, fitted.theta_hat),
    }
    _emit(_envelope("fit", cfg, result, {"seconds": time.perf_counter() - t0}), args.out)


def _histogram(values, bins):
    v = values[np.isfinite(values)]
    if v.size == 0:
        return None
    counts, edges = np.histogram(v, bins=bins)
    return {"edges": edges, "counts": counts}


def cmd_compare(args, cfg, threads):
    t0 = time.perf_counter()
    est = cfg["estimator"]
    dataset, _ = make_dataset(cfg)
    train, test = split(cfg, dataset)
    solver = solver_config(cfg)
    rows, per_sample = [], []
    for j, lam in enumerate(est["lambda_grid"]):
        objective = make_objective(cfg["model"]["family"], train.p, lam)
        fitted = fit(train, objective, solver)
        report = acv_vector(train, fitted, objective, with_exact=est["exact"], with_if=est["influence"], method=est["method"], config=solver, threads=threads)
        train_loss = objective.loss.value(train.X, train.y, fitted.theta_hat)
        acv, cv, infl = report.acv, report.cv, report.influence
        row = {
            "lambda": lam,
            "in_sample": float(np.mean(train_loss)),
            "out_of_sample": None if test is None else in_sample_loss(test, objective, fitted.theta_hat),
            "acv": dict(zip(("mean", "se"), map(_finite_or_none, mean_and_stderr(acv)))),
            "cv": dict(zip(("mean", "se"), map(_finite_or_none, mean_and_stderr(cv)))) if est["exact"] else None,
            "if": dict(zip(("mean", "se"), map(_finite_or_none, mean_and_stderr(infl)))) if est["influence"] else None,
            "n_undefined": report.n_undefined,
            "undefined_indices": [e.index for e in report.estimates if e.error],
            "acv_seconds": report.wall_time,
        }
        if est["exact"]:
            ratio = (acv - cv) / cv
            finite = ratio[np.isfinite(ratio)]
            row["fraction_within_5pct"] = _finite_or_none(np.mean(np.abs(finite) <= 0.05)) if finite.size else None
            row["normalized_difference_histogram"] = _histogram(ratio, est["bins"])
            if est["influence"]:
                row["ordering_holds"] = EstimatorComparison(train_loss, cv, acv, infl).ordering_holds()
        else:
            ratio = np.full(train.n, np.nan)
        if fitted.active_set is not None and est["exact"]:
            row["support_violations"] = int(sum(bool(e.support_violation) for e in report.estimates))
        rows.append(row)
        for e in report.estimates:
            per_sample.append([j, lam, e.index, train_loss[e.index], e.cv_exact, e.acv, e.if_baseline, ratio[e.index], e.error or ""])
    if args.samples_out:
        _write_samples(args.samples_out, per_sample)
    result = {"family": cfg["model"]["family"], "n": train.n, "p": train.p, "rows": rows, "samples_path": args.samples_out}
    _emit(_envelope("compare", cfg, result, {"seconds": time.perf_counter() - t0}), args.out)


def _write_samples(path, rows):
    import csv

    def fmt(v):
        if v is None or (isinstance(v, float) and not np.isfinite(v)):
            return ""
        if isinstance(v, (list, tuple)):
            return ";".join(str(x) for x in v)
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        return str(v)

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda_index", "lambda", "index", "in_sample", "cv", "acv", "if", "normalized_difference", "error"])
        for r in rows:
            w.writerow([fmt(v) for v in r])


def _groups(cfg, M):
    groups = cfg["tuner"]["groups"]
    if groups is not None:
        out = {str(k): [int(i) for i in v] for k, v in groups.items()}
        for name, ix in out.items():
            _require(ix and all(0 <= i < M for i in ix), f"tuner.groups[{name!r}] must hold indices in [0, {M})")
        return out
    if cfg["model"]["family"] == "ridge_diagonal" and _generator(cfg) == "synth_ridge":
        cut = cfg["dataset"]["p"] - _n_relevant(cfg)
        return {"irrelevant": list(range(cut)), "relevant": list(range(cut, M))}
    return None


def cmd_tune(args, cfg):
    t0 = time.perf_counter()
    dataset, _ = make_dataset(cfg)
    train, test = split(cfg, dataset)
    objective = make_objective(cfg["model"]["family"], train.p, cfg["model"]["lambdas"])
    groups = _groups(cfg, objective.M)
    tconf = tune_config(cfg)
    runner = tune_batch if cfg["tuner"]["algorithm"] == "batch" else tune_stochastic
    try:
        lam, trace = runner(train, objective, objective.lambdas, tconf)
    except TuningError as err:
        if args.trace_out:
            Path(args.trace_out).write_text(err.trace.to_csv(groups), encoding="utf-8")
        raise
    if args.trace_out:
        Path(args.trace_out).write_text(trace.to_csv(groups), encoding="utf-8")
    final = objective.with_lambdas(lam)
    result = {
        "algorithm": cfg["tuner"]["algorithm"],
        "step_rule": tconf.step_rule,
        "lambda0": objective.lambdas,
        "lambda_final": lam,
        "records": len(trace),
        "acv_initial": trace.acv[0],
        "acv_final": trace.acv[-1],
        "group_means": None if groups is None else {k: float(np.mean(lam[v])) for k, v in groups.items()},
        "trace_path": args.trace_out,
    }
    if test is not None:
        fitted = fit(train, final, tconf.solver)
        result["out_of_sample_loss"] = in_sample_loss(test, final, fitted.theta_hat)
    _emit(_envelope("tune", cfg, result, {"seconds": time.perf_counter() - t0}), args.out)


def cmd_bench(args, cfg, threads):
    b = cfg["bench"]
    lam = np.atleast_1d(np.asarray(cfg["model"]["lambdas"], dtype=float))[0]
    table = runtime_scaling(cfg["model"]["family"] if cfg["model"]["family"] != "ridge_diagonal" else "ridge", b["n_grid"], cfg["dataset"]["p"], float(lam), cfg["dataset"]["seed"], b["repeats"], solver_config(cfg), threads)
    text = table.to_csv()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.report:
        slope_cv, slope_acv = table.slopes()
        result = {"n": table.n, "cv_seconds": table.cv_seconds, "acv_seconds": table.acv_seconds, "ratio": table.ratio, "slope_cv": slope_cv, "slope_acv": slope_acv}
        _emit(_envelope("bench", cfg, result, {}), args.report)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with dataset/model/solver/estimator/tuner/bench sections")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one setting (value parsed as JSON)")
    common.add_argument("--family", help=f"model family: {', '.join(FAMILIES)}")
    common.add_argument("--lambdas", help="lambda value or comma-separated vector")
    common.add_argument("--n", type=int, help="synthetic sample size")
    common.add_argument("--p", type=int, help="synthetic feature count")
    common.add_argument("--seed", type=int, help="dataset seed")
    common.add_argument("--data", help="CSV dataset (label column from dataset.label_column)")
    common.add_argument("--threads", type=int, help=f"worker threads for exact refits (default ${THREADS_ENV} or 1)")

    parser = argparse.ArgumentParser(prog="aloocv", description="Approximate leave-one-out cross-validation toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset to CSV")
    p.add_argument("--out", required=True, help="CSV destination")
    p.add_argument("--report", help="JSON summary destination (default stdout)")

    p = sub.add_parser("fit", parents=[common], help="fit a single model")
    p.add_argument("--holdout", type=float, help="fraction held out for an out-of-sample loss")
    p.add_argument("--out", help="JSON report destination (default stdout)")

    p = sub.add_parser("compare", parents=[common], help="compare estimators over a lambda grid")
    p.add_argument("--grid", help="comma-separated lambda grid")
    p.add_argument("--no-exact", action="store_true", help="skip exact leave-one-out refits")
    p.add_argument("--holdout", type=float, help="fraction held out for an out-of-sample loss")
    p.add_argument("--samples-out", help="per-sample CSV destination")
    p.add_argument("--out", help="JSON report destination (default stdout)")

    p = sub.add_parser("tune", parents=[common], help="tune lambda by approximate gradient descent")
    p.add_argument("--algorithm", choices=("batch", "stochastic"))
    p.add_argument("--iterations", type=int, help="iteration budget")
    p.add_argument("--step-size", type=float)
    p.add_argument("--holdout", type=float, help="fraction held out for an out-of-sample loss")
    p.add_argument("--trace-out", help="trace CSV destination")
    p.add_argument("--out", help="JSON report destination (default stdout)")

    p = sub.add_parser("bench", parents=[common], help="time exact LOOCV against ACV")
    p.add_argument("--n-grid", help="comma-separated sample sizes")
    p.add_argument("--repeats", type=int)
    p.add_argument("--out", help="CSV destination (default stdout)")
    p.add_argument("--report", help="JSON summary destination")
    return parser


def _fail(code, err, args):
    record = {"status": "error", "exit_code": code, "error": type(err).__name__, "message": str(err), "version": __version__}
    index = getattr(err, "index", None)
    if index is not None:
        record["index"] = index
    text = json.dumps(record, default=_json_default)
    sys.stderr.write(text + "\n")
    out = getattr(args, "report", None) if args is not None and args.command in ("synth", "bench") else getattr(args, "out", None)
    if out:
        try:
            Path(out).write_text(text + "\n", encoding="utf-8")
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = build_config(args)
        threads = args.threads if args.threads is not None else default_threads()
        _require(threads >= 1, "--threads must be positive")
        if args.command == "synth":
            cmd_synth(args, cfg)
        elif args.command == "fit":
            cmd_fit(args, cfg)
        elif args.command == "compare":
            cmd_compare(args, cfg, threads)
        elif args.command == "tune":
            cmd_tune(args, cfg)
        else:
            cmd_bench(args, cfg, threads)
    except (ConvergenceError, EstimatorUndefinedError, TuningError, LinAlgError, FloatingPointError) as err:
        return _fail(2, err, args)
    except (ValueError, TypeError, KeyError, OSError) as err:
        return _fail(1, err, args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
