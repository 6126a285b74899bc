import numpy as np
import pytest

from aloocv import (
    Dataset,
    SolverConfig,
    TuneConfig,
    TuningError,
    acv_vector,
    approximate_gradient,
    elastic_net,
    exact_cv_gradient,
    fit,
    lambda_gradient_full,
    logistic,
    loocv_exact,
    per_sample_gradient,
    ridge,
    ridge_diagonal,
    synth_elastic,
    synth_logistic,
    synth_ridge,
    tune_batch,
    tune_stochastic,
)
from aloocv.tuning import TuneTrace
from oracles import ridge_cv_gradient_fd, ridge_lambda_gradient_fd


def _ridge5(seed=0, n=40):
    ds, _ = synth_ridge(n, 5, 3, 0.1, seed=seed)
    return ds


# -- gradients -------------------------------------------------------------------------


def test_tiny_lambda_gradient(tiny_ridge):
    ds, obj = tiny_ridge
    f = fit(ds, obj)
    assert lambda_gradient_full(ds, f, obj)[0, 0] == pytest.approx(-1 / 9, abs=1e-15)


def test_zero_solution_has_zero_lambda_gradient():
    ds = Dataset(np.random.default_rng(0).normal(size=(8, 3)), np.zeros(8))
    obj = ridge(3, 1.0)
    f = fit(ds, obj)
    assert not f.theta_hat.any()
    assert not lambda_gradient_full(ds, f, obj).any()
    assert not per_sample_gradient(ds, f, obj, 2).any()
    assert not approximate_gradient(ds, f, obj).mean.any()


@pytest.mark.parametrize("seed", range(4))
def test_lambda_gradient_matches_refit_differences(seed):
    ds = _ridge5(seed)
    lam = np.exp(np.random.default_rng(seed).uniform(-2, 2, 5))
    obj = ridge_diagonal(5, lam)
    D = lambda_gradient_full(ds, fit(ds, obj), obj)
    ref = ridge_lambda_gradient_fd(ds.X, ds.y, lam)
    assert np.linalg.norm(D - ref) <= 1e-4 * np.linalg.norm(ref)


@pytest.mark.parametrize("seed", range(3))
def test_ridge_gradient_matches_cv_differences(seed):
    ds = _ridge5(seed)
    lam = np.exp(np.random.default_rng(100 + seed).uniform(-2, 2, 5))
    obj = ridge_diagonal(5, lam)
    g = approximate_gradient(ds, fit(ds, obj), obj).mean
    ref = ridge_cv_gradient_fd(ds.X, ds.y, lam)
    assert np.linalg.norm(g - ref) <= 1e-3 * np.linalg.norm(ref)


@pytest.mark.parametrize(
    "make",
    [
        lambda: (_ridge5(1), ridge_diagonal(5, np.linspace(0.2, 2.0, 5))),
        lambda: (synth_logistic(50, 4, seed=2)[0], logistic(4, True, 0.7)),
        lambda: (synth_elastic(50, 8, seed=3)[0], elastic_net(8, (10.0, 1.0))),
    ],
)
@pytest.mark.parametrize("mode", ["tilde", "hat"])
def test_vectorised_gradient_matches_per_sample_loop(make, mode):
    ds, obj = make()
    f = fit(ds, obj)
    res = approximate_gradient(ds, f, obj, mode)
    loop = np.array([per_sample_gradient(ds, f, obj, i, res.thetas[i], mode) for i in range(ds.n)])
    assert np.allclose(res.per_sample, loop, rtol=1e-9, atol=1e-14)
    assert np.allclose(res.mean, loop.mean(axis=0), rtol=1e-12, atol=1e-16)


def test_elastic_net_gradient_signs_match_acv_differences():
    ds, _ = synth_elastic(80, 10, seed=1)
    for lam in ([5.0, 1.0], [20.0, 3.0], [0.5, 0.2]):
        obj = elastic_net(10, lam)
        g = approximate_gradient(ds, fit(ds, obj), obj).mean
        for m in range(2):
            h = 1e-4 * max(lam[m], 1.0)
            up, down = np.array(lam), np.array(lam)
            up[m] += h
            down[m] -= h
            vals = []
            for point in (up, down):
                o = obj.with_lambdas(point)
                vals.append(acv_vector(ds, fit(ds, o), o).acv_mean)
            fd = (vals[0] - vals[1]) / (2 * h)
            assert np.sign(g[m]) == np.sign(fd)


def test_exact_gradient_for_logistic_matches_cv_differences():
    ds, _ = synth_logistic(40, 3, seed=5)
    obj = logistic(3, True, 0.8)
    g = exact_cv_gradient(ds, obj)[0]
    h = 1e-5
    cfg = SolverConfig(gradient_tolerance=1e-12)
    up = loocv_exact(ds, obj.with_lambdas([0.8 + h]), cfg).mean
    down = loocv_exact(ds, obj.with_lambdas([0.8 - h]), cfg).mean
    assert g == pytest.approx((up - down) / (2 * h), rel=1e-5)


# -- batch descent --------------------------------------------------------------------


def _check_trace(trace: TuneTrace, bound):
    ts = [r.t for r in trace.records]
    assert all(b > a for a, b in zip(ts, ts[1:]))
    assert np.all(trace.lambdas >= bound)


def test_fixed_point_gives_single_record():
    ds = Dataset(np.random.default_rng(0).normal(size=(8, 3)), np.zeros(8))
    obj = ridge_diagonal(3, np.ones(3))
    lam, trace = tune_batch(ds, obj, np.ones(3), TuneConfig(max_iterations=50))
    assert np.array_equal(lam, np.ones(3))
    assert len(trace) == 1


def test_zero_budget_records_only_the_start():
    ds = _ridge5()
    lam, trace = tune_batch(ds, ridge_diagonal(5, np.ones(5)), None, TuneConfig(max_iterations=0))
    assert len(trace) == 1 and trace.records[0].t == 0
    assert np.array_equal(lam, np.ones(5))


def test_backtracking_descends_and_respects_bound():
    ds = _ridge5(2)
    cfg = TuneConfig(max_iterations=60, lower_bound=0.05, step_size=10.0)
    lam, trace = tune_batch(ds, ridge_diagonal(5, np.full(5, 0.5)), None, cfg)
    _check_trace(trace, 0.05)
    assert np.all(np.diff(trace.acv) <= 1e-15)
    assert trace.acv[-1] < trace.acv[0]


@pytest.mark.parametrize("rule", ["fixed", "decay"])
def test_plain_step_rules_project(rule):
    ds = _ridge5(3)
    lam, trace = tune_batch(ds, ridge_diagonal(5, np.full(5, 0.2)), None, TuneConfig(step_rule=rule, step_size=500.0, max_iterations=15))
    _check_trace(trace, 0.0)
    assert len(trace) >= 2


def test_initial_lambda_below_bound_is_rejected():
    with pytest.raises(ValueError):
        tune_batch(_ridge5(), ridge_diagonal(5, np.ones(5)), np.full(5, 0.01), TuneConfig(lower_bound=0.1))


def test_config_validation():
    with pytest.raises(ValueError):
        TuneConfig(step_size=0.0)
    with pytest.raises(ValueError):
        TuneConfig(step_rule="newton")
    with pytest.raises(ValueError):
        TuneConfig(lower_bound=np.inf)


def test_warm_start_neutrality():
    ds, _ = synth_logistic(60, 4, seed=4)
    obj = logistic(4, True, 1.0)
    cfg = TuneConfig(step_rule="fixed", step_size=20.0, max_iterations=10)
    a, _ = tune_batch(ds, obj, None, cfg)
    b, _ = tune_batch(ds, obj, None, TuneConfig(step_rule="fixed", step_size=20.0, max_iterations=10, warm_start=False))
    # ten times the solver tolerance per iteration, ten iterations
    assert np.allclose(a, b, rtol=0, atol=10 * 1e-10 * 10)


def test_refit_failure_keeps_partial_trace(monkeypatch):
    import aloocv.tuning as tuning
    from aloocv import ConvergenceError

    real = tuning.fit
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] > 3:
            raise ConvergenceError("injected")
        return real(*args, **kwargs)

    monkeypatch.setattr(tuning, "fit", flaky)
    with pytest.raises(TuningError) as info:
        tune_batch(_ridge5(), ridge_diagonal(5, np.full(5, 0.3)), None, TuneConfig(step_rule="fixed", step_size=1.0, max_iterations=10))
    trace = info.value.trace
    assert trace.aborted and "injected" in trace.error
    assert len(trace) == 3


def test_trace_csv_groups():
    ds = _ridge5()
    _, trace = tune_batch(ds, ridge_diagonal(5, np.ones(5)), None, TuneConfig(max_iterations=3))
    text = trace.to_csv({"a": [0, 1], "b": [2, 3, 4]})
    head, *rows = text.strip().split("\n")
    assert head == "iteration,acv_mean,gradient_norm,refit_iterations,wall_time,a,b"
    assert len(rows) == len(trace)
    first = rows[0].split(",")
    assert float(first[5]) == 1.0 and float(first[6]) == 1.0


# -- stochastic descent ----------------------------------------------------------------


def test_stochastic_is_deterministic_per_seed():
    ds, _ = synth_elastic(60, 8, seed=2)
    obj = elastic_net(8)
    cfg = TuneConfig(step_rule="decay", max_iterations=60, seed=9)
    a, ta = tune_stochastic(ds, obj, [0.0, 0.0], cfg)
    b, tb = tune_stochastic(ds, obj, [0.0, 0.0], cfg)
    assert np.array_equal(a, b)
    assert np.array_equal(ta.lambdas, tb.lambdas) and np.array_equal(ta.acv, tb.acv)
    _check_trace(ta, 0.0)
    # records at the start, after every refit (n // 10 = 6 steps) and at the end
    assert [r.t for r in ta.records] == list(range(0, 61, 6))


def test_stochastic_single_sample_pool_reaches_batch_fixed_point():
    ds = _ridge5(4, n=30)
    obj = ridge(5, 1.0)
    pool = (3,)
    batch, _ = tune_batch(ds, obj, [1.0], TuneConfig(max_iterations=200, sample_pool=pool))
    assert batch[0] > 0.5  # interior fixed point, not the bound
    sgd, _ = tune_stochastic(ds, obj, [1.0], TuneConfig(step_rule="decay", step_size=float(batch[0]) + 1.0, max_iterations=4000, sample_pool=pool, refit_every=1))
    assert sgd[0] == pytest.approx(batch[0], rel=1e-3, abs=1e-6)
