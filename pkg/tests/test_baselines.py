import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aloocv import (
    Dataset,
    acv_vector,
    align,
    correction_terms,
    fit,
    influence_baseline,
    influence_vector,
    logistic,
    loo_steps,
    ridge,
    synth_logistic,
    synth_ridge,
)
from aloocv.baselines import EstimatorComparison


def test_zero_gradient_gives_training_loss(rng):
    X = rng.normal(size=(6, 2))
    y = rng.normal(size=6)
    theta = fit(Dataset(X, y), ridge(2, 1.0)).theta_hat
    X2 = np.vstack([X, [0.3, 1.0]])
    ds = Dataset(X2, np.append(y, X2[-1] @ theta))
    obj = ridge(2, 1.0)
    f = fit(ds, obj)
    assert influence_baseline(ds, f, obj, 6) == pytest.approx(obj.loss.loss(ds[6], f.theta_hat), abs=1e-20)


def test_mean_equals_training_loss_plus_correction():
    ds, _ = synth_logistic(40, 5, seed=3)
    obj = logistic(5, True, 0.6)
    f = fit(ds, obj)
    L, R = correction_terms(ds, f, obj)
    direct = np.mean([influence_baseline(ds, f, obj, i) for i in range(ds.n)])
    assert direct == pytest.approx(L + R, rel=1e-13)
    assert np.mean(influence_vector(ds, f, obj)) == pytest.approx(L + R, rel=1e-12)


@given(seed=st.integers(0, 5000))
def test_influence_at_least_training_loss_and_below_acv(seed):
    ds, _ = synth_logistic(30, 4, seed=seed)
    obj = logistic(4, True, 0.5)
    f = fit(ds, obj)
    train = obj.loss.value(ds.X, ds.y, f.theta_hat)
    infl = influence_vector(ds, f, obj)
    acv = acv_vector(ds, f, obj).acv
    assert np.all(infl >= train)
    # convexity: the loss lies above its tangent at theta_hat
    assert np.all(acv >= infl - 1e-12 * np.abs(infl))


def test_quadratic_remainder_is_exact_for_ridge():
    ds, _ = synth_ridge(30, 4, 2, 0.1, seed=2)
    obj = ridge(4, 0.8)
    f = fit(ds, obj)
    thetas, _, _ = loo_steps(ds, f, obj)
    acv = acv_vector(ds, f, obj).acv
    infl = influence_vector(ds, f, obj)
    u = thetas - f.theta_hat
    remainder = 0.5 * np.einsum("ij,ij->i", ds.X, u) ** 2
    assert np.allclose(acv - infl, remainder, rtol=1e-9, atol=1e-15)


def test_ordering_in_overfit_regime():
    ds, _ = synth_logistic(30, 60, seed=1)
    obj = logistic(60, True, 0.1)
    f = fit(ds, obj)
    rep = acv_vector(ds, f, obj, with_exact=True, with_if=True)
    cmp = align(ds, f, obj, rep)
    m = cmp.means
    assert m["if"] < m["acv"]
    assert abs(m["acv"] - m["cv"]) < abs(m["if"] - m["cv"])
    assert cmp.ordering_holds()


def test_align_requires_full_report():
    ds, _ = synth_logistic(20, 2, seed=1)
    obj = logistic(2, True, 1.0)
    f = fit(ds, obj)
    with pytest.raises(ValueError):
        align(ds, f, obj, acv_vector(ds, f, obj))


def test_normalized_differences():
    cmp = EstimatorComparison(np.zeros(2), np.array([1.0, 2.0]), np.array([1.1, 1.0]), np.zeros(2))
    assert np.allclose(cmp.normalized_differences(), [0.1, -0.5])
