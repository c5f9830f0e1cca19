from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefego import gp
from prefego.gp import GPFitError, KernelParams, fit
from prefego.testbed import HOLE1

UNIT2 = [(0.0, 1.0), (0.0, 1.0)]


def dense_posterior(Z, ys, params, jitter, Zq):
    """Independent textbook posterior in standardized units via explicit inverses."""
    def k(A, B):
        d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(-1)
        return params.signal_variance * np.exp(-d2 / (2 * params.lengthscale**2))

    K = k(Z, Z) + jitter * params.signal_variance * np.eye(len(Z))
    Kinv = np.linalg.inv(K)
    Ks = k(Zq, Z)
    mean = Ks @ Kinv @ ys
    var = params.signal_variance - np.einsum("ij,jk,ik->i", Ks, Kinv, Ks)
    sign, logdet = np.linalg.slogdet(K)
    lml = -0.5 * ys @ Kinv @ ys - 0.5 * logdet - 0.5 * len(Z) * np.log(2 * np.pi)
    return mean, var, lml


def lhs(n, seed):
    rng = np.random.default_rng(seed)
    return np.column_stack([(rng.permutation(n) + rng.uniform(size=n)) / n for _ in range(2)])


def test_single_point_interpolates():
    m = fit([[0.3, 0.4]], [2.5], UNIT2)
    assert m.posterior_mean(np.array([0.3, 0.4])) == pytest.approx(2.5, abs=1e-6)
    assert m.posterior_variance(np.array([0.3, 0.4])) < 1e-6


def test_empty_model_is_prior():
    m = fit(np.zeros((0, 2)), [], UNIT2, params=KernelParams(2.0, 0.5))
    mean, var = m.predict(np.array([[0.1, 0.9], [0.5, 0.5]]))
    np.testing.assert_array_equal(mean, 0.0)
    np.testing.assert_array_equal(var, 2.0)


def test_single_point_closed_form():
    # standardized target, unit prior variance: mean(x) = exp(-d^2 / 2l^2) y / (1 + jitter)
    params = KernelParams(1.0, 0.25)
    m = fit([[0.2, 0.2]], [1.7], UNIT2, params=params, standardize=False)
    for q in ([0.2, 0.2], [0.3, 0.1], [0.6, 0.5], [1.0, 1.0]):
        d2 = np.sum((np.array(q) - 0.2) ** 2)
        expected = np.exp(-d2 / (2 * 0.25**2)) * 1.7 / (1 + gp.BASE_JITTER)
        assert m.posterior_mean(np.array(q)) == pytest.approx(expected, abs=1e-12)


def test_far_from_data_reverts_to_prior():
    X = np.array([[0.0, 0.0], [0.05, 0.02], [0.01, 0.07]])
    y = np.array([1.0, 4.0, 2.0])
    m = fit(X, y, [(0, 20), (0, 20)], params=KernelParams(1.3, 0.01))
    mean, var = m.predict(np.array([[19.0, 19.0]]))
    assert mean[0] == pytest.approx(y.mean(), abs=1e-6)
    assert var[0] == pytest.approx(m.prior_variance, abs=1e-6)


def test_variance_matches_dense_oracle():
    X = np.array([[0.1, 0.2], [0.8, 0.3], [0.4, 0.9], [0.55, 0.5]])
    y = np.array([0.3, -1.2, 2.0, 0.7])
    m = fit(X, y, UNIT2)
    Zq = np.random.default_rng(0).uniform(0, 1, (50, 2))
    mean, var, _ = dense_posterior(m.Z, m.ys, m.params, m.jitter, Zq)
    pm, pv = m.predict(Zq)
    np.testing.assert_allclose(pv, var * m.y_scale**2, atol=1e-8)
    np.testing.assert_allclose(pm, m.y_mean + m.y_scale * mean, atol=1e-8)
    # between two training points: strictly inside (0, prior)
    pinned = fit(X, y, UNIT2, params=KernelParams(1.0, 0.4))
    mid = pinned.posterior_variance((X[0] + X[1]) / 2)
    assert 0 < mid < pinned.prior_variance


def test_lml_matches_dense_oracle():
    X = np.array([[0.1], [0.45], [0.9]])
    m = fit(X, [1.0, 3.0, 2.0], [(0, 1)])
    _, _, lml = dense_posterior(m.Z, m.ys, m.params, m.jitter, m.Z)
    assert m.log_marginal_likelihood() == pytest.approx(lml, abs=1e-8)
    assert gp.log_marginal_likelihood(m) == m.log_marginal_likelihood()


def test_lml_single_standard_normal():
    m = fit([[0.5]], [0.0], [(0, 1)], params=KernelParams(1.0, 0.3), standardize=False)
    assert m.log_marginal_likelihood() == pytest.approx(-0.5 * np.log(2 * np.pi * (1 + gp.BASE_JITTER)), abs=1e-12)


def test_fit_beats_random_hyperparameters():
    rng = np.random.default_rng(5)
    X = rng.uniform(0, 1, (8, 1))
    y = np.sin(7 * X[:, 0]) + 0.3 * X[:, 0]
    m = fit(X, y, [(0, 1)])
    best = m.log_marginal_likelihood()
    for _ in range(20):
        params = KernelParams(float(np.exp(rng.uniform(np.log(1e-3), np.log(1e3)))),
                              float(np.exp(rng.uniform(np.log(1e-3), np.log(10)))))
        assert fit(X, y, [(0, 1)], params=params).log_marginal_likelihood() <= best + 1e-9


def test_lengthscale_probe_is_local_optimum():
    X = lhs(12, 1)
    y = HOLE1.evaluate(X * 2 - 1)[:, 0]
    m = fit(X, y, UNIT2)
    best = m.log_marginal_likelihood()
    for f in (0.8, 1.2):
        probe = KernelParams(m.params.signal_variance, m.params.lengthscale * f)
        assert fit(X, y, UNIT2, params=probe).log_marginal_likelihood() <= best


def test_permutation_invariance_is_exact():
    X = lhs(15, 2)
    y = np.cos(5 * X[:, 0]) * X[:, 1]
    perm = np.random.default_rng(0).permutation(15)
    a, b = fit(X, y, UNIT2), fit(X[perm], y[perm], UNIT2)
    Q = np.random.default_rng(1).uniform(0, 1, (40, 2))
    ma, va = a.predict(Q)
    mb, vb = b.predict(Q)
    np.testing.assert_allclose(ma, mb, atol=1e-8)
    np.testing.assert_allclose(va, vb, atol=1e-8)


@pytest.mark.parametrize("scale, shift", [(3.0, -2.0), (-0.5, 10.0), (1e3, 1e3)])
def test_affine_equivariance(scale, shift):
    X = lhs(10, 3)
    y = np.sin(4 * X.sum(axis=1))
    m = fit(X, y, UNIT2)
    # standardization absorbs the affine map, so the same standardized hyperparameters apply
    ma = fit(X, scale * y + shift, UNIT2, params=m.params)
    Q = np.random.default_rng(2).uniform(0, 1, (30, 2))
    np.testing.assert_allclose(ma.predict(Q)[0], scale * m.predict(Q)[0] + shift, atol=1e-6 * max(1, abs(scale)))
    np.testing.assert_allclose(ma.predict(Q)[1], scale**2 * m.predict(Q)[1], rtol=1e-6, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 30), seed=st.integers(0, 10_000), problem=st.sampled_from(["hole", "noise"]))
def test_interpolation_property(n, seed, problem):
    X = lhs(n, seed)
    rng = np.random.default_rng(seed)
    y = HOLE1.evaluate(X * 2 - 1)[:, 0] if problem == "hole" else rng.normal(size=n)
    m = fit(X, y, UNIT2)
    mean, var = m.predict(X)
    assert np.max(np.abs(mean - y)) < 1e-6
    assert np.max(var) < 1e-6
    assert np.max(m.predict(rng.uniform(0, 1, (50, 2)))[1]) <= m.prior_variance + 1e-8


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 30), seed=st.integers(0, 10_000), amp=st.floats(0.1, 100))
def test_interpolation_residual_is_the_nugget_term(n, seed, amp):
    # For smooth targets the fitted lengthscale makes the Gram matrix nearly singular
    # and the 1e-8 nugget dominates the residual. It is exactly s2 * jitter * alpha.
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 1, (n, 2))
    y = amp * (X**2).sum(axis=1)
    m = fit(X, y, UNIT2)
    mean, _ = m.predict(m.X)
    nugget = m.y_scale * m.params.signal_variance * m.jitter * m._alpha
    np.testing.assert_allclose(m.y - mean, nugget, atol=1e-6 * amp, rtol=1e-3)


def test_duplicate_inputs_rejected():
    with pytest.raises(GPFitError, match="duplicate"):
        fit([[0.1, 0.2], [0.3, 0.3], [0.1, 0.2]], [1, 2, 3], UNIT2)


@pytest.mark.parametrize("bad", [np.nan, np.inf])
def test_nonfinite_targets_rejected(bad):
    with pytest.raises(GPFitError):
        fit([[0.1, 0.2], [0.3, 0.3]], [1.0, bad], UNIT2)


def test_constant_targets():
    X = lhs(6, 0)
    m = fit(X, np.full(6, 4.2), UNIT2)
    np.testing.assert_allclose(m.predict(X)[0], 4.2, atol=1e-9)


def test_kernel_params_validation():
    with pytest.raises(ValueError):
        KernelParams(-1.0, 1.0)
    with pytest.raises(ValueError):
        KernelParams(1.0, 0.0)
