import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from hierface import gauss
from hierface.exceptions import DimensionMismatch, EmptyInput, NotPositiveDefinite
from hierface.gauss import Gaussian, LinearGaussian, WeightedGaussianMixture

from conftest import random_spd


def _instance(seed, d_in, d_out):
    rng = np.random.default_rng(seed)
    prior = Gaussian(rng.normal(size=d_in), random_spd(rng, d_in))
    lik = LinearGaussian(rng.normal(size=d_out), rng.normal(size=(d_out, d_in)), random_spd(rng, d_out, 0.5))
    return rng, prior, lik


# -- log_density ----------------------------------------------------------------

def test_log_density_standard_normal():
    assert gauss.log_density(Gaussian([0.0], [[1.0]]), [0.0]) == pytest.approx(-0.9189385332046727, abs=1e-12)
    assert gauss.log_density(Gaussian([0.0, 0.0], np.eye(2)), [0.0, 0.0]) == pytest.approx(-1.8378770664093453, abs=1e-12)


def test_log_density_hand_computed_2d():
    # det = 2 - 0.25 = 1.75; r = (-1, -2); r' inv r = (1 - 2 + 8) / 1.75 = 4
    expected = -np.log(2 * np.pi) - 0.5 * np.log(1.75) - 0.5 * 4.0
    g = Gaussian([1.0, 2.0], [[2.0, 0.5], [0.5, 1.0]])
    assert gauss.log_density(g, [0.0, 0.0]) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(-4.117684960377057, abs=1e-12)


def test_log_density_batch_matches_single(rng):
    g = Gaussian(rng.normal(size=3), random_spd(rng, 3))
    xs = rng.normal(size=(5, 3))
    batch = gauss.log_density(g, xs)
    assert batch.shape == (5,)
    for x, v in zip(xs, batch):
        assert gauss.log_density(g, x) == pytest.approx(v, abs=1e-13)


def test_log_density_errors():
    with pytest.raises(DimensionMismatch):
        gauss.log_density(Gaussian([0.0, 0.0], np.eye(2)), [0.0, 0.0, 0.0])
    with pytest.raises(NotPositiveDefinite):
        gauss.log_density(Gaussian([0.0, 0.0], -np.eye(2)), [0.0, 0.0])


def test_density_integrates_to_one_1d():
    g = Gaussian([0.3], [[0.7]])
    s = np.sqrt(0.7)
    val, _ = integrate.quad(lambda t: np.exp(gauss.log_density(g, [t])), 0.3 - 8 * s, 0.3 + 8 * s)
    assert val == pytest.approx(1.0, abs=1e-3)


def test_density_integrates_to_one_2d():
    g = Gaussian([0.5, -1.0], [[1.0, 0.4], [0.4, 0.5]])
    sd = np.sqrt(np.diag(g.cov))
    t0 = np.linspace(g.mean[0] - 8 * sd[0], g.mean[0] + 8 * sd[0], 801)
    t1 = np.linspace(g.mean[1] - 8 * sd[1], g.mean[1] + 8 * sd[1], 801)
    a, b = np.meshgrid(t0, t1, indexing="ij")
    dens = np.exp(gauss.log_density(g, np.stack([a.ravel(), b.ravel()], axis=1))).reshape(a.shape)
    val = integrate.trapezoid(integrate.trapezoid(dens, t1, axis=1), t0)
    assert val == pytest.approx(1.0, abs=1e-3)


def test_cholesky_regularizes_singular_psd():
    cov = np.array([[1.0, 1.0], [1.0, 1.0]])
    L = gauss.cholesky(cov)
    assert np.allclose(L @ L.T, cov, atol=1e-6)


def test_cholesky_leaves_well_conditioned_matrix_alone(rng):
    cov = random_spd(rng, 4)
    L = gauss.cholesky(cov)
    assert np.array_equal(L, np.linalg.cholesky(cov))


def test_gaussian_rejects_asymmetric():
    with pytest.raises(ValueError):
        Gaussian([0.0, 0.0], [[1.0, 0.2], [0.0, 1.0]])


# -- marginal_likelihood ----------------------------------------------------------

def test_marginal_likelihood_additive_noise(rng):
    prior = Gaussian(rng.normal(size=3), random_spd(rng, 3))
    q = random_spd(rng, 3, 0.1)
    m = gauss.marginal_likelihood(prior, LinearGaussian(np.zeros(3), np.eye(3), q))
    assert np.allclose(m.mean, prior.mean)
    assert np.allclose(m.cov, prior.cov + q)


def test_marginal_likelihood_constant_map(rng):
    prior = Gaussian(rng.normal(size=2), random_spd(rng, 2))
    q = random_spd(rng, 2, 0.1)
    b = np.array([3.0, -1.0])
    m = gauss.marginal_likelihood(prior, LinearGaussian(b, np.zeros((2, 2)), q))
    assert np.array_equal(m.mean, b)
    assert np.allclose(m.cov, q)


def test_marginal_likelihood_monte_carlo():
    rng, prior, lik = _instance(3, 2, 2)
    n = 10**6
    x = gauss.sample(prior, n, 1)
    y = lik.predict(x) + gauss.sample(Gaussian(np.zeros(2), lik.noise_cov), n, 2)
    m = gauss.marginal_likelihood(prior, lik)
    assert np.max(np.abs(y.mean(axis=0) - m.mean)) < 1e-2
    assert np.max(np.abs(np.cov(y.T) - m.cov)) < 1e-2


def test_marginal_likelihood_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        gauss.marginal_likelihood(Gaussian([0.0], [[1.0]]), LinearGaussian([0.0], np.ones((1, 2)), [[1.0]]))


# -- posterior_update ---------------------------------------------------------------

def test_posterior_uninformative_measurement(rng):
    prior = Gaussian(rng.normal(size=2), random_spd(rng, 2))
    lik = LinearGaussian(np.zeros(2), np.eye(2), 1e12 * np.eye(2))
    post = gauss.posterior_update(prior, lik, [5.0, -5.0])
    assert np.allclose(post.mean, prior.mean, rtol=1e-4, atol=1e-4)
    assert np.allclose(post.cov, prior.cov, rtol=1e-4)


def test_posterior_exact_measurement(rng):
    prior = Gaussian(rng.normal(size=2), random_spd(rng, 2))
    lik = LinearGaussian(np.zeros(2), np.eye(2), 1e-12 * np.eye(2))
    obs = np.array([0.7, -0.2])
    post = gauss.posterior_update(prior, lik, obs)
    assert np.max(np.abs(post.mean - obs)) < 1e-4


def test_posterior_scalar_example_quadrature():
    prior = Gaussian([0.0], [[1.0]])
    lik = LinearGaussian([0.0], [[1.0]], [[1.0]])
    post = gauss.posterior_update(prior, lik, [2.0])
    assert post.mean[0] == pytest.approx(1.0, abs=1e-12)
    assert post.cov[0, 0] == pytest.approx(0.5, abs=1e-12)
    # oracle: moments of the normalized product density on a grid
    t = np.linspace(-10, 12, 200001)
    w = np.exp(-0.5 * t**2 - 0.5 * (2.0 - t) ** 2)
    z = integrate.trapezoid(w, t)
    mean = integrate.trapezoid(t * w, t) / z
    var = integrate.trapezoid((t - mean) ** 2 * w, t) / z
    assert mean == pytest.approx(post.mean[0], abs=1e-3)
    assert var == pytest.approx(post.cov[0, 0], abs=1e-3)


def test_posterior_dimension_mismatch():
    prior = Gaussian([0.0, 0.0], np.eye(2))
    lik = LinearGaussian(np.zeros(2), np.eye(2), np.eye(2))
    with pytest.raises(DimensionMismatch):
        gauss.posterior_update(prior, lik, [1.0, 2.0, 3.0])


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d_in=st.integers(1, 4), d_out=st.integers(1, 4))
def test_conditioning_consistency(seed, d_in, d_out):
    rng, prior, lik = _instance(seed, d_in, d_out)
    obs = rng.normal(size=d_out) * 2
    x = rng.normal(size=d_in) * 2
    evidence = gauss.log_density(gauss.marginal_likelihood(prior, lik), obs)
    post = gauss.log_density(gauss.posterior_update(prior, lik, obs), x)
    joint = gauss.log_density(prior, x) + lik.log_density(x, obs)
    assert evidence + post == pytest.approx(joint, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 4))
def test_posterior_never_increases_uncertainty(seed, d):
    rng = np.random.default_rng(seed)
    prior = Gaussian(rng.normal(size=d), random_spd(rng, d))
    lik = LinearGaussian(rng.normal(size=d) * 0.1, np.eye(d), random_spd(rng, d, 0.3))
    post = gauss.posterior_update(prior, lik, rng.normal(size=d))
    np.linalg.cholesky(post.cov)
    np.linalg.cholesky(prior.cov - post.cov + 1e-10 * np.eye(d))


# -- sample -------------------------------------------------------------------------

def test_sample_mean_and_determinism():
    g = Gaussian([0.0, 0.0], np.eye(2))
    a = gauss.sample(g, 10**5, 42)
    assert np.max(np.abs(a.mean(axis=0))) < 0.02
    assert np.array_equal(a, gauss.sample(g, 10**5, 42))


def test_sample_covariance_4d(rng):
    g = Gaussian(rng.normal(size=4), random_spd(rng, 4))
    x = gauss.sample(g, 10**5, 9)
    rel = np.linalg.norm(np.cov(x.T) - g.cov) / np.linalg.norm(g.cov)
    assert rel < 0.05


# -- mixture_collapse ----------------------------------------------------------------

def test_collapse_single_component(rng):
    g = Gaussian(rng.normal(size=2), random_spd(rng, 2))
    out = gauss.mixture_collapse(WeightedGaussianMixture([g], [0.0]))
    assert np.array_equal(out.mean, g.mean)
    assert np.allclose(out.cov, g.cov, atol=0, rtol=1e-15)


def test_collapse_symmetric_pair():
    m = WeightedGaussianMixture([Gaussian([-1.0], [[1.0]]), Gaussian([1.0], [[1.0]])], np.log([0.5, 0.5]))
    out = gauss.mixture_collapse(m)
    assert out.mean[0] == pytest.approx(0.0, abs=1e-15)
    assert out.cov[0, 0] == pytest.approx(2.0, abs=1e-15)


def test_collapse_monte_carlo():
    rng = np.random.default_rng(5)
    comps = [Gaussian(rng.normal(size=2) * 2, random_spd(rng, 2)) for _ in range(3)]
    w = rng.dirichlet(np.ones(3))
    m = WeightedGaussianMixture(comps, np.log(w))
    n = 10**6
    labels = rng.choice(3, size=n, p=w)
    x = np.empty((n, 2))
    for k in range(3):
        sel = labels == k
        x[sel] = gauss.sample(comps[k], int(sel.sum()), 100 + k)
    out = gauss.mixture_collapse(m)
    assert np.max(np.abs(x.mean(axis=0) - out.mean)) < 1e-2
    assert np.max(np.abs(np.cov(x.T) - out.cov)) < 1e-2 * max(1.0, np.abs(out.cov).max())


def test_mixture_requires_normalized_weights():
    with pytest.raises(ValueError):
        WeightedGaussianMixture([Gaussian([0.0], [[1.0]])] * 2, [0.0, 0.0])


# -- logsumexp -----------------------------------------------------------------------

def test_logsumexp_examples():
    assert gauss.logsumexp([0.0]) == 0.0
    assert gauss.logsumexp([np.log(1.0), np.log(3.0)]) == pytest.approx(np.log(4.0), abs=1e-15)
    assert gauss.logsumexp([-1000.0, -1000.0]) == pytest.approx(-1000.0 + np.log(2.0), abs=1e-12)
    with pytest.raises(EmptyInput):
        gauss.logsumexp([])


@given(st.lists(st.floats(-500, 500), min_size=1, max_size=20), st.floats(-500, 500))
def test_logsumexp_shift(values, c):
    v = np.array(values)
    assert gauss.logsumexp(v + c) == pytest.approx(gauss.logsumexp(v) + c, abs=1e-9)
