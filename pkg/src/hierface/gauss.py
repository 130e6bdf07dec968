"""Multivariate Gaussian and linear-Gaussian algebra.

Everything here works in log space and factorizes covariances with Cholesky;
no explicit inverses or determinants are formed.  Functions that take an
observation accept either a single vector of shape ``(d,)`` or a batch of
row vectors of shape ``(n, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg

from .exceptions import DimensionMismatch, EmptyInput, NotPositiveDefinite

__all__ = [
    "Gaussian",
    "LinearGaussian",
    "WeightedGaussianMixture",
    "cholesky",
    "log_density",
    "marginal_likelihood",
    "posterior_update",
    "kalman_gain",
    "sample",
    "mixture_collapse",
    "logsumexp",
    "symmetrize",
]

LOG_2PI = np.log(2.0 * np.pi)
RIDGE_REL = 1e-8
_RIDGE_STEPS = 8


def symmetrize(a):
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def _check_symmetric(a, name):
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {a.shape}")
    tol = 1e-12 * np.maximum(1.0, np.abs(a))
    if np.any(np.abs(a - a.T) > tol):
        raise ValueError(f"{name} is not symmetric")


def cholesky(cov):
    """Lower Cholesky factor of ``cov``, regularized only when needed.

    A plain factorization is tried first.  If it fails, a ridge
    ``eps * I`` with ``eps = 1e-8 * trace(cov) / d`` is added and grown by
    factors of ten until the factorization succeeds.

    Raises
    ------
    NotPositiveDefinite
        If no ridge in the ladder makes the matrix factorizable.
    """
    cov = np.asarray(cov, dtype=float)
    if not np.all(np.isfinite(cov)):
        raise NotPositiveDefinite("covariance has non-finite entries")
    try:
        return linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError:
        pass
    d = cov.shape[0]
    scale = np.trace(cov) / d
    if not scale > 0:
        scale = 1.0
    eye = np.eye(d)
    for step in range(_RIDGE_STEPS):
        eps = RIDGE_REL * scale * 10.0**step
        try:
            return linalg.cholesky(cov + eps * eye, lower=True)
        except linalg.LinAlgError:
            continue
    raise NotPositiveDefinite("covariance is not positive definite even after regularization")


@dataclass(frozen=True, eq=False)
class Gaussian:
    """Multivariate normal ``N(mean, cov)``."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        _check_symmetric(cov, "cov")
        if cov.shape[0] != mean.shape[0]:
            raise DimensionMismatch(
                f"mean has dimension {mean.shape[0]} but cov is {cov.shape}"
            )
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self):
        return self.mean.shape[0]

    @cached_property
    def chol(self):
        return cholesky(self.cov)

    def __repr__(self):
        return f"Gaussian(dim={self.dim})"


@dataclass(frozen=True, eq=False)
class LinearGaussian:
    """Conditional Gaussian ``N(offset + gain @ x, noise_cov)``."""

    offset: np.ndarray
    gain: np.ndarray
    noise_cov: np.ndarray

    def __post_init__(self):
        offset = np.array(self.offset, dtype=float).reshape(-1)
        gain = np.array(self.gain, dtype=float)
        if gain.ndim != 2:
            gain = gain.reshape(offset.shape[0], -1)
        noise = np.array(self.noise_cov, dtype=float)
        if noise.ndim == 0:
            noise = noise.reshape(1, 1)
        _check_symmetric(noise, "noise_cov")
        if gain.shape[0] != offset.shape[0] or noise.shape[0] != offset.shape[0]:
            raise DimensionMismatch(
                f"inconsistent shapes: offset {offset.shape}, gain {gain.shape}, "
                f"noise_cov {noise.shape}"
            )
        for a in (offset, gain, noise):
            a.flags.writeable = False
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "gain", gain)
        object.__setattr__(self, "noise_cov", noise)

    @property
    def dim_in(self):
        return self.gain.shape[1]

    @property
    def dim_out(self):
        return self.gain.shape[0]

    @cached_property
    def chol(self):
        return cholesky(self.noise_cov)

    def predict(self, x):
        """Mean of the output for input(s) ``x``."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim_in:
            raise DimensionMismatch(f"expected input dimension {self.dim_in}, got {x.shape[-1]}")
        return self.offset + x @ self.gain.T

    def log_density(self, x, y):
        """``ln N(y; offset + gain x, noise_cov)`` for matching rows of x and y."""
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != self.dim_out:
            raise DimensionMismatch(f"expected output dimension {self.dim_out}, got {y.shape[-1]}")
        return _centered_log_density(self.chol, y - self.predict(x))

    def __repr__(self):
        return f"LinearGaussian({self.dim_in} -> {self.dim_out})"


@dataclass(frozen=True, eq=False)
class WeightedGaussianMixture:
    """Finite mixture of Gaussians with normalized log weights."""

    components: tuple
    log_weights: np.ndarray

    def __post_init__(self):
        comps = tuple(self.components)
        lw = np.array(self.log_weights, dtype=float).reshape(-1)
        if not comps:
            raise EmptyInput("mixture needs at least one component")
        if len(comps) != lw.shape[0]:
            raise DimensionMismatch("one log weight per component required")
        if len({c.dim for c in comps}) != 1:
            raise DimensionMismatch("mixture components differ in dimension")
        if abs(logsumexp(lw)) > 1e-10:
            raise ValueError("log weights are not normalized")
        lw.flags.writeable = False
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "log_weights", lw)

    @classmethod
    def from_unnormalized(cls, components, log_weights):
        lw = np.asarray(log_weights, dtype=float)
        return cls(components, lw - logsumexp(lw))

    @property
    def dim(self):
        return self.components[0].dim

    @property
    def weights(self):
        return np.exp(self.log_weights)


def _centered_log_density(chol, resid):
    d = chol.shape[0]
    resid = np.asarray(resid, dtype=float)
    z = linalg.solve_triangular(chol, np.atleast_2d(resid).T, lower=True, check_finite=False)
    maha = np.sum(z * z, axis=0)
    out = -0.5 * maha - np.sum(np.log(np.diag(chol))) - 0.5 * d * LOG_2PI
    return out[0] if resid.ndim == 1 else out


def log_density(g, x):
    """Log density of ``g`` at ``x``.

    Parameters
    ----------
    g : Gaussian
    x : array-like, shape (d,) or (n, d)

    Returns
    -------
    float or ndarray of shape (n,)
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != g.dim or x.ndim > 2:
        raise DimensionMismatch(f"expected dimension {g.dim}, got shape {x.shape}")
    return _centered_log_density(g.chol, x - g.mean)


def marginal_likelihood(prior, lik):
    """Distribution of the output after integrating the input out.

    Returns ``N(offset + gain mean, gain cov gain^T + noise_cov)``.
    """
    if lik.dim_in != prior.dim:
        raise DimensionMismatch(
            f"likelihood expects input dimension {lik.dim_in}, prior has {prior.dim}"
        )
    mean = lik.offset + lik.gain @ prior.mean
    cov = lik.gain @ prior.cov @ lik.gain.T + lik.noise_cov
    return Gaussian(mean, symmetrize(cov))


def kalman_gain(prior, lik):
    """Gain matrix and posterior covariance for conditioning on the output.

    The covariance uses the Joseph form, which stays symmetric positive
    semi-definite for badly scaled noise.
    """
    if lik.dim_in != prior.dim:
        raise DimensionMismatch(
            f"likelihood expects input dimension {lik.dim_in}, prior has {prior.dim}"
        )
    pred = marginal_likelihood(prior, lik)
    cross = lik.gain @ prior.cov  # (d_out, d_in)
    gain = linalg.cho_solve((pred.chol, True), cross, check_finite=False).T
    a = np.eye(prior.dim) - gain @ lik.gain
    cov = a @ prior.cov @ a.T + gain @ lik.noise_cov @ gain.T
    return gain, symmetrize(cov), pred


def posterior_update(prior, lik, obs):
    """Posterior over the input after observing ``obs``."""
    obs = np.asarray(obs, dtype=float).reshape(-1)
    if obs.shape[0] != lik.dim_out:
        raise DimensionMismatch(f"observation has dimension {obs.shape[0]}, expected {lik.dim_out}")
    gain, cov, pred = kalman_gain(prior, lik)
    mean = prior.mean + gain @ (obs - pred.mean)
    post = Gaussian(mean, cov)
    post.chol  # fail early if not factorizable
    return post


def sample(g, n, seed):
    """Draw ``n`` samples from ``g``; returns an array of shape ``(n, d)``."""
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, g.dim))
    return g.mean + z @ g.chol.T


def mixture_collapse(m):
    """Moment-matched single Gaussian of a mixture."""
    w = m.weights
    means = np.stack([c.mean for c in m.components])
    mean = w @ means
    diff = means - mean
    cov = sum(wk * (c.cov + np.outer(dk, dk)) for wk, c, dk in zip(w, m.components, diff))
    return Gaussian(mean, symmetrize(cov))


def logsumexp(values, axis=None):
    """Overflow-safe ``log(sum(exp(values)))``."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise EmptyInput("logsumexp of an empty array")
    vmax = np.max(v, axis=axis, keepdims=True)
    vmax = np.where(np.isfinite(vmax), vmax, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(v - vmax), axis=axis, keepdims=True)) + vmax
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)
