"""Latent-state mixture model for a single facial component.

Each hidden state ``z`` carries a shape distribution ``P(x | z)`` and a
linear-Gaussian measurement model ``P(xm | x, z)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gauss
from .exceptions import DimensionMismatch, IndexOutOfRange
from .gauss import Gaussian, LinearGaussian


@dataclass(frozen=True, eq=False)
class ComponentMixture:
    """Shape and measurement parameters of one component over ``K`` states.

    Attributes
    ----------
    log_prior : ndarray of shape (K,)
        State prior, only used when the component is evaluated on its own
        (inside a full model the discrete network supplies it).
    shapes : tuple of Gaussian
        ``P(x | z)`` for each state.
    measurements : tuple of LinearGaussian
        ``P(xm | x, z)`` for each state.
    """

    log_prior: np.ndarray
    shapes: tuple
    measurements: tuple

    def __post_init__(self):
        lp = np.array(self.log_prior, dtype=float).reshape(-1)
        shapes = tuple(self.shapes)
        meas = tuple(self.measurements)
        if len(lp) < 1 or len(shapes) != len(lp) or len(meas) != len(lp):
            raise DimensionMismatch("log_prior, shapes and measurements must all have K entries")
        if abs(gauss.logsumexp(lp)) > 1e-10:
            raise ValueError("log_prior is not normalized")
        d = shapes[0].dim
        for g, m in zip(shapes, meas):
            if g.dim != d or m.dim_in != d or m.dim_out != d:
                raise DimensionMismatch("all states must share the component dimension")
        lp.flags.writeable = False
        object.__setattr__(self, "log_prior", lp)
        object.__setattr__(self, "shapes", shapes)
        object.__setattr__(self, "measurements", meas)

    @property
    def num_states(self):
        return len(self.shapes)

    @property
    def dim(self):
        return self.shapes[0].dim

    def __repr__(self):
        return f"ComponentMixture(num_states={self.num_states}, dim={self.dim})"

    def _check(self, a, name):
        a = np.asarray(a, dtype=float)
        if a.shape[-1] != self.dim or a.ndim > 2:
            raise DimensionMismatch(f"{name} must have trailing dimension {self.dim}, got {a.shape}")
        return a

    def _check_state(self, z):
        if not 0 <= z < self.num_states:
            raise IndexOutOfRange(f"state {z} outside 0..{self.num_states - 1}")

    def state_log_likelihoods(self, x, xm):
        """``ln P(x | z) + ln P(xm | x, z)`` for every state, shape ``(..., K)``."""
        x = self._check(x, "x")
        xm = self._check(xm, "xm")
        cols = [gauss.log_density(g, x) + m.log_density(x, xm) for g, m in zip(self.shapes, self.measurements)]
        return np.stack(cols, axis=-1)

    def joint_log_density(self, x, xm):
        return gauss.logsumexp(self.log_prior + self.state_log_likelihoods(x, xm), axis=-1)

    def responsibilities(self, x, xm):
        """Log posterior over states given ``x`` and ``xm``."""
        joint = self.log_prior + self.state_log_likelihoods(x, xm)
        return joint - gauss.logsumexp(joint, axis=-1)[..., None]

    def state_evidence(self, xm):
        """``ln P(xm | z)`` with the true shape integrated out, shape ``(..., K)``."""
        xm = self._check(xm, "xm")
        cols = [gauss.log_density(gauss.marginal_likelihood(g, m), xm)
                for g, m in zip(self.shapes, self.measurements)]
        return np.stack(cols, axis=-1)

    def posterior_given_state(self, xm, z):
        self._check_state(z)
        return gauss.posterior_update(self.shapes[z], self.measurements[z], self._check(xm, "xm"))

    def posterior_means(self, xm):
        """Posterior mean of ``x`` under every state for a batch of measurements.

        Returns an array of shape ``(n, K, d)``; the per-state posterior
        covariances do not depend on ``xm`` and are returned alongside as
        ``(K, d, d)``.
        """
        xm = np.atleast_2d(self._check(xm, "xm"))
        means = np.empty((xm.shape[0], self.num_states, self.dim))
        covs = np.empty((self.num_states, self.dim, self.dim))
        for z, (g, m) in enumerate(zip(self.shapes, self.measurements)):
            gain, cov, pred = gauss.kalman_gain(g, m)
            means[:, z] = g.mean + (xm - pred.mean) @ gain.T
            covs[z] = cov
        return means, covs

    def sample_state_shapes(self, z, n, seed):
        self._check_state(z)
        return gauss.sample(self.shapes[z], n, seed)

    def num_parameters(self, beta_tied=True):
        """Free continuous parameters per state times ``K`` (prior excluded)."""
        d = self.dim
        per_state = d + d * (d + 1) // 2 + d * (d + 1) // 2
        if not beta_tied:
            per_state += d + d * d
        return self.num_states * per_state


def identity_measurement(noise_cov):
    noise_cov = np.asarray(noise_cov, dtype=float)
    d = noise_cov.shape[0]
    return LinearGaussian(np.zeros(d), np.eye(d), noise_cov)


def make_component(means, shape_covs, noise_covs, log_prior=None, offsets=None, gains=None):
    """Build a :class:`ComponentMixture` from stacked per-state arrays."""
    means = np.asarray(means, dtype=float)
    k, d = means.shape
    if log_prior is None:
        log_prior = np.full(k, -np.log(k))
    offsets = np.zeros((k, d)) if offsets is None else np.asarray(offsets, dtype=float)
    gains = np.broadcast_to(np.eye(d), (k, d, d)) if gains is None else np.asarray(gains, dtype=float)
    shapes = tuple(Gaussian(means[z], shape_covs[z]) for z in range(k))
    meas = tuple(LinearGaussian(offsets[z], gains[z], noise_covs[z]) for z in range(k))
    return ComponentMixture(log_prior, shapes, meas)
