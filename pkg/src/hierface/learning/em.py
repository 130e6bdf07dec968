"""Expectation and maximization steps for the hierarchical model."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .. import gauss
from ..component import ComponentMixture
from ..exceptions import DegenerateStateWarning, DimensionMismatch
from ..gauss import Gaussian, LinearGaussian
from ..model import EXPRESSION, POSE, HierarchicalModel, _z_table, state_node
from ..network import DiscreteNetwork

MIN_RESPONSIBILITY = 1e-6


@dataclass(frozen=True, eq=False)
class ZPosterior:
    """Per-sample posterior over the hidden-state configuration.

    Attributes
    ----------
    prob : ndarray of shape (n, K_1, ..., K_c)
        Joint posterior of the component states for each sample.
    log_norm : ndarray of shape (n,)
        ``ln P(e, p, x, xm)`` per sample under the model that produced it.
    """

    prob: np.ndarray
    log_norm: np.ndarray

    def __len__(self):
        return self.prob.shape[0]

    def component_marginal(self, j):
        axes = tuple(a for a in range(1, self.prob.ndim) if a != j + 1)
        return self.prob.sum(axis=axes) if axes else self.prob

    def entropy(self):
        p = self.prob.reshape(len(self), -1)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(p > 0, p * np.log(p), 0.0)
        return float(-terms.sum())

    @classmethod
    def from_assignments(cls, assignments, cards):
        """One-hot posterior from hard state labels (one array per component)."""
        n = len(assignments[0])
        prob = np.zeros((n,) + tuple(cards))
        prob[(np.arange(n),) + tuple(np.asarray(a) for a in assignments)] = 1.0
        return cls(prob, np.full(n, np.nan))


@dataclass(frozen=True)
class ScoreReport:
    """Expected BIC of a model under a set of posteriors.

    ``expected_bic = expected_loglik - (ln n / 2) * dim``.  ``entropy`` is the
    total entropy of the posteriors; when those posteriors are exact for the
    scored model, ``expected_bic + entropy`` equals the BIC of the observed
    data, which parameter EM never decreases.
    """

    expected_bic: float
    expected_loglik: float
    penalty: float
    dim: int
    n: int
    entropy: float = 0.0

    @property
    def marginal_bic(self):
        return self.expected_bic + self.entropy

    def as_dict(self):
        return {
            "expected_bic": self.expected_bic,
            "expected_loglik": self.expected_loglik,
            "penalty": self.penalty,
            "dim": self.dim,
            "n": self.n,
            "entropy": self.entropy,
            "marginal_bic": self.marginal_bic,
        }


def _check_dims(model, dataset):
    if model.partition != dataset.partition:
        raise DimensionMismatch("model and dataset use different component partitions")
    if model.cardinalities != dataset.cardinalities:
        raise DimensionMismatch(
            f"model cardinalities {model.cardinalities} differ from dataset {dataset.cardinalities}"
        )


def e_step(model, dataset):
    """Exact posterior over hidden states with labels, truth and measurement observed."""
    _check_dims(model, dataset)
    lik = model.component_likelihoods(dataset.truth, dataset.measurement)
    table = _z_table(model, lik, dataset.expression, dataset.pose)
    flat = table.reshape(table.shape[0], -1)
    norm = gauss.logsumexp(flat, axis=1)
    prob = np.exp(table - norm.reshape((-1,) + (1,) * (table.ndim - 1)))
    return ZPosterior(prob, norm)


def expected_counts(dataset, posterior, cards):
    """Expected joint counts over ``(E, P, Z_1, ..., Z_c)``."""
    counts = np.zeros(tuple(cards))
    e, p = dataset.expression, dataset.pose
    keys = e * cards[1] + p
    for key in np.unique(keys):
        sel = keys == key
        counts[key // cards[1], key % cards[1]] += posterior.prob[sel].sum(axis=0)
    return counts


def family_counts(counts, nodes, node, parents):
    """Marginalize a full count tensor onto ``(parents..., node)``."""
    idx = {n: i for i, n in enumerate(nodes)}
    fam = [idx[p] for p in parents] + [idx[node]]
    other = tuple(i for i in range(counts.ndim) if i not in fam)
    marg = counts.sum(axis=other) if other else counts
    order = np.argsort(np.argsort(fam))
    return np.transpose(marg, order)


def smoothed_cpt(fcounts, pseudocount):
    card = fcounts.shape[-1]
    num = fcounts + pseudocount
    return num / (fcounts.sum(axis=-1, keepdims=True) + pseudocount * card)


def floor_eigenvalues(cov, floor):
    """Closest matrix (in the maximum-likelihood sense) with eigenvalues >= floor."""
    cov = gauss.symmetrize(cov)
    w, v = np.linalg.eigh(cov)
    if w.min() >= floor:
        return cov
    return gauss.symmetrize((v * np.maximum(w, floor)) @ v.T)


def fit_state_parameters(x, xm, resp, beta_tied, cov_floor, previous=None):
    """Weighted maximum-likelihood shape and measurement parameters per state.

    Parameters
    ----------
    x, xm : ndarray of shape (n, d)
    resp : ndarray of shape (n, K)
        State responsibilities.
    previous : ComponentMixture, optional
        Source of parameters for states whose total responsibility is below
        ``MIN_RESPONSIBILITY``.

    Returns
    -------
    shapes, measurements : tuple
    degenerate : list of int
        States whose parameters were carried over.
    """
    n, d = x.shape
    k = resp.shape[1]
    shapes, meas, degenerate = [], [], []
    ones = np.ones((n, 1))
    design = np.hstack([ones, x])
    for z in range(k):
        w = resp[:, z]
        nk = w.sum()
        if nk < MIN_RESPONSIBILITY:
            if previous is None:
                raise ValueError(f"state {z} has no support and no previous parameters")
            degenerate.append(z)
            shapes.append(previous.shapes[z])
            meas.append(previous.measurements[z])
            continue
        mu = w @ x / nk
        dx = x - mu
        sigma = floor_eigenvalues((dx * w[:, None]).T @ dx / nk, cov_floor)
        if beta_tied:
            offset = np.zeros(d)
            gain = np.eye(d)
            resid = xm - x
        else:
            sw = np.sqrt(w)[:, None]
            coef, *_ = np.linalg.lstsq(design * sw, xm * sw, rcond=None)
            offset = coef[0]
            gain = coef[1:].T
            resid = xm - design @ coef
        q = floor_eigenvalues((resid * w[:, None]).T @ resid / nk, cov_floor)
        shapes.append(Gaussian(mu, sigma))
        meas.append(LinearGaussian(offset, gain, q))
    return tuple(shapes), tuple(meas), degenerate


def m_step(dataset, posterior, parents, *, beta_tied=True, pseudocount=1e-3,
           cov_floor=1e-6, previous=None, metadata=None):
    """Closed-form parameter update for a fixed network structure.

    ``parents`` maps node name to its parent names.  The number of states
    of each component is read from the posterior.  Returns the new
    :class:`HierarchicalModel` and the list of ``(component, state)`` pairs
    that were too weakly supported to update.
    """
    part = dataset.partition
    comps = part.components
    z_cards = posterior.prob.shape[1:]
    cards = tuple(dataset.cardinalities) + tuple(z_cards)
    nodes = (EXPRESSION, POSE) + tuple(state_node(c) for c in comps)
    counts = expected_counts(dataset, posterior, cards)
    cpts = {}
    for node in nodes:
        ps = tuple(sorted(parents.get(node, ()), key=nodes.index))
        cpts[node] = smoothed_cpt(family_counts(counts, nodes, node, ps), pseudocount)
    network = DiscreteNetwork(nodes, cards, parents, cpts)

    components = {}
    degenerate = []
    for j, c in enumerate(comps):
        resp = posterior.component_marginal(j)
        x = part.extract(dataset.truth, c)
        xm = part.extract(dataset.measurement, c)
        prev = previous.components[c] if previous is not None else None
        shapes, meas, bad = fit_state_parameters(x, xm, resp, beta_tied, cov_floor, prev)
        for z in bad:
            warnings.warn(f"state {z} of {c} has negligible responsibility; keeping previous parameters",
                          DegenerateStateWarning, stacklevel=2)
            degenerate.append((c, z))
        nk = resp.sum(axis=0) + pseudocount
        log_prior = np.log(nk / nk.sum())
        components[c] = ComponentMixture(log_prior, shapes, meas)
    meta = dict(previous.metadata) if previous is not None and metadata is None else dict(metadata or {})
    return HierarchicalModel(network, components, part, meta), degenerate


def model_dimension(model, beta_tied=True):
    return model.network.num_parameters() + sum(
        cm.num_parameters(beta_tied) for cm in model.components.values()
    )


def expected_bic(model, dataset, posterior, beta_tied=True):
    """Expected complete-data log likelihood minus the BIC penalty."""
    _check_dims(model, dataset)
    cards = model.network.cards
    counts = expected_counts(dataset, posterior, cards)
    logj = model.network.log_joint_table
    discrete = float(np.sum(np.where(counts > 0, counts * logj, 0.0)))
    lik = model.component_likelihoods(dataset.truth, dataset.measurement)
    continuous = 0.0
    for j, ll in enumerate(lik):
        continuous += float(np.sum(posterior.component_marginal(j) * ll))
    n = len(dataset)
    dim = model_dimension(model, beta_tied)
    penalty = 0.5 * np.log(n) * dim
    ell = discrete + continuous
    return ScoreReport(ell - penalty, ell, float(penalty), int(dim), n, posterior.entropy())
