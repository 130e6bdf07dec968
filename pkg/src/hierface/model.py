"""The full hierarchical model: discrete network joined with component mixtures.

Inference enumerates every joint configuration of the discrete nodes.  With
six nodes of small cardinality the table has at most a few tens of
thousands of entries, so this is exact and cheap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gauss
from .component import ComponentMixture
from .exceptions import CardinalityMismatch, DimensionMismatch, HierfaceError, IndexOutOfRange, ParseError, SchemaViolation
from .gauss import Gaussian, LinearGaussian, WeightedGaussianMixture
from .network import DiscreteNetwork, restrict
from .shapes import ComponentPartition, Normalization, as_points

EXPRESSION = "E"
POSE = "P"
_NODE_NAMES = {"eyebrow": "Z_eb", "eye": "Z_e", "nose": "Z_n", "mouth": "Z_m"}
MODEL_FORMAT = "hierface-model"
MODEL_VERSION = 1
_CHUNK_ENTRIES = 4_000_000


def state_node(component):
    """Name of the hidden-state node of a component (``mouth`` -> ``Z_m``)."""
    return _NODE_NAMES.get(component, f"Z_{component}")


def node_names(partition):
    return (EXPRESSION, POSE) + tuple(state_node(c) for c in partition.components)


@dataclass(frozen=True, eq=False)
class HierarchicalModel:
    network: DiscreteNetwork
    components: dict
    partition: ComponentPartition
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        comps = dict(self.components)
        if tuple(comps) != self.partition.components:
            comps = {c: comps[c] for c in self.partition.components}
        expected = node_names(self.partition)
        if self.network.nodes != expected:
            raise DimensionMismatch(f"network nodes {self.network.nodes} do not match {expected}")
        for c, cm in comps.items():
            if cm.num_states != self.network.card(state_node(c)):
                raise CardinalityMismatch(
                    f"component {c!r} has {cm.num_states} states but node {state_node(c)} "
                    f"has cardinality {self.network.card(state_node(c))}"
                )
            if cm.dim != self.partition.dim(c):
                raise DimensionMismatch(f"component {c!r} has dimension {cm.dim}, partition needs {self.partition.dim(c)}")
        object.__setattr__(self, "components", comps)

    @property
    def cardinalities(self):
        return self.network.card(EXPRESSION), self.network.card(POSE)

    @property
    def state_nodes(self):
        return tuple(state_node(c) for c in self.partition.components)

    @property
    def normalization(self):
        meta = self.metadata.get("normalization")
        return Normalization(**meta) if meta else Normalization()

    def with_network(self, network):
        return HierarchicalModel(network, self.components, self.partition, self.metadata)

    def component_evidence(self, xm):
        """Per-component state evidence ``ln P(xm_i | z_i)``, each ``(n, K_i)``."""
        xm = as_points(xm, self.partition.num_points).reshape(-1, self.partition.num_points, 2)
        return [cm.state_evidence(self.partition.extract(xm, c)) for c, cm in self.components.items()]

    def component_likelihoods(self, x, xm):
        """Per-component ``ln P(x_i, xm_i | z_i)`` with ``x`` observed, each ``(n, K_i)``."""
        p = self.partition.num_points
        x = as_points(x, p).reshape(-1, p, 2)
        xm = as_points(xm, p).reshape(-1, p, 2)
        return [cm.state_log_likelihoods(self.partition.extract(x, c), self.partition.extract(xm, c))
                for c, cm in self.components.items()]


@dataclass(frozen=True, eq=False)
class DiscretePosterior:
    """Normalized log posterior over joint configurations, axes in node order."""

    nodes: tuple
    table: np.ndarray

    def marginal(self, node):
        i = self.nodes.index(node)
        other = tuple(a for a in range(self.table.ndim) if a != i)
        return np.exp(gauss.logsumexp(self.table, axis=other))

    def joint(self, a, b):
        ia, ib = self.nodes.index(a), self.nodes.index(b)
        other = tuple(k for k in range(self.table.ndim) if k not in (ia, ib))
        m = np.exp(gauss.logsumexp(self.table, axis=other))
        return m if ia < ib else m.T


@dataclass(frozen=True, eq=False)
class Detection:
    estimate: np.ndarray
    mixtures: dict
    discrete: DiscretePosterior
    log_evidence: float


@dataclass(frozen=True, eq=False)
class BatchInference:
    """Inference results for many measurements at once.

    ``estimate_mean`` is the moment-matched posterior mean, ``estimate_mode``
    the posterior mean of each component's highest-weight state.
    """

    estimate_mean: np.ndarray
    estimate_mode: np.ndarray
    state_marginals: dict
    log_evidence: np.ndarray

    def estimate(self, policy="mean"):
        if policy == "mean":
            return self.estimate_mean
        if policy == "mode":
            return self.estimate_mode
        raise ValueError(f"unknown estimate policy {policy!r}")


def _clamp_dict(clamp):
    if not clamp:
        return None
    return {k: v for k, v in clamp.items() if v is not None} or None


def _config_log_joint(model, evidence, clamp=None):
    """Unnormalized log posterior tables for a batch, shape ``(n, *cards)``."""
    net = model.network
    table = net.log_joint_table[None]
    nz = len(evidence)
    for j, ev in enumerate(evidence):
        shape = [ev.shape[0]] + [1] * (2 + nz)
        shape[3 + j] = ev.shape[1]
        table = table + ev.reshape(shape)
    return restrict(table, net, _clamp_dict(clamp), leading=1)


def _chunks(n, per_sample):
    step = max(1, _CHUNK_ENTRIES // max(per_sample, 1))
    for start in range(0, n, step):
        yield slice(start, min(n, start + step))


def _check_xm(model, xm):
    p = model.partition.num_points
    return as_points(xm, p).reshape(-1, p, 2)


def posterior_over_configs(model, xm, clamp=None):
    """Exact posterior over ``(E, P, Z...)`` given one measured shape."""
    xm = _check_xm(model, xm)
    if xm.shape[0] != 1:
        raise DimensionMismatch("posterior_over_configs takes a single landmark set")
    table = _config_log_joint(model, model.component_evidence(xm), clamp)[0]
    return DiscretePosterior(model.network.nodes, table - gauss.logsumexp(table))


def log_evidence(model, xm, clamp=None):
    """``ln P(xm)``, or ``ln P(xm, clamp)`` when E and/or P are clamped.

    Accepts one shape or a batch; returns a float or an array of shape (n,).
    """
    single = as_points(xm, model.partition.num_points).ndim == 2
    xm = _check_xm(model, xm)
    evidence = model.component_evidence(xm)
    out = np.empty(xm.shape[0])
    per = int(np.prod(model.network.cards))
    for sl in _chunks(xm.shape[0], per):
        table = _config_log_joint(model, [ev[sl] for ev in evidence], clamp)
        out[sl] = gauss.logsumexp(table.reshape(table.shape[0], -1), axis=1)
    return float(out[0]) if single else out


def complete_log_likelihood(model, x, xm, expression, pose):
    """``ln P(e, p, x, xm)`` with the hidden states summed out (labels observed)."""
    lik = model.component_likelihoods(x, xm)
    e = np.atleast_1d(np.asarray(expression, dtype=np.int64))
    p = np.atleast_1d(np.asarray(pose, dtype=np.int64))
    table = _z_table(model, lik, e, p)
    out = gauss.logsumexp(table.reshape(table.shape[0], -1), axis=1)
    return float(out[0]) if np.ndim(expression) == 0 else out


def _z_table(model, lik, e, p):
    """Unnormalized log table over the Z nodes with labels clamped, ``(n, *K)``."""
    cE, cP = model.cardinalities
    if np.any((e < 0) | (e >= cE)) or np.any((p < 0) | (p >= cP)):
        raise IndexOutOfRange("expression or pose label outside the model's cardinality")
    table = np.array(model.network.log_joint_table[e, p])
    nz = len(lik)
    for j, ll in enumerate(lik):
        shape = [ll.shape[0]] + [1] * nz
        shape[1 + j] = ll.shape[1]
        table = table + ll.reshape(shape)
    return table


def infer_batch(model, xm, clamp=None):
    """Posterior-mean and mode estimates plus state marginals for many shapes."""
    xm = _check_xm(model, xm)
    n = xm.shape[0]
    net = model.network
    evidence = model.component_evidence(xm)
    marg = {c: np.empty((n, cm.num_states)) for c, cm in model.components.items()}
    logev = np.empty(n)
    per = int(np.prod(net.cards))
    nz = len(evidence)
    for sl in _chunks(n, per):
        table = _config_log_joint(model, [ev[sl] for ev in evidence], clamp)
        flat = table.reshape(table.shape[0], -1)
        norm = gauss.logsumexp(flat, axis=1)
        logev[sl] = norm
        post = np.exp(table - norm.reshape((-1,) + (1,) * (table.ndim - 1)))
        for j, c in enumerate(model.components):
            axes = tuple(a for a in range(1, 3 + nz) if a != 3 + j)
            marg[c][sl] = post.sum(axis=axes)
    parts_mean, parts_mode = {}, {}
    for c, cm in model.components.items():
        means, _ = cm.posterior_means(model.partition.extract(xm, c))
        w = marg[c]
        parts_mean[c] = np.einsum("nk,nkd->nd", w, means)
        parts_mode[c] = means[np.arange(n), np.argmax(w, axis=1)]
    return BatchInference(
        model.partition.assemble(parts_mean),
        model.partition.assemble(parts_mode),
        marg,
        logev,
    )


def infer_landmarks(model, xm, policy="mean", clamp=None):
    """Estimate the true landmarks behind one measured shape.

    The posterior over each component is a Gaussian mixture whose weights are
    the marginal state posteriors.  ``policy="mean"`` returns the mixture
    mean; ``policy="mode"`` returns the mean of the highest-weight component.
    """
    if policy not in ("mean", "mode"):
        raise ValueError(f"unknown estimate policy {policy!r}")
    xm = _check_xm(model, xm)
    if xm.shape[0] != 1:
        raise DimensionMismatch("infer_landmarks takes a single landmark set")
    discrete = posterior_over_configs(model, xm, clamp)
    mixtures, parts = {}, {}
    for c, cm in model.components.items():
        w = discrete.marginal(state_node(c))
        xmc = model.partition.extract(xm[0], c)
        comps = [cm.posterior_given_state(xmc, z) for z in range(cm.num_states)]
        with np.errstate(divide="ignore"):
            mix = WeightedGaussianMixture.from_unnormalized(comps, np.log(w))
        mixtures[c] = mix
        if policy == "mean":
            parts[c] = gauss.mixture_collapse(mix).mean
        else:
            parts[c] = comps[int(np.argmax(w))].mean
    est = model.partition.assemble(parts)
    return Detection(est, mixtures, discrete, log_evidence(model, xm[0], clamp))


def query_state_given_label(model, z_node, clamp=None):
    """``P(z_node | clamp)`` from the discrete network alone (no measurements)."""
    if z_node not in model.network.index:
        raise IndexOutOfRange(f"unknown node {z_node!r}")
    return model.network.marginal([z_node], _clamp_dict(clamp))


def query_joint_states(model, a, b, clamp=None):
    for node in (a, b):
        if node not in model.network.index:
            raise IndexOutOfRange(f"unknown node {node!r}")
    return model.network.marginal([a, b], _clamp_dict(clamp))


# -- serialization ------------------------------------------------------------

def model_to_dict(model):
    # lists, not dicts, so component order survives key sorting
    comps = []
    for c, cm in model.components.items():
        comps.append({
            "name": c,
            "node": state_node(c),
            "log_prior": cm.log_prior.tolist(),
            "states": [
                {
                    "mean": g.mean.tolist(),
                    "cov": g.cov.tolist(),
                    "offset": m.offset.tolist(),
                    "gain": m.gain.tolist(),
                    "noise_cov": m.noise_cov.tolist(),
                }
                for g, m in zip(cm.shapes, cm.measurements)
            ],
        })
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "partition": [[c, list(idx)] for c, idx in model.partition.groups.items()],
        "network": model.network.to_dict(),
        "components": comps,
        "metadata": model.metadata,
    }


def model_from_dict(d):
    if d.get("format") != MODEL_FORMAT:
        raise SchemaViolation(f"not a model document (format={d.get('format')!r})")
    try:
        partition = ComponentPartition(d["partition"])
        network = DiscreteNetwork.from_dict(d["network"])
        comps = {}
        for cd in d["components"]:
            c = cd["name"]
            states = cd["states"]
            comps[c] = ComponentMixture(
                np.asarray(cd["log_prior"], dtype=float),
                tuple(Gaussian(s["mean"], s["cov"]) for s in states),
                tuple(LinearGaussian(s["offset"], s["gain"], s["noise_cov"]) for s in states),
            )
    except KeyError as exc:
        raise SchemaViolation(f"model document is missing field {exc}") from exc
    except HierfaceError:
        raise
    except (TypeError, ValueError) as exc:
        raise SchemaViolation(f"malformed model document: {exc}") from exc
    return HierarchicalModel(network, comps, partition, d.get("metadata", {}))


def dumps_model(model):
    return json.dumps(model_to_dict(model), indent=1, sort_keys=True) + "\n"


def save_model(model, path):
    """Write the model as JSON; floats use shortest round-trip repr so reload is exact."""
    Path(path).write_text(dumps_model(model))


def load_model(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ParseError(f"cannot read model file {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc.msg})") from exc
    return model_from_dict(doc)


def models_equal(a, b):
    return model_to_dict(a) == model_to_dict(b)
