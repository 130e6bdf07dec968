"""Synthetic ground truth: generator models and ancestral sampling from them."""

from __future__ import annotations

import numpy as np

from .component import make_component
from .model import EXPRESSION, POSE, HierarchicalModel, node_names, state_node
from .network import DiscreteNetwork
from .shapes import EXPRESSION_LABELS, POSE_LABELS, ComponentPartition, Dataset

# Rough frontal face in normalized units: eye centres at (-0.5, 0) and (0.5, 0),
# y grows downwards as in image coordinates.
TEMPLATE_FACE = np.array([
    # eyebrows, 4 per brow
    [-0.85, -0.35], [-0.65, -0.45], [-0.40, -0.45], [-0.20, -0.35],
    [0.20, -0.35], [0.40, -0.45], [0.65, -0.45], [0.85, -0.35],
    # eyes: outer corner, top, inner corner, bottom
    [-0.70, 0.00], [-0.50, -0.08], [-0.30, 0.00], [-0.50, 0.08],
    [0.30, 0.00], [0.50, -0.08], [0.70, 0.00], [0.50, 0.08],
    # nose
    [0.00, 0.30], [-0.18, 0.55], [0.00, 0.62], [0.18, 0.55],
    # mouth
    [-0.40, 1.00], [-0.15, 0.90], [0.15, 0.90], [0.40, 1.00], [0.15, 1.12], [-0.15, 1.12],
])

# Edges used by the structure-recovery experiments.
COUPLED_EDGES = (("E", "Z_m"), ("E", "Z_eb"), ("P", "Z_n"))

PRESETS = {
    "coupled": COUPLED_EDGES,
    "empty": (),
}


def strong_cpt(parent_cards, card, strength, offset=0):
    """CPT whose rows put ``strength`` on one state and spread the rest evenly.

    The favoured state for a parent configuration is the sum of the parent
    values (plus ``offset``) modulo ``card``, so distinct parent values favour
    distinct states.
    """
    parent_cards = tuple(parent_cards)
    table = np.empty(parent_cards + (card,))
    if card == 1:
        table[...] = 1.0
        return table
    rest = (1.0 - strength) / (card - 1)
    for cfg in np.ndindex(*parent_cards):
        row = np.full(card, rest)
        row[(sum(cfg) + offset) % card] = strength
        table[cfg] = row
    return table


def make_generator(
    edges=COUPLED_EDGES,
    n_expressions=3,
    n_poses=3,
    n_states=3,
    strength=0.85,
    state_spread=0.12,
    shape_sd=0.02,
    noise_sd=0.06,
    partition=None,
    seed=0,
):
    """Build a ground-truth :class:`HierarchicalModel` for synthetic experiments.

    Parameters
    ----------
    edges : iterable of (parent, child)
        Edges of the discrete network.  Nodes without parents get uniform
        tables; nodes with parents get :func:`strong_cpt` tables.
    n_states : int or dict
        Hidden-state count, either shared or per component.
    state_spread : float
        Scale of the per-state displacement of the template shape.
    shape_sd, noise_sd : float
        Standard deviations of the true-shape and measurement noise.
    """
    partition = partition or ComponentPartition.default()
    rng = np.random.default_rng(seed)
    nodes = node_names(partition)
    if isinstance(n_states, dict):
        ks = [int(n_states[c]) for c in partition.components]
    else:
        ks = [int(n_states)] * len(partition.components)
    cards = (n_expressions, n_poses) + tuple(ks)
    parents = {n: [] for n in nodes}
    for p, c in edges:
        parents[c].append(p)
    index = {n: i for i, n in enumerate(nodes)}
    cpts = {}
    for i, n in enumerate(nodes):
        ps = sorted(parents[n], key=index.__getitem__)
        parents[n] = ps
        if ps:
            cpts[n] = strong_cpt([cards[index[p]] for p in ps], cards[i], strength, offset=i)
        else:
            cpts[n] = np.full(cards[i], 1.0 / cards[i])
    network = DiscreteNetwork(nodes, cards, parents, cpts)

    template = _template(partition)
    components = {}
    for c, k in zip(partition.components, ks):
        base = partition.extract(template, c)
        d = base.shape[0]
        means = np.empty((k, d))
        for z in range(k):
            means[z] = base + state_spread * _unit_rows(rng, d) * np.sqrt(d)
        shape_covs = []
        noise_covs = []
        for _ in range(k):
            a = rng.standard_normal((d, d)) * 0.3
            corr = np.eye(d) + a @ a.T / d
            corr /= np.sqrt(np.outer(np.diag(corr), np.diag(corr)))
            shape_covs.append(shape_sd**2 * corr)
            noise_covs.append(noise_sd**2 * np.eye(d))
        components[c] = make_component(means, shape_covs, noise_covs)
    meta = {
        "expression_labels": _labels(EXPRESSION_LABELS, n_expressions, "expr"),
        "pose_labels": _labels(POSE_LABELS, n_poses, "pose"),
        "generator": {"edges": [list(e) for e in network.edges], "seed": int(seed)},
    }
    if partition.num_points != TEMPLATE_FACE.shape[0]:
        # no eye groups in a generic layout: use the first and last point
        meta["normalization"] = {"left_eye": [0], "right_eye": [partition.num_points - 1], "scale": "interocular"}
    return HierarchicalModel(network, components, partition, meta)


def _labels(defaults, n, prefix):
    if n == len(defaults):
        return list(defaults)
    return [f"{prefix}{i}" for i in range(n)]


def _unit_rows(rng, d):
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def _template(partition):
    if partition.num_points == TEMPLATE_FACE.shape[0]:
        return TEMPLATE_FACE
    # arbitrary point counts: points spread on a circle
    t = np.linspace(0, 2 * np.pi, partition.num_points, endpoint=False)
    return np.stack([np.cos(t), np.sin(t)], axis=1)


def synthesize(generator, n, seed, return_states=False):
    """Draw ``n`` annotated samples by ancestral sampling from ``generator``.

    Labels and hidden states come from the discrete network; then each
    component's true shape is drawn given its state, and the measurement is
    drawn given the true shape and state.
    """
    rng = np.random.default_rng(seed)
    net = generator.network
    configs = net.sample(n, rng)
    part = generator.partition
    truth_parts, meas_parts = {}, {}
    for c, cm in generator.components.items():
        z = configs[:, net.index[state_node(c)]]
        x = np.empty((n, cm.dim))
        xm = np.empty((n, cm.dim))
        noise_x = rng.standard_normal((n, cm.dim))
        noise_m = rng.standard_normal((n, cm.dim))
        for k in range(cm.num_states):
            sel = z == k
            if not np.any(sel):
                continue
            g, m = cm.shapes[k], cm.measurements[k]
            x[sel] = g.mean + noise_x[sel] @ g.chol.T
            xm[sel] = m.predict(x[sel]) + noise_m[sel] @ m.chol.T
        truth_parts[c] = x
        meas_parts[c] = xm
    meta = generator.metadata
    n_e, n_p = generator.cardinalities
    ds = Dataset(
        part.assemble(truth_parts),
        part.assemble(meas_parts),
        configs[:, net.index[EXPRESSION]],
        configs[:, net.index[POSE]],
        meta.get("expression_labels", _labels(EXPRESSION_LABELS, n_e, "expr")),
        meta.get("pose_labels", _labels(POSE_LABELS, n_p, "pose")),
        part,
        generator.normalization,
    )
    if return_states:
        return ds, configs
    return ds
