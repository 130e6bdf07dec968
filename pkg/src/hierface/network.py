"""Discrete Bayesian network over expression, pose and component states."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .exceptions import DimensionMismatch, IndexOutOfRange
from .gauss import logsumexp

CPT_FLOOR = 1e-12


def topological_order(num_nodes, parent_idx):
    """Kahn's algorithm, always emitting the lowest-index ready node first.

    ``parent_idx`` maps node index to an iterable of parent indices.  Returns
    ``None`` when the graph has a cycle.
    """
    remaining = {v: set(parent_idx.get(v, ())) for v in range(num_nodes)}
    order = []
    while remaining:
        ready = sorted(v for v, ps in remaining.items() if not ps)
        if not ready:
            return None
        v = ready[0]
        order.append(v)
        del remaining[v]
        for ps in remaining.values():
            ps.discard(v)
    return order


def _family_axes(index, parents, node):
    return [index[p] for p in parents] + [index[node]]


@dataclass(frozen=True, eq=False)
class DiscreteNetwork:
    """DAG with conditional probability tables.

    ``cpts[name]`` has shape ``(*parent_cards, card)``: parent axes follow the
    order of ``parents[name]`` (which is node order) and the last axis is the
    node itself.
    """

    nodes: tuple
    cards: tuple
    parents: dict
    cpts: dict

    def __post_init__(self):
        nodes = tuple(str(n) for n in self.nodes)
        cards = tuple(int(c) for c in self.cards)
        if len(nodes) != len(cards) or len(set(nodes)) != len(nodes):
            raise DimensionMismatch("node names must be unique and match cardinalities")
        if any(c < 1 for c in cards):
            raise ValueError("cardinalities must be positive")
        index = {n: i for i, n in enumerate(nodes)}
        parents = {}
        for n in nodes:
            ps = tuple(self.parents.get(n, ()))
            for p in ps:
                if p not in index or p == n:
                    raise ValueError(f"invalid parent {p!r} for node {n!r}")
            parents[n] = tuple(sorted(set(ps), key=index.__getitem__))
        if topological_order(len(nodes), {index[n]: [index[p] for p in ps] for n, ps in parents.items()}) is None:
            raise ValueError("edge relation contains a cycle")
        cpts = {}
        for n in nodes:
            if n not in self.cpts:
                raise ValueError(f"missing CPT for node {n!r}")
            table = np.array(self.cpts[n], dtype=float)
            shape = tuple(cards[index[p]] for p in parents[n]) + (cards[index[n]],)
            if table.shape != shape:
                raise DimensionMismatch(f"CPT of {n!r} has shape {table.shape}, expected {shape}")
            if np.any(table < 0) or np.any(np.abs(table.sum(axis=-1) - 1.0) > 1e-10):
                raise ValueError(f"CPT rows of {n!r} must be non-negative and sum to 1")
            table.flags.writeable = False
            cpts[n] = table
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "cards", cards)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "cpts", cpts)

    @classmethod
    def empty(cls, nodes, cards):
        """Edgeless network with uniform tables."""
        return cls(nodes, cards, {}, {n: np.full(c, 1.0 / c) for n, c in zip(nodes, cards)})

    @cached_property
    def index(self):
        return {n: i for i, n in enumerate(self.nodes)}

    def card(self, name):
        return self.cards[self.index[name]]

    @property
    def edges(self):
        """Sorted ``(parent, child)`` name pairs, ordered by node index."""
        idx = self.index
        pairs = sorted((idx[p], idx[c]) for c, ps in self.parents.items() for p in ps)
        return tuple((self.nodes[a], self.nodes[b]) for a, b in pairs)

    def topological_order(self):
        idx = self.index
        order = topological_order(len(self.nodes), {idx[n]: [idx[p] for p in ps] for n, ps in self.parents.items()})
        return [self.nodes[i] for i in order]

    def log_cpt(self, name):
        return np.log(np.maximum(self.cpts[name], CPT_FLOOR))

    def num_parameters(self):
        """Independent CPT entries: ``(card - 1) * prod(parent cards)`` per node."""
        return sum(
            (self.card(n) - 1) * int(np.prod([self.card(p) for p in ps], dtype=np.int64))
            for n, ps in self.parents.items()
        )

    def discrete_log_joint(self, config):
        """Log probability of one full assignment, given in node order."""
        config = tuple(int(v) for v in config)
        if len(config) != len(self.nodes):
            raise DimensionMismatch(f"expected {len(self.nodes)} values, got {len(config)}")
        for v, c, n in zip(config, self.cards, self.nodes):
            if not 0 <= v < c:
                raise IndexOutOfRange(f"value {v} of {n!r} outside 0..{c - 1}")
        total = 0.0
        for n in self.nodes:
            key = tuple(config[self.index[p]] for p in self.parents[n]) + (config[self.index[n]],)
            total += self.log_cpt(n)[key]
        return total

    @cached_property
    def log_joint_table(self):
        """Log joint over every configuration, an array of shape ``cards``."""
        table = np.zeros(self.cards)
        for n in self.nodes:
            axes = _family_axes(self.index, self.parents[n], n)
            order = np.argsort(axes)
            local = np.transpose(self.log_cpt(n), order)
            shape = [1] * len(self.nodes)
            for a in axes:
                shape[a] = self.cards[a]
            table = table + local.reshape(shape)
        table.flags.writeable = False
        return table

    def marginal(self, query, clamp=None):
        """Exact ``P(query | clamp)`` by enumeration; axes follow ``query`` order."""
        table = np.array(self.log_joint_table)
        table = restrict(table, self, clamp)
        qidx = [self.index[q] for q in query]
        other = tuple(i for i in range(len(self.nodes)) if i not in qidx)
        marg = logsumexp(table, axis=other) if other else table
        # logsumexp keeps remaining axes in increasing index order
        order = np.argsort(np.argsort(qidx))
        marg = np.transpose(marg, order) if len(qidx) > 1 else marg
        return np.exp(marg - logsumexp(marg))

    def sample(self, n, rng):
        """Ancestral sampling; returns an ``(n, num_nodes)`` integer array."""
        out = np.zeros((n, len(self.nodes)), dtype=np.int64)
        for name in self.topological_order():
            i = self.index[name]
            rows = self.cpts[name][tuple(out[:, self.index[p]] for p in self.parents[name])]
            rows = np.broadcast_to(rows, (n, self.cards[i]))
            cdf = np.cumsum(rows, axis=1)
            u = rng.random(n)[:, None] * cdf[:, -1:]
            out[:, i] = np.minimum((u >= cdf).sum(axis=1), self.cards[i] - 1)
        return out

    def to_dict(self):
        return {
            "nodes": [{"name": n, "cardinality": c} for n, c in zip(self.nodes, self.cards)],
            "edges": [list(e) for e in self.edges],
            "cpts": {n: {"parents": list(self.parents[n]), "table": self.cpts[n].tolist()} for n in self.nodes},
        }

    @classmethod
    def from_dict(cls, d):
        nodes = [x["name"] for x in d["nodes"]]
        cards = [x["cardinality"] for x in d["nodes"]]
        parents = {n: tuple(d["cpts"][n]["parents"]) for n in nodes}
        cpts = {n: np.asarray(d["cpts"][n]["table"], dtype=float) for n in nodes}
        return cls(nodes, cards, parents, cpts)


def restrict(log_table, network, clamp, leading=0):
    """Set entries inconsistent with ``clamp`` to ``-inf``.

    ``leading`` counts batch axes in front of the node axes.
    """
    if not clamp:
        return log_table
    out = np.array(log_table, dtype=float)
    for name, value in clamp.items():
        if value is None:
            continue
        i = network.index[name]
        if not 0 <= int(value) < network.cards[i]:
            raise IndexOutOfRange(f"clamped value {value} of {name!r} outside 0..{network.cards[i] - 1}")
        mask = np.ones(network.cards[i], dtype=bool)
        mask[int(value)] = False
        sl = [slice(None)] * out.ndim
        sl[leading + i] = mask
        out[tuple(sl)] = -np.inf
    return out
