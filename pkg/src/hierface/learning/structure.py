"""Exact structure search over the discrete network.

Family scores are computed for every admissible parent set of every node,
then the best DAG is assembled by dynamic programming over node subsets.
Among DAGs whose score ties with the optimum, the lexicographically smallest
sorted ``(parent_index, child_index)`` edge list is returned.
"""

from __future__ import annotations

from functools import lru_cache
from itertools import combinations

import numpy as np

from ..exceptions import TooManyNodes
from ..model import EXPRESSION, POSE, state_node
from .config import Constraints, constraint_preset
from .em import expected_counts, family_counts, smoothed_cpt

MAX_NODES = 8
TIE_TOL = 1e-9


def family_score(fcounts, n, pseudocount=1e-3):
    """Expected log likelihood of one family minus its BIC penalty.

    ``fcounts`` has shape ``(*parent_cards, card)``.
    """
    theta = smoothed_cpt(fcounts, pseudocount)
    ll = float(np.sum(fcounts * np.log(theta)))
    card = fcounts.shape[-1]
    n_params = (card - 1) * int(np.prod(fcounts.shape[:-1], dtype=np.int64))
    return ll - 0.5 * np.log(n) * n_params


def all_family_scores(counts, nodes, n, constraints, pseudocount=1e-3):
    """Scores of every admissible parent set, keyed by node index then parent bitmask."""
    m = len(nodes)
    if m > MAX_NODES:
        raise TooManyNodes(f"exact search supports at most {MAX_NODES} nodes, got {m}")
    scores = []
    for v, node in enumerate(nodes):
        allowed = [u for u in range(m) if u != v and constraints.allows(nodes[u], node)]
        fam = {}
        for r in range(len(allowed) + 1):
            for ps in combinations(allowed, r):
                mask = sum(1 << u for u in ps)
                fam[mask] = family_score(family_counts(counts, nodes, node, [nodes[u] for u in ps]), n, pseudocount)
        scores.append(fam)
    return scores


def _bits(mask):
    return [i for i in range(mask.bit_length()) if mask >> i & 1]


def optimal_dag(scores, num_nodes, tol=TIE_TOL):
    """Highest-scoring DAG given decomposable family scores.

    Parameters
    ----------
    scores : list of dict
        ``scores[v][mask]`` is the score of node ``v`` with parent bitmask
        ``mask``.  Missing masks are inadmissible.

    Returns
    -------
    parents : tuple of tuple of int
        Parent indices of each node.
    total : float
        Score of the returned DAG.
    """
    full = (1 << num_nodes) - 1
    # best[v][cand]: best score and tied parent masks for v with parents inside cand
    best = []
    for v in range(num_nodes):
        table = {}
        fam = scores[v]
        for cand in range(full + 1):
            if cand >> v & 1:
                continue
            top = -np.inf
            for mask, s in fam.items():
                if mask & ~cand == 0 and s > top:
                    top = s
            ties = sorted(mask for mask, s in fam.items()
                          if mask & ~cand == 0 and s >= top - tol * max(1.0, abs(top)))
            table[cand] = (top, ties)
        best.append(table)

    score = np.full(full + 1, -np.inf)
    score[0] = 0.0
    for s in range(1, full + 1):
        for v in _bits(s):
            val = score[s & ~(1 << v)] + best[v][s & ~(1 << v)][0]
            if val > score[s]:
                score[s] = val

    @lru_cache(maxsize=None)
    def optimal_sets(s):
        if s == 0:
            return frozenset([frozenset()])
        out = set()
        cut = score[s] - tol * max(1.0, abs(score[s]))
        for v in _bits(s):
            rest = s & ~(1 << v)
            top, ties = best[v][rest]
            if score[rest] + top < cut:
                continue
            for mask in ties:
                new = frozenset((u, v) for u in _bits(mask))
                for edges in optimal_sets(rest):
                    out.add(edges | new)
        return frozenset(out)

    chosen = min(optimal_sets(full), key=lambda e: tuple(sorted(e)))
    parents = tuple(tuple(sorted(u for u, w in chosen if w == v)) for v in range(num_nodes))
    total = sum(scores[v][sum(1 << u for u in parents[v])] for v in range(num_nodes))
    return parents, total


def structure_search(dataset, posterior, constraints="default", pseudocount=1e-3):
    """Network structure maximizing the expected BIC under ``posterior``.

    Returns a dict mapping each node name to a tuple of parent names.
    """
    comps = dataset.partition.components
    nodes = (EXPRESSION, POSE) + tuple(state_node(c) for c in comps)
    if not isinstance(constraints, Constraints):
        constraints = constraint_preset(constraints, nodes)
    cards = tuple(dataset.cardinalities) + tuple(posterior.prob.shape[1:])
    counts = expected_counts(dataset, posterior, cards)
    scores = all_family_scores(counts, nodes, len(dataset), constraints, pseudocount)
    parents, _ = optimal_dag(scores, len(nodes))
    return {nodes[v]: tuple(nodes[u] for u in ps) for v, ps in enumerate(parents)}


def structure_score(counts, nodes, parents, n, pseudocount=1e-3):
    """Sum of family scores of a given structure (decomposable total)."""
    return sum(
        family_score(family_counts(counts, nodes, node, sorted(parents.get(node, ()), key=nodes.index)), n, pseudocount)
        for node in nodes
    )
