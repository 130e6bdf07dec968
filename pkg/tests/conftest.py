import itertools

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from hierface.component import make_component
from hierface.model import HierarchicalModel, node_names, state_node
from hierface.network import DiscreteNetwork
from hierface.shapes import ComponentPartition
from hierface.synth import COUPLED_EDGES, make_generator, synthesize


def random_spd(rng, d, scale=1.0):
    a = rng.standard_normal((d, d))
    return scale * (a @ a.T / d + 0.5 * np.eye(d))


def random_partition(rng, sizes=None):
    sizes = sizes or [int(s) for s in rng.integers(1, 3, size=4)]
    start = 0
    groups = {}
    for name, m in zip(("eyebrow", "eye", "nose", "mouth"), sizes):
        groups[name] = list(range(start, start + m))
        start += m
    return ComponentPartition(groups)


def random_network(rng, nodes, cards, edge_prob=0.4):
    order = rng.permutation(len(nodes))
    parents = {n: [] for n in nodes}
    for a, b in itertools.combinations(range(len(nodes)), 2):
        if rng.random() < edge_prob:
            parents[nodes[order[b]]].append(nodes[order[a]])
    index = {n: i for i, n in enumerate(nodes)}
    cpts = {}
    for n in nodes:
        ps = sorted(parents[n], key=index.__getitem__)
        parents[n] = ps
        shape = tuple(cards[index[p]] for p in ps)
        cpts[n] = rng.dirichlet(np.ones(cards[index[n]]), size=shape)
    return DiscreteNetwork(nodes, cards, parents, cpts)


def random_toy_model(rng, max_card=3, tied=False):
    part = random_partition(rng)
    nodes = node_names(part)
    cards = tuple(int(c) for c in rng.integers(1, max_card + 1, size=len(nodes)))
    net = random_network(rng, nodes, cards)
    comps = {}
    for j, c in enumerate(part.components):
        d = part.dim(c)
        k = cards[2 + j]
        means = rng.normal(0, 1.0, size=(k, d))
        shape_covs = [random_spd(rng, d, 0.3) for _ in range(k)]
        noise_covs = [random_spd(rng, d, 0.2) for _ in range(k)]
        if tied:
            comps[c] = make_component(means, shape_covs, noise_covs)
        else:
            offsets = rng.normal(0, 0.2, size=(k, d))
            gains = [np.eye(d) + 0.3 * rng.standard_normal((d, d)) for _ in range(k)]
            comps[c] = make_component(means, shape_covs, noise_covs, offsets=offsets, gains=gains)
    meta = {"normalization": {"left_eye": [0], "right_eye": [part.num_points - 1], "scale": "interocular"}}
    return HierarchicalModel(net, comps, part, meta)


def brute_force_log_table(model, xm):
    """Unnormalized log P(config, xm) by nested loops over every configuration."""
    net = model.network
    part = model.partition
    ev = {}
    for c, cm in model.components.items():
        xc = np.asarray(xm, dtype=float).reshape(-1, 2)[list(part.groups[c])].reshape(-1)
        ev[c] = []
        for g, m in zip(cm.shapes, cm.measurements):
            mean = m.offset + m.gain @ g.mean
            cov = m.gain @ g.cov @ m.gain.T + m.noise_cov
            ev[c].append(multivariate_normal(mean, cov).logpdf(xc))
    out = np.empty(net.cards)
    for cfg in itertools.product(*[range(c) for c in net.cards]):
        total = 0.0
        for n in net.nodes:
            key = tuple(cfg[net.nodes.index(p)] for p in net.parents[n]) + (cfg[net.nodes.index(n)],)
            total += np.log(max(net.cpts[n][key], 1e-12))
        for c in part.components:
            total += ev[c][cfg[net.nodes.index(state_node(c))]]
        out[cfg] = total
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_generator():
    return make_generator(COUPLED_EDGES, seed=7)


@pytest.fixture(scope="session")
def small_dataset(small_generator):
    return synthesize(small_generator, 300, seed=11)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
