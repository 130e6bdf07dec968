"""Structural EM training and state-count selection."""

from __future__ import annotations

import json
import logging
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.cluster import KMeans

from ..component import ComponentMixture
from ..exceptions import DegenerateStateWarning, MonotonicityViolation, TooFewSamples
from ..model import EXPRESSION, POSE, state_node
from ..shapes import flatten
from .config import Constraints, LearnConfig, constraint_preset
from .em import ZPosterior, e_step, expected_bic, fit_state_parameters, m_step
from .structure import structure_search

log = logging.getLogger(__name__)


def canonical_order(dataset):
    """Permutation sorting samples by their content (labels, truth, measurement).

    Training on the sorted dataset makes every learned quantity independent
    of the order in which samples were supplied.
    """
    keys = np.hstack([
        dataset.expression[:, None].astype(float),
        dataset.pose[:, None].astype(float),
        flatten(dataset.truth),
        flatten(dataset.measurement),
    ])
    return np.lexsort(keys.T[::-1])


def _component_seed(seed, j):
    return int(np.random.SeedSequence([int(seed), j]).generate_state(1)[0])


def kmeans_states(x, k, restarts, seed):
    """Hard state labels from k-means, with states ordered by their centres.

    Empty clusters are refilled with the point farthest from the centre of
    the largest cluster.
    """
    n = x.shape[0]
    if n < k:
        raise TooFewSamples(f"{n} samples cannot fill {k} states")
    if k == 1:
        return np.zeros(n, dtype=np.int64)
    km = KMeans(n_clusters=k, n_init=restarts, random_state=seed).fit(x)
    labels = km.labels_.astype(np.int64)
    centers = km.cluster_centers_
    for z in range(k):
        if np.any(labels == z):
            continue
        big = np.bincount(labels, minlength=k).argmax()
        members = np.flatnonzero(labels == big)
        far = members[np.argmax(np.linalg.norm(x[members] - centers[big], axis=1))]
        labels[far] = z
    # relabel so state 0 has the lexicographically smallest centre
    means = np.stack([x[labels == z].mean(axis=0) for z in range(k)])
    order = np.lexsort(means.T[::-1])
    relabel = np.empty(k, dtype=np.int64)
    relabel[order] = np.arange(k)
    return relabel[labels]


def init_states(dataset, config, state_counts):
    """Cluster each component independently and fit the initial model.

    Returns the hard assignments (one label array per component) and the
    initial model with an edgeless network.
    """
    part = dataset.partition
    assignments = []
    for j, c in enumerate(part.components):
        x = part.extract(dataset.truth, c)
        assignments.append(kmeans_states(x, state_counts[c], config.kmeans_restarts,
                                         _component_seed(config.seed, j)))
    cards = [state_counts[c] for c in part.components]
    post = ZPosterior.from_assignments(assignments, cards)
    model, _ = m_step(dataset, post, {}, beta_tied=config.beta_tied, pseudocount=config.pseudocount,
                      cov_floor=config.cov_floor, metadata=_metadata(dataset, config))
    return assignments, model


def _metadata(dataset, config):
    return {
        "expression_labels": list(dataset.expression_labels),
        "pose_labels": list(dataset.pose_labels),
        "normalization": {
            "left_eye": list(dataset.normalization.left_eye),
            "right_eye": list(dataset.normalization.right_eye),
            "scale": dataset.normalization.scale,
        },
        "training": {
            "n_samples": len(dataset),
            "seed": int(config.seed),
            "beta_tied": bool(config.beta_tied),
            "constraints": config.constraints if isinstance(config.constraints, str) else "custom",
        },
    }


@dataclass
class TrainTrace:
    """Audit trail of a structural EM run.

    Each record is a dict with ``kind`` (``"param"`` for an inner EM
    iteration, ``"structure"`` for a structure update), the iteration indices,
    the edge list, the score fields and the elapsed wall time.
    """

    records: list = field(default_factory=list)
    reason: str = ""
    warnings: list = field(default_factory=list)

    def add(self, kind, n, l, edges, report, t0, **extra):
        rec = {"kind": kind, "structure_iter": n, "em_iter": l, "edges": [list(e) for e in edges]}
        rec.update(report.as_dict())
        rec.update(extra)
        rec["wall_time"] = time.perf_counter() - t0
        self.records.append(rec)

    def param_scores(self):
        """Marginal BIC per inner iteration, grouped by structure iteration."""
        out = {}
        for r in self.records:
            if r["kind"] == "param":
                out.setdefault(r["structure_iter"], []).append(r["marginal_bic"])
        return out

    def is_monotone(self, slack=1e-8):
        """Both EM guarantees hold at every inner iteration.

        The marginal BIC never decreases, and each M-step does not lower the
        expected BIC under the posteriors it was given
        (``step_after >= step_before``).
        """
        for seq in self.param_scores().values():
            for a, b in zip(seq, seq[1:]):
                if b < a - slack * max(1.0, abs(a)):
                    return False
        for r in self.records:
            if r["kind"] == "param" and "step_after" in r:
                a, b = r["step_before"], r["step_after"]
                if b < a - slack * max(1.0, abs(a)):
                    return False
        return True

    def write(self, path):
        lines = [json.dumps(r) for r in self.records]
        lines.append(json.dumps({"kind": "end", "reason": self.reason, "warnings": self.warnings}))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def read(cls, path):
        rows = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        end = rows[-1] if rows and rows[-1].get("kind") == "end" else {}
        recs = [r for r in rows if r.get("kind") != "end"]
        return cls(recs, end.get("reason", ""), end.get("warnings", []))


def _parents_of(model):
    return dict(model.network.parents)


def _run_param_em(model, dataset, config, trace, n, t0):
    """Inner parameter-EM loop for a fixed structure."""
    parents = _parents_of(model)
    edges = model.network.edges
    post = e_step(model, dataset)
    report = expected_bic(model, dataset, post, config.beta_tied)
    trace.add("param", n, 0, edges, report, t0)
    for l in range(1, config.max_param_em_iters + 1):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DegenerateStateWarning)
            new, bad = m_step(dataset, post, parents, beta_tied=config.beta_tied,
                              pseudocount=config.pseudocount, cov_floor=config.cov_floor, previous=model)
        for comp, z in bad:
            trace.warnings.append(f"structure iter {n}, EM iter {l}: state {z} of {comp} kept (no support)")
        # expected BIC under the posteriors the M-step was given: the M-step
        # must not lower it
        ascent = expected_bic(new, dataset, post, config.beta_tied).expected_bic
        new_post = e_step(new, dataset)
        new_report = expected_bic(new, dataset, new_post, config.beta_tied)
        trace.add("param", n, l, edges, new_report, t0,
                  step_before=report.expected_bic, step_after=ascent)
        prev_score, score = report.marginal_bic, new_report.marginal_bic
        slack = config.monotonic_slack
        if score < prev_score - slack * max(1.0, abs(prev_score)):
            trace.reason = "monotonicity violation"
            raise MonotonicityViolation(
                f"parameter EM decreased the score from {prev_score!r} to {score!r} "
                f"(structure iter {n}, EM iter {l})", trace)
        if ascent < report.expected_bic - slack * max(1.0, abs(report.expected_bic)):
            trace.reason = "monotonicity violation"
            raise MonotonicityViolation(
                f"M-step decreased the expected BIC from {report.expected_bic!r} to {ascent!r} "
                f"(structure iter {n}, EM iter {l})", trace)
        model, post, report = new, new_post, new_report
        if abs(score - prev_score) <= config.param_em_rel_tol * max(1.0, abs(prev_score)):
            break
    return model, post


def structure_em(dataset, config=None, state_counts=None):
    """Learn network structure and all parameters by structural EM.

    Parameters
    ----------
    dataset : Dataset
        Training data with labels, truth and measurements.
    config : LearnConfig, optional
    state_counts : dict, optional
        Hidden-state count per component.  Falls back to
        ``config.state_counts`` and then to :func:`select_state_counts` on a
        seeded hold-out split.

    Returns
    -------
    model : HierarchicalModel
    trace : TrainTrace
    """
    config = config or LearnConfig()
    t0 = time.perf_counter()
    comps = dataset.partition.components
    dataset = dataset.subset(canonical_order(dataset))
    if state_counts is None:
        state_counts = config.states_for(comps)
    if state_counts is None:
        state_counts = _select_with_holdout(dataset, config)
    nodes = (EXPRESSION, POSE) + tuple(state_node(c) for c in comps)
    constraints = config.constraints
    if not isinstance(constraints, Constraints):
        constraints = constraint_preset(constraints, nodes)

    trace = TrainTrace()
    _, model = init_states(dataset, config, state_counts)
    meta = dict(model.metadata)
    meta["training"] = dict(meta["training"], state_counts={c: int(state_counts[c]) for c in comps})
    model = type(model)(model.network, model.components, model.partition, meta)

    for n in range(config.max_structure_iters + 1):
        model, post = _run_param_em(model, dataset, config, trace, n, t0)
        if n == config.max_structure_iters:
            trace.reason = "max structure iterations"
            break
        parents = structure_search(dataset, post, constraints, config.pseudocount)
        new_model, _ = m_step(dataset, post, parents, beta_tied=config.beta_tied,
                              pseudocount=config.pseudocount, cov_floor=config.cov_floor, previous=model)
        old_report = expected_bic(model, dataset, post, config.beta_tied)
        new_report = expected_bic(new_model, dataset, post, config.beta_tied)
        trace.add("structure", n, None, new_model.network.edges, new_report, t0,
                  previous_expected_bic=old_report.expected_bic)
        log.info("structure iter %d: edges %s", n, new_model.network.edges)
        if new_model.network.edges == model.network.edges:
            trace.reason = "structure unchanged"
            break
        model = new_model
    return model, trace


# -- state-count selection ------------------------------------------------------

def fit_component(x, xm, k, config, seed):
    """Fit one detached component mixture by EM on ``(x, xm)`` pairs."""
    order = np.lexsort(np.hstack([x, xm]).T[::-1])
    x, xm = x[order], xm[order]
    n = x.shape[0]
    labels = kmeans_states(x, k, config.kmeans_restarts, seed)
    resp = np.zeros((n, k))
    resp[np.arange(n), labels] = 1.0
    cm = None
    prev_ll = -np.inf
    for _ in range(config.max_param_em_iters + 1):
        shapes, meas, _ = fit_state_parameters(x, xm, resp, config.beta_tied, config.cov_floor, cm)
        nk = resp.sum(axis=0) + config.pseudocount
        cm = ComponentMixture(np.log(nk / nk.sum()), shapes, meas)
        joint = cm.log_prior + cm.state_log_likelihoods(x, xm)
        norm = np.logaddexp.reduce(joint, axis=1)
        ll = float(norm.sum())
        resp = np.exp(joint - norm[:, None])
        if abs(ll - prev_ll) <= config.param_em_rel_tol * max(1.0, abs(ll)):
            break
        prev_ll = ll
    return cm


def select_state_counts(train, validation, config=None):
    """Pick each component's state count by validation log likelihood.

    Components are treated independently (detached mixtures).  Ties go to
    the smaller count.
    """
    config = config or LearnConfig()
    ks = list(config.state_range())
    part = train.partition
    if len(ks) == 1:
        return {c: ks[0] for c in part.components}
    if len(train) < ks[0]:
        raise TooFewSamples(f"{len(train)} training samples cannot fill {ks[0]} states")
    out = {}
    for j, c in enumerate(part.components):
        x, xm = part.extract(train.truth, c), part.extract(train.measurement, c)
        vx, vxm = part.extract(validation.truth, c), part.extract(validation.measurement, c)
        best_k, best = None, -np.inf
        for k in ks:
            if k > len(train):
                break
            cm = fit_component(x, xm, k, config, _component_seed(config.seed, j))
            score = float(np.sum(cm.joint_log_density(vx, vxm)))
            log.info("component %s, K=%d: validation log likelihood %.4f", c, k, score)
            if score > best:
                best_k, best = k, score
        out[c] = best_k
    return out


def _select_with_holdout(dataset, config):
    n = len(dataset)
    n_val = max(1, int(round(config.validation_fraction * n)))
    if n - n_val < 1:
        raise TooFewSamples("not enough samples to hold out a validation split")
    perm = np.random.default_rng(config.seed).permutation(n)
    val, train = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    return select_state_counts(dataset.subset(train), dataset.subset(val), config)
