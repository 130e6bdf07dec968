from __future__ import annotations

from dataclasses import dataclass, field

from ..model import EXPRESSION, POSE

CONSTRAINT_PRESETS = ("default", "permissive", "empty")


@dataclass(frozen=True)
class Constraints:
    """Edges the structure search may not use."""

    forbidden: frozenset = frozenset()
    preset: str = "custom"

    def allows(self, parent, child):
        return (parent, child) not in self.forbidden


def constraint_preset(name, nodes):
    """Build a named constraint set for the given node names.

    ``default``
        Hidden-state nodes may not point into the expression or pose node.
    ``permissive``
        Any DAG.
    ``empty``
        No edges at all (the structure-less baseline).
    """
    labels = {EXPRESSION, POSE}
    if name == "default":
        forbidden = {(a, b) for a in nodes for b in nodes if b in labels and a not in labels}
    elif name == "permissive":
        forbidden = set()
    elif name == "empty":
        forbidden = {(a, b) for a in nodes for b in nodes if a != b}
    else:
        raise ValueError(f"unknown constraint preset {name!r}; choose from {CONSTRAINT_PRESETS}")
    return Constraints(frozenset(forbidden), name)


@dataclass(frozen=True)
class LearnConfig:
    """Training settings.

    ``state_counts`` fixes the number of hidden states (an int for every
    component or a dict per component).  When it is ``None`` the counts are
    chosen on a held-out split by :func:`select_state_counts` over
    ``state_count_range`` (inclusive).
    """

    state_counts: object = None
    state_count_range: tuple = (2, 6)
    max_param_em_iters: int = 50
    param_em_rel_tol: float = 1e-6
    max_structure_iters: int = 20
    kmeans_restarts: int = 10
    seed: int = 0
    constraints: str = "default"
    beta_tied: bool = True
    pseudocount: float = 1e-3
    cov_floor: float = 1e-6
    validation_fraction: float = 0.2
    monotonic_slack: float = 1e-8
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        lo, hi = self.state_count_range
        if lo < 1 or hi < lo:
            raise ValueError(f"invalid state_count_range {self.state_count_range}")
        if self.param_em_rel_tol <= 0 or self.pseudocount <= 0 or self.cov_floor <= 0:
            raise ValueError("tolerances, pseudocount and covariance floor must be positive")
        if self.max_param_em_iters < 0 or self.max_structure_iters < 0 or self.kmeans_restarts < 1:
            raise ValueError("iteration counts must be non-negative and restarts positive")

    def states_for(self, components):
        sc = self.state_counts
        if sc is None:
            return None
        if isinstance(sc, dict):
            return {c: int(sc[c]) for c in components}
        return {c: int(sc) for c in components}

    def state_range(self):
        lo, hi = self.state_count_range
        return range(int(lo), int(hi) + 1)
