"""Structural EM learning of the hierarchical model."""

from .config import Constraints, LearnConfig, constraint_preset
from .em import ScoreReport, ZPosterior, e_step, expected_bic, expected_counts, m_step
from .structure import family_score, optimal_dag, structure_score, structure_search
from .train import TrainTrace, canonical_order, fit_component, init_states, select_state_counts, structure_em

__all__ = [
    "Constraints",
    "LearnConfig",
    "ScoreReport",
    "TrainTrace",
    "ZPosterior",
    "canonical_order",
    "constraint_preset",
    "e_step",
    "expected_bic",
    "expected_counts",
    "family_score",
    "fit_component",
    "init_states",
    "m_step",
    "optimal_dag",
    "select_state_counts",
    "structure_em",
    "structure_score",
    "structure_search",
]
