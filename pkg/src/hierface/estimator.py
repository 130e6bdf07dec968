"""scikit-learn compatible front end.

:class:`HierarchicalLandmarkRegressor` maps measured landmark vectors to
estimates of the true landmarks.  ``X`` holds measurements and ``y`` the
ground truth, both flattened to ``(n_samples, 2 * num_points)``; expression
and pose labels are passed to :meth:`fit` as extra arrays.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_consistent_length, check_is_fitted

from .learning import LearnConfig, structure_em
from .model import EXPRESSION, POSE, infer_batch, log_evidence
from .shapes import EXPRESSION_LABELS, POSE_LABELS, ComponentPartition, Dataset, flatten, interocular_distance, normalized_error
from .synth import _labels


class HierarchicalLandmarkRegressor(RegressorMixin, BaseEstimator):
    """Hierarchical latent-state shape model trained by structural EM.

    Parameters
    ----------
    n_states : int, dict or None, default=None
        Hidden states per component.  ``None`` selects them on a held-out
        split over ``state_count_range``.
    state_count_range : tuple of int, default=(2, 6)
    n_expressions, n_poses : int
        Cardinalities of the expression and pose labels.
    partition : dict or None
        Component name to point indices; ``None`` uses the 26-point default.
    constraints : {"default", "permissive", "empty"}
        Structure-search preset.
    beta_tied : bool, default=True
        Fix the measurement gain to identity and offset to zero.
    estimate_policy : {"mean", "mode"}
        Posterior mean of the mixture, or mean of its heaviest component.
    random_state : int
        Seed for clustering and hold-out splits.

    Attributes
    ----------
    model_ : HierarchicalModel
    trace_ : TrainTrace
    n_features_in_ : int
    """

    def __init__(self, n_states=None, state_count_range=(2, 6), n_expressions=7, n_poses=3,
                 partition=None, constraints="default", beta_tied=True, max_param_em_iters=50,
                 param_em_rel_tol=1e-6, max_structure_iters=20, kmeans_restarts=10,
                 estimate_policy="mean", random_state=0):
        self.n_states = n_states
        self.state_count_range = state_count_range
        self.n_expressions = n_expressions
        self.n_poses = n_poses
        self.partition = partition
        self.constraints = constraints
        self.beta_tied = beta_tied
        self.max_param_em_iters = max_param_em_iters
        self.param_em_rel_tol = param_em_rel_tol
        self.max_structure_iters = max_structure_iters
        self.kmeans_restarts = kmeans_restarts
        self.estimate_policy = estimate_policy
        self.random_state = random_state

    def _partition(self):
        if self.partition is None:
            return ComponentPartition.default()
        if isinstance(self.partition, ComponentPartition):
            return self.partition
        return ComponentPartition(self.partition)

    def learn_config(self):
        return LearnConfig(
            state_counts=self.n_states,
            state_count_range=tuple(self.state_count_range),
            max_param_em_iters=self.max_param_em_iters,
            param_em_rel_tol=self.param_em_rel_tol,
            max_structure_iters=self.max_structure_iters,
            kmeans_restarts=self.kmeans_restarts,
            seed=int(self.random_state),
            constraints=self.constraints,
            beta_tied=self.beta_tied,
        )

    def fit(self, X, y, expression, pose):
        """Train on measurements ``X``, truth ``y`` and the sample labels."""
        part = self._partition()
        X = check_array(X, ensure_min_samples=1)
        y = check_array(y)
        expression = np.asarray(expression)
        pose = np.asarray(pose)
        check_consistent_length(X, y, expression, pose)
        if X.shape[1] != 2 * part.num_points or y.shape[1] != X.shape[1]:
            raise ValueError(f"expected {2 * part.num_points} features, got X {X.shape[1]}, y {y.shape[1]}")
        ds = Dataset(
            y, X, expression, pose,
            _labels(EXPRESSION_LABELS, self.n_expressions, "expr"),
            _labels(POSE_LABELS, self.n_poses, "pose"),
            part,
        )
        return self.fit_dataset(ds)

    def fit_dataset(self, dataset):
        self.model_, self.trace_ = structure_em(dataset, self.learn_config())
        self.n_features_in_ = 2 * dataset.partition.num_points
        return self

    def _measurements(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def _infer(self, X, expression=None, pose=None):
        X = self._measurements(X)
        n = X.shape[0]
        e = np.broadcast_to(np.asarray(expression, dtype=object), (n,)) if expression is not None else [None] * n
        p = np.broadcast_to(np.asarray(pose, dtype=object), (n,)) if pose is not None else [None] * n
        keys = list(zip(e, p))
        results = {}
        for key in sorted(set(keys), key=repr):
            idx = np.array([i for i, k in enumerate(keys) if k == key])
            clamp = {EXPRESSION: key[0], POSE: key[1]}
            results[key] = (idx, infer_batch(self.model_, X[idx], clamp))
        return n, results

    def predict(self, X, expression=None, pose=None):
        """Estimated true landmarks, flattened like ``X``.

        ``expression`` / ``pose`` optionally clamp the labels (scalar or one
        per sample); otherwise they are marginalized.
        """
        n, results = self._infer(X, expression, pose)
        out = np.empty((n, self.n_features_in_))
        for idx, res in results.values():
            out[idx] = flatten(res.estimate(self.estimate_policy))
        return out

    def predict_states(self, X):
        """Posterior state probabilities per component, each ``(n, K)``."""
        res = infer_batch(self.model_, self._measurements(X))
        return res.state_marginals

    def score_samples(self, X):
        """Log evidence ``ln P(xm)`` of each measurement."""
        return log_evidence(self.model_, self._measurements(X))

    def score(self, X, y, sample_weight=None):
        """Negative mean normalized landmark error (higher is better)."""
        check_is_fitted(self, "model_")
        part = self.model_.partition
        truth = check_array(y).reshape(-1, part.num_points, 2)
        est = self.predict(X).reshape(truth.shape)
        iod = interocular_distance(truth, self.model_.normalization)
        err = normalized_error(est, truth, iod).mean(axis=1)
        return -float(np.average(err, weights=sample_weight))
