"""Landmark data model: partitions, normalization, datasets, folds and metrics.

Shapes are numpy arrays of shape ``(num_points, 2)`` (a single landmark set)
or ``(n, num_points, 2)`` (a batch).  The flattened form interleaves
coordinates as ``[x0, y0, x1, y1, ...]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    CardinalityMismatch,
    DegenerateShape,
    DimensionMismatch,
    ParseError,
    SchemaViolation,
    TooFewSamples,
)

NUM_POINTS = 26
COMPONENTS = ("eyebrow", "eye", "nose", "mouth")
EXPRESSION_LABELS = ("neutral", "anger", "disgust", "fear", "happiness", "sadness", "surprise")
POSE_LABELS = ("frontal", "left", "right")
DATASET_FORMAT = "hierface-dataset"
DATASET_VERSION = 1


@dataclass(frozen=True)
class ComponentPartition:
    """Assignment of landmark indices to facial components.

    ``groups`` maps component name to an ordered tuple of point indices.  The
    groups must be disjoint and cover ``0 .. num_points - 1``.
    """

    groups: dict

    def __post_init__(self):
        groups = {str(k): tuple(int(i) for i in v) for k, v in dict(self.groups).items()}
        flat = [i for idx in groups.values() for i in idx]
        if not groups or any(len(v) == 0 for v in groups.values()):
            raise SchemaViolation("every component needs at least one point")
        if len(flat) != len(set(flat)):
            raise SchemaViolation("component index lists overlap")
        if set(flat) != set(range(len(flat))):
            raise SchemaViolation(f"component indices must cover 0..{len(flat) - 1} exactly")
        object.__setattr__(self, "groups", groups)

    @classmethod
    def default(cls):
        return cls({
            "eyebrow": range(0, 8),
            "eye": range(8, 16),
            "nose": range(16, 20),
            "mouth": range(20, 26),
        })

    @property
    def components(self):
        return tuple(self.groups)

    @property
    def num_points(self):
        return sum(len(v) for v in self.groups.values())

    def dim(self, component):
        return 2 * len(self.groups[component])

    def extract(self, shapes, component):
        """Flattened coordinates of one component, shape ``(..., 2m)``."""
        shapes = as_points(shapes, self.num_points)
        idx = list(self.groups[component])
        part = shapes[..., idx, :]
        return part.reshape(part.shape[:-2] + (2 * len(idx),))

    def assemble(self, parts):
        """Inverse of :meth:`extract` over all components."""
        first = np.asarray(parts[self.components[0]])
        out = np.empty(first.shape[:-1] + (self.num_points, 2))
        for comp, idx in self.groups.items():
            part = np.asarray(parts[comp], dtype=float)
            out[..., list(idx), :] = part.reshape(part.shape[:-1] + (len(idx), 2))
        return out

    def to_dict(self):
        return {k: list(v) for k, v in self.groups.items()}

    # component order matters (it fixes the network's node order)
    def __eq__(self, other):
        return isinstance(other, ComponentPartition) and tuple(self.groups.items()) == tuple(other.groups.items())

    def __hash__(self):
        return hash(tuple(self.groups.items()))


@dataclass(frozen=True)
class Normalization:
    """Which points define the two eye centres, and the scale convention."""

    left_eye: tuple = (8, 9, 10, 11)
    right_eye: tuple = (12, 13, 14, 15)
    scale: str = "interocular"

    def __post_init__(self):
        object.__setattr__(self, "left_eye", tuple(int(i) for i in np.atleast_1d(self.left_eye)))
        object.__setattr__(self, "right_eye", tuple(int(i) for i in np.atleast_1d(self.right_eye)))

    def to_dict(self):
        return {"left_eye": list(self.left_eye), "right_eye": list(self.right_eye), "scale": self.scale}


def as_points(a, num_points=NUM_POINTS):
    """Coerce flattened or point-shaped input to ``(..., num_points, 2)``."""
    a = np.asarray(a, dtype=float)
    if a.shape[-2:] == (num_points, 2):
        out = a
    elif a.shape[-1] == 2 * num_points:
        out = a.reshape(a.shape[:-1] + (num_points, 2))
    else:
        raise DimensionMismatch(f"expected {num_points} 2-D points, got array of shape {a.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError("landmark coordinates must be finite")
    return out


def flatten(points):
    points = np.asarray(points, dtype=float)
    return points.reshape(points.shape[:-2] + (-1,))


def eye_centers(points, eyes=None):
    eyes = eyes or Normalization()
    points = np.asarray(points, dtype=float)
    left = points[..., list(eyes.left_eye), :].mean(axis=-2)
    right = points[..., list(eyes.right_eye), :].mean(axis=-2)
    return left, right


def interocular_distance(points, eyes=None):
    left, right = eye_centers(points, eyes)
    return np.linalg.norm(right - left, axis=-1)


def normalize(raw_points, eyes=None):
    """Translate and scale a shape so the eye centres sit at distance 1 around the origin.

    ``eyes`` is a :class:`Normalization`, or a ``(left, right)`` pair where each
    entry is a point index or a sequence of indices whose centroid is used.
    No rotation is removed.
    """
    if eyes is None:
        eyes = Normalization()
    elif not isinstance(eyes, Normalization):
        eyes = Normalization(*eyes)
    pts = np.asarray(raw_points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        pts = as_points(pts, pts.size // 2)
    left, right = eye_centers(pts, eyes)
    iod = np.linalg.norm(right - left)
    if iod < 1e-9:
        raise DegenerateShape(f"interocular distance {iod:g} is too small to normalize")
    return (pts - 0.5 * (left + right)) / iod


def normalized_error(detected, truth, interocular):
    """Per-point Euclidean error divided by the interocular distance.

    Works on single shapes ``(P, 2)`` or batches ``(n, P, 2)``; ``interocular``
    is a scalar or one value per shape.
    """
    detected = np.asarray(detected, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if detected.shape != truth.shape:
        raise DimensionMismatch(f"shape mismatch {detected.shape} vs {truth.shape}")
    iod = np.asarray(interocular, dtype=float)
    if np.any(~(iod > 0)):
        raise DegenerateShape("interocular distance must be positive")
    dist = np.linalg.norm(detected - truth, axis=-1)
    return dist / iod[..., None] if iod.ndim else dist / iod


def error_summary(errors, partition):
    """Mean error per component and overall, Table-1 style.

    ``errors`` has shape ``(P,)`` or ``(n, P)``; returns an ordered dict with
    one entry per component followed by ``"overall"``.
    """
    errors = np.atleast_2d(np.asarray(errors, dtype=float))
    out = {comp: float(errors[:, list(idx)].mean()) for comp, idx in partition.groups.items()}
    out["overall"] = float(errors.mean())
    return out


@dataclass(frozen=True)
class AnnotatedSample:
    truth: np.ndarray
    measurement: np.ndarray
    expression: int
    pose: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Annotated landmark samples stored column-wise.

    Attributes
    ----------
    truth, measurement : ndarray of shape (n, num_points, 2)
    expression, pose : ndarray of int, shape (n,)
    """

    truth: np.ndarray
    measurement: np.ndarray
    expression: np.ndarray
    pose: np.ndarray
    expression_labels: tuple = EXPRESSION_LABELS
    pose_labels: tuple = POSE_LABELS
    partition: ComponentPartition = field(default_factory=ComponentPartition.default)
    normalization: Normalization = field(default_factory=Normalization)

    def __post_init__(self):
        p = self.partition.num_points
        truth = as_points(self.truth, p).reshape(-1, p, 2).copy()
        meas = as_points(self.measurement, p).reshape(-1, p, 2).copy()
        expr = np.asarray(self.expression, dtype=np.int64).reshape(-1).copy()
        pose = np.asarray(self.pose, dtype=np.int64).reshape(-1).copy()
        n = truth.shape[0]
        if n == 0:
            raise SchemaViolation("dataset is empty")
        if meas.shape[0] != n or expr.shape[0] != n or pose.shape[0] != n:
            raise SchemaViolation("truth, measurement and labels differ in length")
        labels_e = tuple(str(s) for s in self.expression_labels)
        labels_p = tuple(str(s) for s in self.pose_labels)
        _check_labels(expr, len(labels_e), "expression")
        _check_labels(pose, len(labels_p), "pose")
        for a in (truth, meas, expr, pose):
            a.flags.writeable = False
        object.__setattr__(self, "truth", truth)
        object.__setattr__(self, "measurement", meas)
        object.__setattr__(self, "expression", expr)
        object.__setattr__(self, "pose", pose)
        object.__setattr__(self, "expression_labels", labels_e)
        object.__setattr__(self, "pose_labels", labels_p)

    def __len__(self):
        return self.truth.shape[0]

    def __getitem__(self, i):
        return AnnotatedSample(self.truth[i], self.measurement[i], int(self.expression[i]), int(self.pose[i]))

    @property
    def cardinalities(self):
        return len(self.expression_labels), len(self.pose_labels)

    def subset(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return self._replace(self.truth[idx], self.measurement[idx], self.expression[idx], self.pose[idx])

    def _replace(self, truth, measurement, expression, pose):
        return Dataset(truth, measurement, expression, pose, self.expression_labels,
                       self.pose_labels, self.partition, self.normalization)

    def with_measurement(self, measurement):
        return self._replace(self.truth, measurement, self.expression, self.pose)

    def interocular(self):
        """Interocular distance of each ground-truth shape."""
        return interocular_distance(self.truth, self.normalization)

    def equals(self, other):
        return (
            isinstance(other, Dataset)
            and np.array_equal(self.truth, other.truth)
            and np.array_equal(self.measurement, other.measurement)
            and np.array_equal(self.expression, other.expression)
            and np.array_equal(self.pose, other.pose)
            and self.expression_labels == other.expression_labels
            and self.pose_labels == other.pose_labels
            and self.partition == other.partition
            and self.normalization == other.normalization
        )


def _check_labels(values, card, name):
    if values.size and (values.min() < 0 or values.max() >= card):
        bad = int(np.flatnonzero((values < 0) | (values >= card))[0])
        raise CardinalityMismatch(
            f"sample {bad}: {name} index {int(values[bad])} outside 0..{card - 1}"
        )


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple
    seed: int

    def train_test(self, k):
        test = self.folds[k]
        train = np.sort(np.concatenate([f for j, f in enumerate(self.folds) if j != k]))
        return train, test

    def __len__(self):
        return len(self.folds)


def make_folds(dataset, k, seed):
    """Seeded shuffle followed by a round-robin split into ``k`` folds."""
    n = dataset if isinstance(dataset, (int, np.integer)) else len(dataset)
    if k < 2:
        raise ValueError("need at least 2 folds")
    if k > n:
        raise TooFewSamples(f"cannot split {n} samples into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    folds = tuple(np.sort(perm[j::k]) for j in range(k))
    return FoldPlan(folds, seed)


# -- file I/O ---------------------------------------------------------------

def _header(dataset):
    return {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "num_points": dataset.partition.num_points,
        "expression_labels": list(dataset.expression_labels),
        "pose_labels": list(dataset.pose_labels),
        "partition": dataset.partition.to_dict(),
        "normalization": dataset.normalization.to_dict(),
    }


def save_dataset(dataset, path):
    """Write a dataset as JSON lines: one header object, then one record per sample."""
    path = Path(path)
    lines = [json.dumps(_header(dataset))]
    truth = flatten(dataset.truth)
    meas = flatten(dataset.measurement)
    for i in range(len(dataset)):
        lines.append(json.dumps({
            "truth": truth[i].tolist(),
            "measurement": meas[i].tolist(),
            "expression": int(dataset.expression[i]),
            "pose": int(dataset.pose[i]),
        }))
    path.write_text("\n".join(lines) + "\n")


def _read_jsonl(path, what):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {what} file {path}: {exc.strerror or exc}") from exc
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
    if not rows:
        raise ParseError(f"{path}: empty {what} file")
    return rows


def _require(obj, key, where):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaViolation(f"{where}: missing field '{key}'")
    return obj[key]


def load_dataset(path):
    rows = _read_jsonl(path, "dataset")
    header, records = rows[0], rows[1:]
    if _require(header, "format", "header") != DATASET_FORMAT:
        raise SchemaViolation(f"header: unknown format {header.get('format')!r}")
    num_points = int(_require(header, "num_points", "header"))
    partition = ComponentPartition(_require(header, "partition", "header"))
    if partition.num_points != num_points:
        raise SchemaViolation("header: partition does not cover num_points")
    norm = header.get("normalization", {})
    normalization = Normalization(
        norm.get("left_eye", Normalization.left_eye),
        norm.get("right_eye", Normalization.right_eye),
        norm.get("scale", "interocular"),
    )
    e_labels = tuple(_require(header, "expression_labels", "header"))
    p_labels = tuple(_require(header, "pose_labels", "header"))
    if not records:
        raise SchemaViolation("dataset has no records")
    width = 2 * num_points
    truth = np.empty((len(records), width))
    meas = np.empty((len(records), width))
    expr = np.empty(len(records), dtype=np.int64)
    pose = np.empty(len(records), dtype=np.int64)
    for i, rec in enumerate(records):
        where = f"record {i}"
        for key, out in (("truth", truth), ("measurement", meas)):
            vals = _require(rec, key, where)
            if not isinstance(vals, list) or len(vals) != width:
                got = len(vals) if isinstance(vals, list) else type(vals).__name__
                raise SchemaViolation(f"{where}: field '{key}' must hold {width} numbers, got {got}")
            try:
                out[i] = np.asarray(vals, dtype=float)
            except (TypeError, ValueError) as exc:
                raise SchemaViolation(f"{where}: field '{key}' is not numeric") from exc
            if not np.all(np.isfinite(out[i])):
                raise SchemaViolation(f"{where}: field '{key}' has non-finite values")
        for key, out, card in (("expression", expr, len(e_labels)), ("pose", pose, len(p_labels))):
            val = _require(rec, key, where)
            if not isinstance(val, int) or isinstance(val, bool):
                raise SchemaViolation(f"{where}: field '{key}' must be an integer")
            if not 0 <= val < card:
                raise CardinalityMismatch(f"{where}: field '{key}' = {val} outside 0..{card - 1}")
            out[i] = val
    return Dataset(truth, meas, expr, pose, e_labels, p_labels, partition, normalization)
