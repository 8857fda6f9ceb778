"""Convert plain-text node-classification exports into task streams.

Inputs are a whitespace-separated edge list, a CSV feature matrix (one row per
vertex) and a label file (one integer per line). Lines starting with ``#`` and
blank lines are ignored in all three.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import TaskStream, VertexBatch

log = logging.getLogger(__name__)


class IngestError(ValueError):
    def __init__(self, path: str | Path, line: int, message: str):
        self.path, self.line = str(path), line
        super().__init__(f"{path}:{line}: {message}")


@dataclass(frozen=True)
class TaskPartition:
    class_groups: tuple[tuple[int, ...], ...]
    members: dict[int, np.ndarray]
    dropped: tuple[int, ...] = ()

    @property
    def num_tasks(self) -> int:
        return len(self.class_groups)


def partition_by_class(labels, classes_per_task: int = 2) -> TaskPartition:
    """Group consecutive classes (ascending) into tasks; a trailing incomplete group is dropped."""
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    if len(classes) < 2 or classes_per_task < 1 or len(classes) < classes_per_task:
        raise ValueError("need at least 2 classes and at least one full task")
    n_tasks = len(classes) // classes_per_task
    kept = classes[: n_tasks * classes_per_task]
    dropped = tuple(int(c) for c in classes[n_tasks * classes_per_task:])
    if dropped:
        log.warning("dropping class(es) %s that do not fill a task", list(dropped))
    groups = tuple(tuple(int(c) for c in kept[i:i + classes_per_task]) for i in range(0, len(kept), classes_per_task))
    members = {int(c): np.flatnonzero(labels == c) for c in kept}
    return TaskPartition(groups, members, dropped)


def _content_lines(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if line and not line.startswith("#"):
                yield lineno, line


def read_labels(path: str | Path) -> np.ndarray:
    path = Path(path)
    out = []
    for lineno, line in _content_lines(path):
        try:
            value = int(line.split(",")[-1])
        except ValueError:
            raise IngestError(path, lineno, f"expected an integer label, got {line!r}") from None
        if value < 0:
            raise IngestError(path, lineno, "labels must be non-negative")
        out.append(value)
    return np.asarray(out, dtype=np.int64)


def read_features(path: str | Path) -> np.ndarray:
    path = Path(path)
    rows = []
    width = None
    for lineno, line in _content_lines(path):
        try:
            row = [float(x) for x in line.split(",")]
        except ValueError:
            raise IngestError(path, lineno, "non-numeric feature value") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise IngestError(path, lineno, f"expected {width} features, got {len(row)}")
        if not np.isfinite(row).all():
            raise IngestError(path, lineno, "non-finite feature value")
        rows.append(row)
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), width or 0)


def read_edges(path: str | Path, num_vertices: int) -> np.ndarray:
    path = Path(path)
    out = []
    for lineno, line in _content_lines(path):
        parts = line.split()
        if len(parts) < 2:
            raise IngestError(path, lineno, "expected 'u v'")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise IngestError(path, lineno, "vertex ids must be integers") from None
        if not (0 <= u < num_vertices and 0 <= v < num_vertices):
            raise IngestError(path, lineno, f"vertex id outside [0, {num_vertices})")
        out.append((u, v))
    return np.asarray(out, dtype=np.int64).reshape(-1, 2)


def to_stream(edge_path: str | Path, feature_path: str | Path, label_path: str | Path,
              partition: TaskPartition | None = None, classes_per_task: int = 2) -> TaskStream:
    """Build a stream with one batch per class group; vertices are renumbered densely by task."""
    labels = read_labels(label_path)
    feats = read_features(feature_path)
    if len(feats) != len(labels):
        raise IngestError(feature_path, len(feats), f"{len(feats)} feature rows but {len(labels)} labels")
    edges = read_edges(edge_path, len(labels))
    part = partition_by_class(labels, classes_per_task) if partition is None else partition

    new_id = np.full(len(labels), -1, dtype=np.int64)
    task_of = np.zeros(len(labels), dtype=np.int64)
    batches = []
    nxt = 0
    for t, group in enumerate(part.class_groups, start=1):
        old = np.sort(np.concatenate([part.members[c] for c in group]))
        ids = np.arange(nxt, nxt + len(old), dtype=np.int64)
        new_id[old] = ids
        task_of[old] = t
        nxt += len(old)
        batches.append(VertexBatch(ids, feats[old], labels[old]))
    keep = (new_id[edges[:, 0]] >= 0) & (new_id[edges[:, 1]] >= 0) & (edges[:, 0] != edges[:, 1])
    e = edges[keep]
    mapped = np.stack([new_id[e[:, 0]], new_id[e[:, 1]]], axis=1)
    # canonical undirected form, duplicates removed
    mapped = np.unique(np.sort(mapped, axis=1), axis=0)
    old_of_new = np.empty(nxt, dtype=np.int64)
    old_of_new[new_id[new_id >= 0]] = np.flatnonzero(new_id >= 0)
    tags = np.maximum(task_of[old_of_new[mapped[:, 0]]], task_of[old_of_new[mapped[:, 1]]]) if len(mapped) else np.zeros(0, np.int64)
    num_classes = int(labels.max()) + 1 if len(labels) else 0
    stream = TaskStream(batches, mapped, tags.astype(np.int64), num_classes, feats.shape[1])
    stream.validate()
    return stream
