"""Continual-learning scores and the graph-vs-embedding distortion profile."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .graph import Graph, multi_source_bfs


@dataclass
class PerformanceMatrix:
    """Lower-triangular accuracies: rows[i-1][j-1] is accuracy on task j after training on 1..i.

    A joint-training result has a single full-length row and ``joint=True``.
    """

    rows: list[list[float]] = field(default_factory=list)
    joint: bool = False

    @property
    def num_tasks(self) -> int:
        return len(self.rows[-1]) if self.rows else 0

    def r(self, i: int, j: int) -> float:
        """1-based accessor r_{i,j}."""
        if self.joint:
            raise ValueError("joint results only carry the final row")
        if not 1 <= j <= i <= len(self.rows):
            raise IndexError(f"r[{i}][{j}] is undefined")
        return self.rows[i - 1][j - 1]

    def as_array(self) -> np.ndarray:
        """Square array with NaN above the diagonal."""
        m = len(self.rows)
        out = np.full((m, self.num_tasks), np.nan)
        for i, row in enumerate(self.rows):
            out[i, :len(row)] = row
        return out

    def to_csv(self) -> str:
        m = self.num_tasks
        lines = ["# schema: seaer.performance/v1", "stage," + ",".join(f"task{j}" for j in range(1, m + 1))]
        for i, row in enumerate(self.rows, start=1):
            stage = "joint" if self.joint else str(i)
            cells = [repr(float(x)) for x in row] + [""] * (m - len(row))
            lines.append(stage + "," + ",".join(cells))
        return "\n".join(lines) + "\n"


def fap(R: PerformanceMatrix) -> float:
    if not R.rows or not R.rows[-1]:
        raise ValueError("empty performance matrix")
    return float(np.mean(R.rows[-1]))


def faf(R: PerformanceMatrix) -> float:
    if R.joint:
        raise ValueError("forgetting is not defined for joint training")
    if not R.rows:
        raise ValueError("empty performance matrix")
    m = len(R.rows)
    return float(sum(R.rows[m - 1][j] - R.rows[j][j] for j in range(m)) / m)


def forgetting_matrix(R: PerformanceMatrix) -> np.ndarray:
    """r_{i,j} - r_{j,j} for i >= j, NaN elsewhere."""
    A = R.as_array()
    diag = np.diag(A).copy()
    out = A - diag[None, :]
    out[np.isnan(A)] = np.nan
    return out


@dataclass
class MetricsReport:
    fap: float
    faf: float | None
    forgetting: list[list[float]]
    per_task_final: list[float]

    @classmethod
    def from_matrix(cls, R: PerformanceMatrix) -> "MetricsReport":
        if R.joint:
            return cls(fap(R), None, [], list(R.rows[-1]))
        F = forgetting_matrix(R)
        return cls(fap(R), faf(R), [[float(x) for x in F[i, :i + 1]] for i in range(len(R.rows))], list(R.rows[-1]))

    def to_dict(self) -> dict:
        return {
            "FAP": self.fap,
            "FAF": self.faf,
            "forgetting": self.forgetting,
            "final_row": self.per_task_final,
            "forgetting_definition": "r[i][j] - r[j][j]",
        }


@dataclass
class DistortionProfile:
    hops: np.ndarray
    counts: np.ndarray
    mean_distance: np.ndarray
    slope: float
    alpha: float
    degenerate: bool

    def to_csv(self) -> str:
        lines = ["# schema: seaer.distortion/v1", "hop,count,mean_distance"]
        for h, c, m in zip(self.hops, self.counts, self.mean_distance):
            lines.append(f"{int(h)},{int(c)},{repr(float(m))}")
        return "\n".join(lines) + "\n"


def distortion_profile(embeddings: np.ndarray, g: Graph, train_set, max_hops: int = 5) -> DistortionProfile:
    """Mean nearest-train-vertex embedding distance for each hop bucket 1..max_hops.

    ``embeddings`` rows align with ``g.vertex_ids``. Empty buckets are dropped.
    The slope is a least-squares fit through the origin; ``alpha`` is the
    ratio of the largest to smallest per-hop stretch mean_h / h.
    """
    train = np.unique(np.asarray(list(train_set) if not isinstance(train_set, np.ndarray) else train_set, dtype=np.int64))
    if train.size == 0:
        raise ValueError("train set must be nonempty")
    emb = np.asarray(embeddings, dtype=float)
    if emb.ndim == 1:
        emb = emb[:, None]
    dist = multi_source_bfs(g, train, max_hops=max_hops).dist
    anchors = emb[g.local(train)]
    hops, counts, means = [], [], []
    for h in range(1, max_hops + 1):
        members = np.flatnonzero(dist == h)
        if members.size == 0:
            continue
        nearest = cdist(emb[members], anchors).min(axis=1)
        hops.append(h)
        counts.append(members.size)
        means.append(float(nearest.mean()))
    if not hops:
        raise FloatingPointError("no vertex within the hop range of the train set")
    hops_a, means_a = np.asarray(hops, dtype=float), np.asarray(means)
    slope = float(hops_a @ means_a / (hops_a @ hops_a))
    ratios = means_a / hops_a
    degenerate = bool(ratios.min() <= 0)
    alpha = float("nan") if degenerate else float(ratios.max() / ratios.min())
    return DistortionProfile(np.asarray(hops), np.asarray(counts), means_a, slope, alpha, degenerate)
