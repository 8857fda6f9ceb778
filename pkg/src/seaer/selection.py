"""Experience-buffer selection.

The k-center strategies pick vertices whose hop-distance balls cover the rest
of the task; the baselines pick at random, by degree, or by proximity to class
mean embeddings.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .graph import UNREACHABLE, Graph, multi_source_bfs


class Strategy(str, enum.Enum):
    KCENTER_GREEDY = "kcenter_greedy"
    KCENTER_SAMPLING = "kcenter_sampling"
    DEGREE_DISTANCE_SAMPLING = "degree_distance"
    RANDOM = "random"
    TOP_DEGREE = "top_degree"
    REPRESENTATION = "representation"

    @classmethod
    def parse(cls, name: str) -> "Strategy":
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(f"unknown selection strategy {name!r}; choose from {[s.value for s in cls]}") from None


@dataclass
class ExperienceBuffer:
    """Selected vertices per finished task, P_1..P_{i-1}."""

    sets: dict[int, np.ndarray] = field(default_factory=dict)
    strategy: str = ""
    seeds: dict[int, int] = field(default_factory=dict)

    def add(self, task: int, vertices: np.ndarray, seed: int) -> None:
        vertices = np.asarray(vertices, dtype=np.int64)
        for other, existing in self.sets.items():
            if np.intersect1d(existing, vertices).size:
                raise ValueError(f"buffer set for task {task} overlaps task {other}")
        self.sets[task] = vertices
        self.seeds[task] = seed

    def all_vertices(self) -> np.ndarray:
        if not self.sets:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([self.sets[t] for t in sorted(self.sets)])

    def __len__(self) -> int:
        return sum(len(v) for v in self.sets.values())


def _prepare(g: Graph, candidates, b: int) -> np.ndarray:
    cand = np.unique(np.asarray(list(candidates) if not isinstance(candidates, np.ndarray) else candidates, dtype=np.int64))
    if cand.size == 0:
        raise ValueError("candidate set must be nonempty")
    if b < 1:
        raise ValueError("budget must be >= 1")
    g.local(cand)
    return cand


def _candidate_degrees(g: Graph, cand: np.ndarray) -> np.ndarray:
    return g.degrees()[g.local(cand)]


def _max_degree_start(g: Graph, cand: np.ndarray) -> int:
    # argmax returns the first maximum; cand is sorted so ties go to the smallest id
    return int(np.argmax(_candidate_degrees(g, cand)))


class _NearestCenter:
    """Incrementally maintained hop distance from each candidate to the chosen set."""

    def __init__(self, g: Graph, cand: np.ndarray):
        self.g = g
        self.local = g.local(cand)
        self.dist = np.full(len(cand), UNREACHABLE, dtype=np.int64)

    def add(self, vertex: int) -> None:
        d = multi_source_bfs(self.g, [vertex]).dist[self.local]
        better = (d != UNREACHABLE) & ((self.dist == UNREACHABLE) | (d < self.dist))
        self.dist[better] = d[better]

    def finite_fill(self) -> np.ndarray:
        """Distances with UNREACHABLE replaced by (largest finite distance + 1)."""
        d = self.dist.astype(np.float64)
        unreachable = self.dist == UNREACHABLE
        top = self.dist[~unreachable].max() if (~unreachable).any() else 0
        d[unreachable] = top + 1
        return d


def select_kcenter_greedy(g: Graph, candidates, b: int, seed: int = 0) -> np.ndarray:
    """Farthest-first traversal from the highest-degree candidate.

    ``seed`` is accepted for interface symmetry; ties break by smallest id so
    the result is fully deterministic.
    """
    cand = _prepare(g, candidates, b)
    if b >= len(cand):
        return cand
    chosen = np.zeros(len(cand), dtype=bool)
    near = _NearestCenter(g, cand)
    first = _max_degree_start(g, cand)
    chosen[first] = True
    near.add(int(cand[first]))
    for _ in range(b - 1):
        # unreachable candidates are infinitely far and therefore preferred
        score = np.where(near.dist == UNREACHABLE, np.iinfo(np.int64).max, near.dist)
        score[chosen] = -1
        nxt = int(np.argmax(score))
        chosen[nxt] = True
        near.add(int(cand[nxt]))
    return cand[chosen]


def _sample(rng: np.random.Generator, weights: np.ndarray, available: np.ndarray) -> int:
    w = np.where(available, weights, 0.0)
    total = w.sum()
    if total <= 0:
        # no positive mass left: fall back to uniform over what remains
        w = available.astype(np.float64)
        total = w.sum()
    return int(rng.choice(len(w), p=w / total))


def select_kcenter_sampling(g: Graph, candidates, b: int, seed: int = 0) -> np.ndarray:
    """Start at the highest-degree candidate, then sample proportional to distance to the set."""
    cand = _prepare(g, candidates, b)
    if b >= len(cand):
        return cand
    rng = np.random.default_rng(seed)
    chosen = np.zeros(len(cand), dtype=bool)
    near = _NearestCenter(g, cand)
    first = _max_degree_start(g, cand)
    chosen[first] = True
    near.add(int(cand[first]))
    for _ in range(b - 1):
        nxt = _sample(rng, near.finite_fill(), ~chosen)
        chosen[nxt] = True
        near.add(int(cand[nxt]))
    return cand[chosen]


def select_degree_distance(g: Graph, candidates, b: int, seed: int = 0) -> np.ndarray:
    """Degree-proportional start, then sample proportional to degree x distance to the set."""
    cand = _prepare(g, candidates, b)
    if b >= len(cand):
        return cand
    rng = np.random.default_rng(seed)
    deg = _candidate_degrees(g, cand).astype(np.float64)
    chosen = np.zeros(len(cand), dtype=bool)
    near = _NearestCenter(g, cand)
    first = _sample(rng, deg, ~chosen)
    chosen[first] = True
    near.add(int(cand[first]))
    for _ in range(b - 1):
        nxt = _sample(rng, deg * near.finite_fill(), ~chosen)
        chosen[nxt] = True
        near.add(int(cand[nxt]))
    return cand[chosen]


def select_baseline(strategy: Strategy | str, g: Graph, candidates, b: int, seed: int = 0,
                    embeddings: np.ndarray | None = None, labels: np.ndarray | None = None) -> np.ndarray:
    """RANDOM, TOP_DEGREE or REPRESENTATION selection.

    For REPRESENTATION, ``embeddings`` (and optionally ``labels``) are rows
    aligned with ``g.vertex_ids``. Each class ranks its candidates by distance
    to the class-mean embedding and classes take turns, lowest class id first.
    """
    strategy = Strategy.parse(strategy) if isinstance(strategy, str) else strategy
    cand = _prepare(g, candidates, b)
    if strategy is Strategy.REPRESENTATION and embeddings is None:
        raise ValueError("REPRESENTATION selection needs embeddings")
    if b >= len(cand):
        return cand
    if strategy is Strategy.RANDOM:
        rng = np.random.default_rng(seed)
        return np.sort(rng.choice(cand, size=b, replace=False))
    if strategy is Strategy.TOP_DEGREE:
        deg = _candidate_degrees(g, cand)
        order = np.lexsort((cand, -deg))
        return np.sort(cand[order[:b]])
    if strategy is Strategy.REPRESENTATION:
        loc = g.local(cand)
        emb = embeddings[loc]
        cls = np.zeros(len(cand), dtype=np.int64) if labels is None else np.asarray(labels)[loc]
        queues = []
        for c in np.unique(cls):
            members = np.flatnonzero(cls == c)
            centre = emb[members].mean(axis=0)
            dist = np.linalg.norm(emb[members] - centre, axis=1)
            queues.append(list(members[np.lexsort((cand[members], dist))]))
        picked: list[int] = []
        while len(picked) < b:
            for q in queues:
                if q and len(picked) < b:
                    picked.append(q.pop(0))
        return np.sort(cand[picked])
    raise ValueError(f"{strategy.value} is not a baseline strategy")


def stratify_by_class(candidates, labels, b: int) -> dict[int, int]:
    """Split budget ``b`` across classes as evenly as possible, every class at least 1.

    Remainders go to the lowest class ids; a class never gets more than it
    has candidates, and any excess moves to the next classes in id order.
    """
    labels = np.asarray(labels)
    classes, sizes = np.unique(labels, return_counts=True)
    k = len(classes)
    if b < k:
        raise ValueError(f"budget {b} smaller than number of classes {k}")
    base, extra = divmod(b, k)
    budget = {int(c): base + (1 if i < extra else 0) for i, c in enumerate(classes)}
    size = {int(c): int(s) for c, s in zip(classes, sizes)}
    spill = 0
    for c in budget:
        if budget[c] > size[c]:
            spill += budget[c] - size[c]
            budget[c] = size[c]
    for c in budget:
        if spill == 0:
            break
        room = size[c] - budget[c]
        take = min(room, spill)
        budget[c] += take
        spill -= take
    return budget


SELECTORS: dict[Strategy, Callable] = {
    Strategy.KCENTER_GREEDY: select_kcenter_greedy,
    Strategy.KCENTER_SAMPLING: select_kcenter_sampling,
    Strategy.DEGREE_DISTANCE_SAMPLING: select_degree_distance,
}


def select(strategy: Strategy | str, g: Graph, candidates, b: int, seed: int = 0, labels: np.ndarray | None = None,
           embeddings: np.ndarray | None = None, stratify: bool = False) -> np.ndarray:
    """Dispatch to a strategy, optionally running it once per class.

    ``labels`` and ``embeddings`` are rows aligned with ``g.vertex_ids``.
    """
    strategy = Strategy.parse(strategy) if isinstance(strategy, str) else strategy
    cand = _prepare(g, candidates, b)

    def run(subset: np.ndarray, budget: int, sub_seed: int) -> np.ndarray:
        if strategy in SELECTORS:
            return SELECTORS[strategy](g, subset, budget, sub_seed)
        return select_baseline(strategy, g, subset, budget, sub_seed, embeddings=embeddings, labels=labels)

    if not stratify or labels is None:
        return run(cand, b, seed)
    cand_labels = np.asarray(labels)[g.local(cand)]
    budgets = stratify_by_class(cand, cand_labels, min(b, len(cand)))
    parts = [run(cand[cand_labels == c], nb, seed + 7919 * i) for i, (c, nb) in enumerate(budgets.items()) if nb > 0]
    return np.sort(np.concatenate(parts))
