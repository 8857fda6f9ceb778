"""Graph containers, evolving-stream induction, ego graphs and hop distances.

Vertex ids are dense, 0-based and global to a stream. A :class:`Graph` holds a
subset of those ids (sorted) plus a CSR adjacency over local positions, so that
an induced snapshot can be handed to the GNN with ``features[g.vertex_ids]``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

UNREACHABLE = -1
"""Sentinel hop count for vertices not connected to any source."""


class StreamFormatError(ValueError):
    """Raised when a stream file violates the schema or a stream invariant."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected, unweighted graph in CSR form over a sorted set of global ids."""

    vertex_ids: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray

    @classmethod
    def from_edges(cls, vertex_ids: Iterable[int], edges: np.ndarray | Sequence) -> "Graph":
        ids = np.unique(np.fromiter(vertex_ids, dtype=np.int64) if not isinstance(vertex_ids, np.ndarray) else vertex_ids.astype(np.int64))
        n = len(ids)
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if len(e):
            lu = np.searchsorted(ids, e[:, 0])
            lv = np.searchsorted(ids, e[:, 1])
            ok = (lu < n) & (lv < n)
            ok[ok] &= (ids[lu[ok]] == e[ok, 0]) & (ids[lv[ok]] == e[ok, 1])
            if not ok.all():
                bad = e[~ok][0]
                raise ValueError(f"edge ({bad[0]}, {bad[1]}) references a vertex outside the graph")
            keep = lu != lv
            lu, lv = lu[keep], lv[keep]
            src = np.concatenate([lu, lv])
            dst = np.concatenate([lv, lu])
            pairs = np.unique(src * max(n, 1) + dst)
            src, dst = pairs // max(n, 1), pairs % max(n, 1)
        else:
            src = dst = np.zeros(0, dtype=np.int64)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        indptr = np.cumsum(indptr)
        # np.unique sorted by (src, dst), so each row is already id-sorted
        return cls(ids, indptr, dst.astype(np.int64))

    @property
    def num_vertices(self) -> int:
        return len(self.vertex_ids)

    @property
    def num_edges(self) -> int:
        return len(self.indices) // 2

    def local(self, v) -> np.ndarray | int:
        """Map global id(s) to local positions; raise on unknown ids."""
        arr = np.asarray(v, dtype=np.int64)
        if self.num_vertices == 0:
            bad = np.ones(arr.shape, dtype=bool)
            pos = np.zeros(arr.shape, dtype=np.int64)
        else:
            pos = np.minimum(np.searchsorted(self.vertex_ids, arr), self.num_vertices - 1)
            bad = self.vertex_ids[pos] != arr
        if np.any(bad):
            raise ValueError(f"unknown vertex id {int(np.atleast_1d(arr)[np.atleast_1d(bad)][0])}")
        return int(pos) if arr.ndim == 0 else pos

    def __contains__(self, v: int) -> bool:
        pos = np.searchsorted(self.vertex_ids, v)
        return bool(pos < self.num_vertices and self.vertex_ids[pos] == v)

    def neighbors(self, v: int) -> np.ndarray:
        i = self.local(v)
        return self.vertex_ids[self.indices[self.indptr[i]:self.indptr[i + 1]]]

    def degrees(self) -> np.ndarray:
        """Degree per local position."""
        return np.diff(self.indptr)

    def edge_list(self) -> np.ndarray:
        """Each undirected edge once, as global ids with u < v."""
        src = np.repeat(np.arange(self.num_vertices), self.degrees())
        keep = src < self.indices
        return np.stack([self.vertex_ids[src[keep]], self.vertex_ids[self.indices[keep]]], axis=1)

    def to_scipy(self):
        import scipy.sparse as sp

        n = self.num_vertices
        data = np.ones(len(self.indices))
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(n, n))


@dataclass(frozen=True, eq=False)
class VertexBatch:
    vertex_ids: np.ndarray
    features: np.ndarray
    labels: np.ndarray


@dataclass(frozen=True, eq=False)
class TaskStream:
    """Ordered vertex batches plus every edge tagged with the task at which it appears."""

    batches: list[VertexBatch]
    edges: np.ndarray  # (E, 2) global ids
    edge_tags: np.ndarray  # (E,) 1-based task index
    num_classes: int
    feature_dim: int
    _task_of: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = max([self.num_vertices] + [int(b.vertex_ids.max()) + 1 for b in self.batches if len(b.vertex_ids)])
        task_of = np.zeros(n, dtype=np.int64)
        for t, b in enumerate(self.batches, start=1):
            task_of[b.vertex_ids] = t
        object.__setattr__(self, "_task_of", task_of)

    @property
    def num_tasks(self) -> int:
        return len(self.batches)

    @property
    def num_vertices(self) -> int:
        return sum(len(b.vertex_ids) for b in self.batches)

    def task_of(self, v) -> np.ndarray:
        return self._task_of[v]

    def all_features(self) -> np.ndarray:
        x = np.zeros((self.num_vertices, self.feature_dim))
        for b in self.batches:
            x[b.vertex_ids] = b.features
        return x

    def all_labels(self) -> np.ndarray:
        y = np.zeros(self.num_vertices, dtype=np.int64)
        for b in self.batches:
            y[b.vertex_ids] = b.labels
        return y

    def validate(self) -> None:
        """Check stream invariants; raise StreamFormatError on the first violation."""
        seen = np.zeros(self.num_vertices, dtype=bool)
        for t, b in enumerate(self.batches, start=1):
            ids = np.asarray(b.vertex_ids)
            if ids.size and (ids.min() < 0 or ids.max() >= self.num_vertices):
                raise StreamFormatError(f"batch {t}: vertex ids must be dense in [0, {self.num_vertices})")
            if seen[ids].any() or len(np.unique(ids)) != len(ids):
                raise StreamFormatError(f"batch {t}: vertex ids overlap another batch")
            seen[ids] = True
            if b.features.shape != (len(ids), self.feature_dim):
                raise StreamFormatError(f"batch {t}: features must be {len(ids)}x{self.feature_dim}")
            if len(b.labels) != len(ids):
                raise StreamFormatError(f"batch {t}: label count differs from vertex count")
            if len(b.labels) and (b.labels.min() < 0 or b.labels.max() >= self.num_classes):
                raise StreamFormatError(f"batch {t}: label outside [0, {self.num_classes})")
        if len(self.edges):
            expect = np.maximum(self.task_of(self.edges[:, 0]), self.task_of(self.edges[:, 1]))
            bad = np.flatnonzero(expect != self.edge_tags)
            if len(bad):
                k = int(bad[0])
                raise StreamFormatError(f"edge {k}: tag {int(self.edge_tags[k])} != max endpoint task {int(expect[k])}")


def induce_graph(stream: TaskStream, upto: int) -> Graph:
    """Graph over the vertices of batches 1..upto and every edge tagged <= upto."""
    if not 1 <= upto <= stream.num_tasks:
        raise ValueError(f"task index {upto} outside [1, {stream.num_tasks}]")
    ids = np.concatenate([b.vertex_ids for b in stream.batches[:upto]])
    edges = stream.edges[stream.edge_tags <= upto] if len(stream.edges) else stream.edges
    return Graph.from_edges(ids, edges)


@dataclass(frozen=True, eq=False)
class EgoGraph:
    root: int
    graph: Graph
    features: np.ndarray | None = None


def ego_graph(g: Graph, v: int, k: int, features: np.ndarray | None = None) -> EgoGraph:
    """k-hop neighbourhood of ``v`` as an induced subgraph.

    ``features``, if given, are rows aligned with ``g.vertex_ids``.
    """
    if k < 0:
        raise ValueError("hop count must be non-negative")
    field_ = multi_source_bfs(g, [v], max_hops=k)
    keep = np.flatnonzero(field_.dist != UNREACHABLE)
    ids = g.vertex_ids[keep]
    src = np.repeat(keep, g.degrees()[keep])
    dst = np.concatenate([g.indices[g.indptr[i]:g.indptr[i + 1]] for i in keep]) if len(keep) else np.zeros(0, dtype=np.int64)
    inside = field_.dist[dst] != UNREACHABLE
    edges = np.stack([g.vertex_ids[src[inside]], g.vertex_ids[dst[inside]]], axis=1)
    sub = Graph.from_edges(ids, edges)
    return EgoGraph(int(v), sub, None if features is None else features[keep])


@dataclass(frozen=True, eq=False)
class DistanceField:
    """Hop distance per local position of ``graph``; UNREACHABLE where disconnected."""

    graph: Graph
    sources: np.ndarray
    dist: np.ndarray

    def __getitem__(self, v) -> np.ndarray | int:
        d = self.dist[self.graph.local(v)]
        return int(d) if np.ndim(d) == 0 else d

    @property
    def reachable(self) -> np.ndarray:
        return self.dist != UNREACHABLE


def multi_source_bfs(g: Graph, sources: Iterable[int], max_hops: int | None = None) -> DistanceField:
    """Minimum hop distance from any source, level-synchronous over the CSR arrays."""
    src = np.unique(np.asarray(list(sources), dtype=np.int64))
    if src.size == 0:
        raise ValueError("source set must be nonempty")
    local = np.atleast_1d(g.local(src))
    dist = np.full(g.num_vertices, UNREACHABLE, dtype=np.int64)
    dist[local] = 0
    frontier = local
    level = 0
    indptr, indices = g.indptr, g.indices
    while frontier.size and (max_hops is None or level < max_hops):
        starts, ends = indptr[frontier], indptr[frontier + 1]
        counts = ends - starts
        if counts.sum() == 0:
            break
        offsets = np.repeat(starts - np.cumsum(counts) + counts, counts) + np.arange(counts.sum())
        nbrs = np.unique(indices[offsets])
        nbrs = nbrs[dist[nbrs] == UNREACHABLE]
        level += 1
        dist[nbrs] = level
        frontier = nbrs
    return DistanceField(g, src, dist)


def degree(g: Graph, v: int) -> int:
    i = g.local(v)
    return int(g.indptr[i + 1] - g.indptr[i])


def coverage_radius(g: Graph, covered: Iterable[int], centers: Iterable[int]) -> int:
    """max over covered-but-not-center vertices of the hop distance to the nearest center."""
    centers = np.unique(np.asarray(list(centers), dtype=np.int64))
    if centers.size == 0:
        raise ValueError("center set must be nonempty")
    covered = np.setdiff1d(np.asarray(list(covered), dtype=np.int64), centers)
    if covered.size == 0:
        return 0
    d = multi_source_bfs(g, centers).dist[g.local(covered)]
    if np.any(d == UNREACHABLE):
        return UNREACHABLE
    return int(d.max())


# ---------------------------------------------------------------------------
# Stream file format

STREAM_KEYS = {"feature_dim", "num_classes", "batches", "edges"}
BATCH_KEYS = {"vertices", "labels", "features"}


def stream_to_dict(stream: TaskStream) -> dict:
    return {
        "feature_dim": int(stream.feature_dim),
        "num_classes": int(stream.num_classes),
        "batches": [
            {
                "vertices": b.vertex_ids.tolist(),
                "labels": b.labels.tolist(),
                "features": b.features.tolist(),
            }
            for b in stream.batches
        ],
        "edges": [[int(u), int(v), int(t)] for (u, v), t in zip(stream.edges, stream.edge_tags)],
    }


def dumps_stream(stream: TaskStream) -> str:
    """Canonical text: one feature row / edge per line so errors can point at lines."""
    d = stream_to_dict(stream)
    out = ["{", f'"feature_dim": {d["feature_dim"]},', f'"num_classes": {d["num_classes"]},', '"batches": [']
    for bi, b in enumerate(d["batches"]):
        out.append("{")
        out.append(f'"vertices": {json.dumps(b["vertices"])},')
        out.append(f'"labels": {json.dumps(b["labels"])},')
        out.append('"features": [')
        rows = [json.dumps(r) for r in b["features"]]
        out.append(",\n".join(rows))
        out.append("]")
        out.append("}" + ("," if bi < len(d["batches"]) - 1 else ""))
    out.append("],")
    out.append('"edges": [')
    out.append(",\n".join(json.dumps(e) for e in d["edges"]))
    out.append("]")
    out.append("}")
    return "\n".join(out) + "\n"


def write_stream(stream: TaskStream, path: str | Path) -> None:
    Path(path).write_text(dumps_stream(stream), encoding="utf-8")


_TOKEN = re.compile(r'\s*(?:(")|([\[\]{},:])|([^\s\[\]{},:"]+))')


def _locate(text: str, path: Sequence) -> int | None:
    """Line number where the value at ``path`` starts in JSON ``text``."""
    pos = 0
    stack: list[list] = []  # [kind, key_or_index, expecting_key]
    current: list = []
    expecting_value_key = None
    target = list(path)

    def here():
        return [s[1] for s in stack]

    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            return None
        start = m.start(1) if m.group(1) else (m.start(2) if m.group(2) else m.start(3))
        if m.group(1):
            s, end = json.decoder.scanstring(text, m.end(1))
            pos = end
            if stack and stack[-1][0] == "obj" and stack[-1][2]:
                stack[-1][1] = s
                stack[-1][2] = False
                continue
            if here() == target:
                return text.count("\n", 0, start) + 1
            continue
        tok = m.group(2) or m.group(3)
        pos = m.end()
        if tok in "[{" and m.group(2):
            if here() == target:
                return text.count("\n", 0, start) + 1
            stack.append(["arr", 0, False] if tok == "[" else ["obj", None, True])
        elif tok in "]}" and m.group(2):
            stack.pop()
        elif tok == ",":
            if stack[-1][0] == "arr":
                stack[-1][1] += 1
            else:
                stack[-1][2] = True
        elif tok == ":":
            pass
        else:
            if here() == target:
                return text.count("\n", 0, start) + 1
    return None


def _fail(text: str, path: Sequence, message: str):
    raise StreamFormatError(message, _locate(text, path))


def loads_stream(text: str) -> TaskStream:
    """Parse and validate stream JSON; errors carry the offending line."""
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise StreamFormatError(exc.msg, exc.lineno) from None
    if not isinstance(d, dict):
        raise StreamFormatError("top level must be an object", 1)
    missing = STREAM_KEYS - d.keys()
    if missing:
        raise StreamFormatError(f"missing key(s) {sorted(missing)}", 1)
    extra = d.keys() - STREAM_KEYS
    if extra:
        _fail(text, [sorted(extra)[0]], f"unknown key {sorted(extra)[0]!r}")
    p, c = d["feature_dim"], d["num_classes"]
    if not isinstance(p, int) or p < 1:
        _fail(text, ["feature_dim"], "feature_dim must be a positive integer")
    if not isinstance(c, int) or c < 1:
        _fail(text, ["num_classes"], "num_classes must be a positive integer")
    batches = []
    total = sum(len(b.get("vertices", [])) for b in d["batches"] if isinstance(b, dict))
    owner = np.zeros(total, dtype=np.int64)
    for bi, b in enumerate(d["batches"]):
        if not isinstance(b, dict) or set(b) != BATCH_KEYS:
            _fail(text, ["batches", bi], f"batch must have exactly keys {sorted(BATCH_KEYS)}")
        ids = b["vertices"]
        for k, v in enumerate(ids):
            if not isinstance(v, int) or not 0 <= v < total:
                _fail(text, ["batches", bi, "vertices", k], f"vertex id {v!r} not in [0, {total})")
            if owner[v]:
                _fail(text, ["batches", bi, "vertices", k], f"vertex {v} already in batch {owner[v]}")
            owner[v] = bi + 1
        if len(b["labels"]) != len(ids):
            _fail(text, ["batches", bi, "labels"], "label count differs from vertex count")
        for k, y in enumerate(b["labels"]):
            if not isinstance(y, int) or not 0 <= y < c:
                _fail(text, ["batches", bi, "labels", k], f"label {y!r} not in [0, {c})")
        if len(b["features"]) != len(ids):
            _fail(text, ["batches", bi, "features"], "feature row count differs from vertex count")
        for k, row in enumerate(b["features"]):
            if not isinstance(row, list) or len(row) != p:
                _fail(text, ["batches", bi, "features", k], f"feature row must have {p} entries")
        feats = np.asarray(b["features"], dtype=np.float64).reshape(len(ids), p)
        if not np.isfinite(feats).all():
            k = int(np.flatnonzero(~np.isfinite(feats).all(axis=1))[0])
            _fail(text, ["batches", bi, "features", k], "non-finite feature value")
        batches.append(VertexBatch(np.asarray(ids, dtype=np.int64), feats, np.asarray(b["labels"], dtype=np.int64)))
    edges = []
    tags = []
    for k, e in enumerate(d["edges"]):
        if not (isinstance(e, list) and len(e) == 3 and all(isinstance(x, int) for x in e)):
            _fail(text, ["edges", k], "edge must be [u, v, task_tag]")
        u, v, t = e
        if not (0 <= u < total and 0 <= v < total):
            _fail(text, ["edges", k], f"edge endpoint outside [0, {total})")
        if u == v:
            _fail(text, ["edges", k], "self-loop")
        if t != max(owner[u], owner[v]):
            _fail(text, ["edges", k], f"tag {t} != max endpoint task {max(owner[u], owner[v])}")
        edges.append((u, v))
        tags.append(t)
    stream = TaskStream(
        batches,
        np.asarray(edges, dtype=np.int64).reshape(-1, 2),
        np.asarray(tags, dtype=np.int64),
        c,
        p,
    )
    stream.validate()
    return stream


def read_stream(path: str | Path) -> TaskStream:
    return loads_stream(Path(path).read_text(encoding="utf-8"))
