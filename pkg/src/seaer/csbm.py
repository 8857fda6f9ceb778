"""Contextual stochastic block model streams.

Each stage holds ``n_per_stage`` vertices split into two communities whose
sizes alternate around n/2 by ``delta``. Within a stage edges follow a plain
two-block SBM; consecutive stages are joined by uniform random edges with
probability ``p_stage``. Features carry a rank-one spike along a direction
shared by the whole stream.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .graph import TaskStream, VertexBatch


@dataclass(frozen=True)
class CsbmConfig:
    n_per_stage: int = 300
    p_dim: int = 500
    mu: float = 5.0
    p_intra: float = 0.15
    p_inter: float = 0.1
    p_stage: float = 0.15
    delta: int = 0
    num_stages: int = 2
    seed: int = 0
    symmetric_labels: bool = False
    consecutive_stages_only: bool = True

    def __post_init__(self):
        if self.n_per_stage < 2 or self.n_per_stage % 2:
            raise ValueError("n_per_stage must be an even integer >= 2")
        if self.p_dim < 1:
            raise ValueError("p_dim must be positive")
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        for name in ("p_intra", "p_inter", "p_stage"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0 <= self.delta <= self.n_per_stage // 2:
            raise ValueError(f"delta must lie in [0, {self.n_per_stage // 2}]")
        if self.num_stages < 1:
            raise ValueError("num_stages must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "CsbmConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown csbm config key(s): {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def community_counts(cfg: CsbmConfig) -> tuple[int, ...]:
    """Community sizes per stage, flattened as (c0^(1), c1^(1), c0^(2), c1^(2), ...).

    Odd stages lean towards community 0, even stages towards community 1.
    """
    half = cfg.n_per_stage // 2
    if cfg.delta > half:
        raise ValueError(f"delta {cfg.delta} exceeds n/2 = {half}")
    out: list[int] = []
    for s in range(1, cfg.num_stages + 1):
        sign = 1 if s % 2 else -1
        out += [half + sign * cfg.delta, half - sign * cfg.delta]
    return tuple(out)


def _bernoulli_pairs(rng: np.random.Generator, a: np.ndarray, b: np.ndarray, p: float) -> np.ndarray:
    keep = rng.random(len(a)) < p
    return np.stack([a[keep], b[keep]], axis=1)


def generate_stream(cfg: CsbmConfig) -> TaskStream:
    """Draw a stream; a pure function of ``cfg`` (seed included)."""
    rng = np.random.default_rng(cfg.seed)
    n, p = cfg.n_per_stage, cfg.p_dim
    counts = community_counts(cfg)
    u = rng.standard_normal(p)
    scale = np.sqrt(cfg.mu / n)

    batches = []
    edge_blocks = []
    tag_blocks = []
    iu, ju = np.triu_indices(n, k=1)
    for s in range(cfg.num_stages):
        ids = np.arange(s * n, (s + 1) * n, dtype=np.int64)
        c0, c1 = counts[2 * s], counts[2 * s + 1]
        labels = rng.permutation(np.concatenate([np.zeros(c0, np.int64), np.ones(c1, np.int64)]))
        spike = 2 * labels - 1 if cfg.symmetric_labels else labels
        z = rng.standard_normal((n, p))
        feats = scale * spike[:, None] * u[None, :] + z / p
        batches.append(VertexBatch(ids, feats, labels))

        same = labels[iu] == labels[ju]
        prob = np.where(same, cfg.p_intra, cfg.p_inter)
        keep = rng.random(len(iu)) < prob
        edge_blocks.append(np.stack([ids[iu[keep]], ids[ju[keep]]], axis=1))
        tag_blocks.append(np.full(int(keep.sum()), s + 1, dtype=np.int64))

        earlier = range(s - 1, s) if cfg.consecutive_stages_only else range(s)
        for r in earlier:
            if r < 0:
                continue
            prev = np.arange(r * n, (r + 1) * n, dtype=np.int64)
            a = np.repeat(prev, n)
            b = np.tile(ids, n)
            pairs = _bernoulli_pairs(rng, a, b, cfg.p_stage)
            edge_blocks.append(pairs)
            tag_blocks.append(np.full(len(pairs), s + 1, dtype=np.int64))

    edges = np.concatenate(edge_blocks) if edge_blocks else np.zeros((0, 2), np.int64)
    tags = np.concatenate(tag_blocks) if tag_blocks else np.zeros(0, np.int64)
    return TaskStream(batches, edges, tags, num_classes=2, feature_dim=p)
