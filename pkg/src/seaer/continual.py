"""Task-by-task training on an evolving graph with optional replay and KMM weights."""

from __future__ import annotations

import time
import zlib
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .alignment import BetaBounds, KernelSpec, kmm_weights
from .gnn import (AdamState, LossTerm, ModelParams, TrainConfig, adam_step, add_head, embeddings_for, init_params,
                  predict, prepare, weighted_loss_and_grads)
from .graph import Graph, TaskStream, VertexBatch, induce_graph
from .metrics import PerformanceMatrix
from .selection import ExperienceBuffer, Strategy, select

METHODS = ("BARE", "JOINT", "ER")

# named method presets: (method, strategy, alignment)
PRESETS = {
    "BARE": ("BARE", None, False),
    "JOINT": ("JOINT", None, False),
    "ER-IID-RANDOM": ("ER", Strategy.RANDOM, False),
    "ER-DEG": ("ER", Strategy.TOP_DEGREE, False),
    "ER-REP": ("ER", Strategy.REPRESENTATION, False),
    "SEA-ER-WO-SA": ("ER", Strategy.KCENTER_GREEDY, False),
    "SEA-ER": ("ER", Strategy.KCENTER_GREEDY, True),
}


def derive_seed(root: int, *keys: str | int) -> int:
    """Independent 63-bit seed for a named component of a run."""
    key = [k if isinstance(k, int) else zlib.crc32(str(k).encode()) for k in keys]
    ss = np.random.SeedSequence(int(root), spawn_key=tuple(key))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


@dataclass
class ExperimentConfig:
    method: str = "BARE"
    strategy: str = "kcenter_greedy"
    alignment: bool = False
    budget_fraction: float = 0.05
    budget_absolute: int | None = None
    stratify: bool = True
    split_ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    kernel_scales: tuple[float, ...] = (1.0, 0.1, 0.01)
    beta_lower: float = 0.1
    beta_upper: float = 10.0
    beta_sum_penalty: float = 0.0
    standardize: bool = True
    label: str = ""

    def __post_init__(self):
        name = self.method.upper()
        if name in PRESETS and name not in METHODS:
            method, strategy, alignment = PRESETS[name]
            self.method, self.strategy, self.alignment = method, strategy.value, alignment
            self.label = self.label or name
        else:
            self.method = name
            if name == "ER":
                self.label = self.label or f"ER-{self.strategy}" + ("+SA" if self.alignment else "")
            else:
                self.label = self.label or name
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {sorted(set(METHODS) | set(PRESETS))}")
        Strategy.parse(self.strategy)
        self.split_ratios = tuple(float(r) for r in self.split_ratios)
        if len(self.split_ratios) != 3 or min(self.split_ratios) < 0 or abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ValueError("split ratios must be three non-negative numbers summing to 1")
        if not 0 < self.budget_fraction <= 1:
            raise ValueError("budget_fraction must lie in (0, 1]")
        if self.budget_absolute is not None and self.budget_absolute < 1:
            raise ValueError("budget_absolute must be >= 1")
        self.kernel_scales = tuple(float(a) for a in self.kernel_scales)
        BetaBounds(self.beta_lower, self.beta_upper)
        KernelSpec(self.kernel_scales)
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown experiment config key(s): {sorted(unknown)}")
        d = dict(d)
        if "train" in d:
            tk = {f.name for f in fields(TrainConfig)}
            bad = set(d["train"]) - tk
            if bad:
                raise ValueError(f"unknown train config key(s): {sorted(bad)}")
            d["train"] = TrainConfig(**d["train"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_ratios"] = list(self.split_ratios)
        d["kernel_scales"] = list(self.kernel_scales)
        return d


@dataclass
class TaskSplit:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray


def _largest_remainder(total: int, ratios) -> np.ndarray:
    raw = np.asarray(ratios, dtype=float) * total
    out = np.floor(raw).astype(np.int64)
    order = np.argsort(-(raw - out), kind="stable")
    out[order[: total - out.sum()]] += 1
    return out


def split_task(batch: VertexBatch, ratios=(0.6, 0.2, 0.2), seed: int = 0) -> TaskSplit:
    """Class-stratified random train/valid/test split with largest-remainder sizes."""
    ids = np.asarray(batch.vertex_ids, dtype=np.int64)
    if len(ids) < 5:
        raise ValueError("a task needs at least 5 vertices to split")
    rng = np.random.default_rng(seed)
    totals = _largest_remainder(len(ids), ratios)
    classes = np.unique(batch.labels)
    members = [rng.permutation(ids[batch.labels == c]) for c in classes]
    raw = np.array([[len(m) * r for r in ratios] for m in members])
    alloc = np.floor(raw).astype(np.int64)
    row_left = np.array([len(m) for m in members]) - alloc.sum(axis=1)
    col_left = totals - alloc.sum(axis=0)
    frac = raw - alloc
    for flat in np.argsort(-frac, axis=None, kind="stable"):
        c, s = divmod(int(flat), len(ratios))
        if row_left[c] > 0 and col_left[s] > 0:
            alloc[c, s] += 1
            row_left[c] -= 1
            col_left[s] -= 1
    for c in range(len(classes)):
        for s in range(len(ratios)):
            take = min(row_left[c], col_left[s])
            alloc[c, s] += take
            row_left[c] -= take
            col_left[s] -= take
    parts: list[list[np.ndarray]] = [[], [], []]
    for m, counts in zip(members, alloc):
        bounds = np.cumsum(np.concatenate([[0], counts]))
        for s in range(3):
            parts[s].append(m[bounds[s]:bounds[s + 1]])
    return TaskSplit(*(np.sort(np.concatenate(p)) for p in parts))


@dataclass
class RunResult:
    matrix: PerformanceMatrix
    params: ModelParams
    buffers: dict[int, list[int]] = field(default_factory=dict)
    betas: dict[int, list[float]] = field(default_factory=dict)
    valid_rows: list[list[float]] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    splits: dict[int, TaskSplit] = field(default_factory=dict)


@dataclass(frozen=True)
class FeatureScaler:
    """Column z-scoring, shrunk by sqrt(width) so rows have unit mean-square norm; statistics frozen at fit time."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "FeatureScaler":
        sd = x.std(axis=0)
        return cls(x.mean(axis=0), np.where(sd > 1e-12, sd, 1.0) * np.sqrt(x.shape[1]))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.scale


def model_inputs(stream: TaskStream, splits: dict[int, TaskSplit], standardize: bool = True) -> np.ndarray:
    """Feature rows indexed by vertex id, z-scored with task-1 train statistics when ``standardize``.

    Only the first task's train split is used, so later tasks never leak into the transform.
    """
    x = stream.all_features()
    if not standardize:
        return x
    return FeatureScaler.fit(x[splits[1].train])(x)


class _Tasks:
    """Per-task splits and local class indices shared by the continual and joint drivers."""

    def __init__(self, stream: TaskStream, splits: dict[int, TaskSplit], standardize: bool = True):
        self.stream = stream
        self.features = model_inputs(stream, splits, standardize)
        self.labels = stream.all_labels()
        self.splits = splits
        self.classes = {t: np.unique(b.labels) for t, b in enumerate(stream.batches, start=1)}

    @classmethod
    def build(cls, stream: TaskStream, cfg: ExperimentConfig) -> "_Tasks":
        splits = {
            t: split_task(b, cfg.split_ratios, derive_seed(cfg.seed, "split", t))
            for t, b in enumerate(stream.batches, start=1)
        }
        return cls(stream, splits, cfg.standardize)

    def targets(self, task: int, vertices: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.classes[task], self.labels[vertices])

    def term(self, g: Graph, task: int, vertices: np.ndarray, weights=None) -> LossTerm:
        return LossTerm(task, g.local(vertices), self.targets(task, vertices), weights)


def resolve_budget(cfg: ExperimentConfig, train_size: int, num_classes: int) -> int:
    if cfg.budget_absolute is not None:
        b = cfg.budget_absolute
    else:
        b = max(int(np.floor(cfg.budget_fraction * train_size)), num_classes)
    return min(b, train_size)


def _train(params: ModelParams, g: Graph, x: np.ndarray, terms: list[LossTerm], tc: TrainConfig) -> tuple[ModelParams, float]:
    prep = prepare(params, g, x)
    state = AdamState()
    loss = float("nan")
    used = {f"head{t.task}.{k}" for t in terms for k in ("weight", "bias")}
    for _ in range(tc.epochs):
        loss, grads = weighted_loss_and_grads(params, g, x, terms, prep)
        # untouched heads get no update at all, weight decay included
        grads = {k: v for k, v in grads.items() if not k.startswith("head") or k in used}
        params = adam_step(state, params, grads, tc)
    return params, loss


def _accuracy(params: ModelParams, g: Graph, x: np.ndarray, tasks: _Tasks, task: int, vertices: np.ndarray,
              prep=None) -> float:
    if len(vertices) == 0:
        return float("nan")
    pred = predict(params, g, x, task, g.local(vertices), prep)
    return float(np.mean(pred == tasks.targets(task, vertices)))


def evaluate_row(params: ModelParams, stream: TaskStream, i: int, splits: dict[int, TaskSplit],
                 which: str = "test", graph: Graph | None = None, standardize: bool = True) -> list[float]:
    """Accuracy of head j on task j's held-out vertices, embedded in the stage-i graph, j = 1..i."""
    g = induce_graph(stream, i) if graph is None else graph
    tasks = _Tasks(stream, splits, standardize)
    x = tasks.features[g.vertex_ids]
    prep = prepare(params, g, x)
    return [_accuracy(params, g, x, tasks, j, getattr(splits[j], which), prep) for j in range(1, i + 1)]


def run_continual(stream: TaskStream, cfg: ExperimentConfig) -> RunResult:
    """Train on tasks 1..m in order and fill the performance matrix row by row."""
    if cfg.method == "JOINT":
        return run_joint(stream, cfg)
    t_start = time.perf_counter()
    tasks = _Tasks.build(stream, cfg)
    tc = cfg.train
    params = init_params(stream.feature_dim, tc.hidden_dim, tc.arch, derive_seed(cfg.seed, "backbone"),
                         tc.last_activation)
    strategy = Strategy.parse(cfg.strategy)
    spec = KernelSpec(cfg.kernel_scales)
    bounds = BetaBounds(cfg.beta_lower, cfg.beta_upper)
    buffer = ExperienceBuffer(strategy=strategy.value if cfg.method == "ER" else "")
    result = RunResult(PerformanceMatrix(), params, splits=tasks.splits)
    prev_g: Graph | None = None
    for i in range(1, stream.num_tasks + 1):
        g = induce_graph(stream, i)
        x = tasks.features[g.vertex_ids]
        add_head(params, i, len(tasks.classes[i]), derive_seed(cfg.seed, "head", i))
        terms = [tasks.term(g, i, tasks.splits[i].train)]
        if cfg.method == "ER" and buffer.sets:
            replay = buffer.all_vertices()
            if cfg.alignment:
                t0 = time.perf_counter()
                beta = kmm_weights(params, prev_g, tasks.features[prev_g.vertex_ids], g, x, replay, spec, bounds,
                                   sum_penalty=cfg.beta_sum_penalty)
                result.timings[f"kmm_task{i}"] = time.perf_counter() - t0
            else:
                beta = np.ones(len(replay))
            result.betas[i] = beta.tolist()
            offset = 0
            for j in sorted(buffer.sets):
                members = buffer.sets[j]
                terms.append(tasks.term(g, j, members, beta[offset:offset + len(members)]))
                offset += len(members)
        t0 = time.perf_counter()
        params, loss = _train(params, g, x, terms, tc)
        result.timings[f"train_task{i}"] = time.perf_counter() - t0
        result.losses.append(loss)
        if cfg.method == "ER":
            train_i = tasks.splits[i].train
            b = resolve_budget(cfg, len(train_i), len(tasks.classes[i]))
            emb = embeddings_for(params, g, x) if strategy is Strategy.REPRESENTATION else None
            sel_seed = derive_seed(cfg.seed, "select", i)
            chosen = select(strategy, g, train_i, b, sel_seed, labels=tasks.labels[g.vertex_ids], embeddings=emb,
                            stratify=cfg.stratify)
            buffer.add(i, chosen, sel_seed)
            result.buffers[i] = chosen.tolist()
        result.matrix.rows.append(evaluate_row(params, stream, i, tasks.splits, graph=g, standardize=cfg.standardize))
        result.valid_rows.append(evaluate_row(params, stream, i, tasks.splits, "valid", g, cfg.standardize))
        prev_g = g
    result.params = params
    result.timings["total"] = time.perf_counter() - t_start
    return result


def run_joint(stream: TaskStream, cfg: ExperimentConfig) -> RunResult:
    """One model trained on every task's train split over the full graph; a single result row."""
    t_start = time.perf_counter()
    tasks = _Tasks.build(stream, cfg)
    tc = cfg.train
    m = stream.num_tasks
    params = init_params(stream.feature_dim, tc.hidden_dim, tc.arch, derive_seed(cfg.seed, "backbone"),
                         tc.last_activation)
    g = induce_graph(stream, m)
    x = tasks.features[g.vertex_ids]
    terms = []
    for j in range(1, m + 1):
        add_head(params, j, len(tasks.classes[j]), derive_seed(cfg.seed, "head", j))
        terms.append(tasks.term(g, j, tasks.splits[j].train))
    params, loss = _train(params, g, x, terms, tc)
    row = evaluate_row(params, stream, m, tasks.splits, graph=g, standardize=cfg.standardize)
    matrix = PerformanceMatrix([row], joint=m > 1)
    result = RunResult(matrix, params, losses=[loss], splits=tasks.splits)
    result.valid_rows.append(evaluate_row(params, stream, m, tasks.splits, "valid", g, cfg.standardize))
    result.timings["total"] = time.perf_counter() - t_start
    return result
