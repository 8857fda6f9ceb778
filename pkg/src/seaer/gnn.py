"""Two-layer GCN / mean-SAGE backbone with per-task linear heads.

Everything is full-batch numpy in float64 with hand-derived reverse-mode
gradients, so losses and gradients are exact and reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .graph import Graph

ARCHS = ("GCN", "SAGE")
ACTIVATIONS = ("sigmoid", "relu")
CHECKPOINT_FORMAT = "seaer.checkpoint/v1"


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    weight_decay: float = 5e-4
    epochs: int = 200
    seed: int = 0
    arch: str = "GCN"
    hidden_dim: int = 64
    last_activation: str = "sigmoid"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}")
        if self.last_activation not in ACTIVATIONS:
            raise ValueError(f"last_activation must be one of {ACTIVATIONS}")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be positive")


@dataclass
class ModelParams:
    arch: str
    tensors: dict[str, np.ndarray]
    last_activation: str = "sigmoid"

    @property
    def hidden_dim(self) -> int:
        return self.tensors["layer2.bias"].shape[0]

    @property
    def input_dim(self) -> int:
        key = "layer1.weight" if self.arch == "GCN" else "layer1.self"
        return self.tensors[key].shape[0]

    def heads(self) -> list[int]:
        return sorted(int(k[4:].split(".")[0]) for k in self.tensors if k.startswith("head") and k.endswith(".weight"))

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, {k: v.copy() for k, v in self.tensors.items()}, self.last_activation)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def init_params(input_dim: int, hidden_dim: int, arch: str = "GCN", seed: int = 0,
                last_activation: str = "sigmoid") -> ModelParams:
    if arch not in ARCHS:
        raise ValueError(f"arch must be one of {ARCHS}")
    rng = np.random.default_rng(seed)
    t: dict[str, np.ndarray] = {}
    for layer, fan_in in (("layer1", input_dim), ("layer2", hidden_dim)):
        if arch == "GCN":
            t[f"{layer}.weight"] = _glorot(rng, fan_in, hidden_dim)
        else:
            t[f"{layer}.self"] = _glorot(rng, fan_in, hidden_dim)
            t[f"{layer}.neigh"] = _glorot(rng, fan_in, hidden_dim)
        t[f"{layer}.bias"] = np.zeros(hidden_dim)
    return ModelParams(arch, t, last_activation)


def add_head(params: ModelParams, task: int, num_classes: int, seed: int, std: float = 0.01) -> None:
    rng = np.random.default_rng(seed)
    params.tensors[f"head{task}.weight"] = std * rng.standard_normal((params.hidden_dim, num_classes))
    params.tensors[f"head{task}.bias"] = np.zeros(num_classes)


# ---------------------------------------------------------------------------
# Propagation operators


def normalize_adjacency(g: Graph) -> sp.csr_matrix:
    """D^-1/2 (A + I) D^-1/2 with degrees taken from A + I."""
    n = g.num_vertices
    a = g.to_scipy() + sp.identity(n, format="csr")
    d = np.asarray(a.sum(axis=1)).ravel()
    inv = 1.0 / np.sqrt(d)
    return sp.csr_matrix(sp.diags(inv) @ a @ sp.diags(inv))


def mean_adjacency(g: Graph) -> sp.csr_matrix:
    """Row-normalized A; rows of isolated vertices stay zero."""
    a = g.to_scipy()
    d = np.asarray(a.sum(axis=1)).ravel()
    inv = np.divide(1.0, d, out=np.zeros_like(d), where=d > 0)
    return sp.csr_matrix(sp.diags(inv) @ a)


def propagation(params: ModelParams, g: Graph) -> sp.csr_matrix:
    return normalize_adjacency(g) if params.arch == "GCN" else mean_adjacency(g)


@dataclass
class Prepared:
    """Propagation operator plus its product with the (fixed) input features."""

    op: sp.csr_matrix
    features: np.ndarray
    op_features: np.ndarray


def prepare(params: ModelParams, g: Graph, features: np.ndarray) -> Prepared:
    op = propagation(params, g)
    return Prepared(op, features, op @ features)


def _resolve(params: ModelParams, g: Graph, features: np.ndarray, prep: Prepared | None) -> Prepared:
    if prep is None:
        return prepare(params, g, features)
    if prep.features is not features:
        return Prepared(prep.op, features, prep.op @ features)
    return prep


# ---------------------------------------------------------------------------
# Forward / backward


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _layer(params: ModelParams, name: str, op: sp.csr_matrix, x: np.ndarray, cache: dict,
           px: np.ndarray | None = None) -> np.ndarray:
    t = params.tensors
    if params.arch == "GCN":
        ax = op @ x if px is None else px
        cache[name] = (x, ax)
        return ax @ t[f"{name}.weight"] + t[f"{name}.bias"]
    mx = op @ x if px is None else px
    cache[name] = (x, mx)
    return x @ t[f"{name}.self"] + mx @ t[f"{name}.neigh"] + t[f"{name}.bias"]


def _layer_backward(params: ModelParams, name: str, op: sp.csr_matrix, dz: np.ndarray, cache: dict,
                    grads: dict, need_input: bool) -> np.ndarray | None:
    t = params.tensors
    x, px = cache[name]
    grads[f"{name}.bias"] = dz.sum(axis=0)
    if params.arch == "GCN":
        grads[f"{name}.weight"] = px.T @ dz
        return op.T @ (dz @ t[f"{name}.weight"].T) if need_input else None
    grads[f"{name}.self"] = x.T @ dz
    grads[f"{name}.neigh"] = px.T @ dz
    if not need_input:
        return None
    return dz @ t[f"{name}.self"].T + op.T @ (dz @ t[f"{name}.neigh"].T)


def _check_input(params: ModelParams, features: np.ndarray, g: Graph) -> None:
    if features.ndim != 2 or features.shape[1] != params.input_dim:
        raise ValueError(f"feature dimension {features.shape[-1]} != model input {params.input_dim}")
    if features.shape[0] != g.num_vertices:
        raise ValueError("feature rows must align with graph vertices")


def _embed(params: ModelParams, prep: Prepared, cache: dict) -> np.ndarray:
    op = prep.op
    z1 = _layer(params, "layer1", op, prep.features, cache, prep.op_features)
    h1 = np.maximum(z1, 0.0)
    cache["z1"] = z1
    z2 = _layer(params, "layer2", op, h1, cache)
    h2 = _sigmoid(z2) if params.last_activation == "sigmoid" else np.maximum(z2, 0.0)
    cache["z2"], cache["h2"] = z2, h2
    return h2


def embeddings_for(params: ModelParams, g: Graph, features: np.ndarray, prep: Prepared | None = None) -> np.ndarray:
    """Hidden representation after the second message-passing layer, one row per vertex."""
    _check_input(params, features, g)
    return _embed(params, _resolve(params, g, features, prep), {})


def forward(params: ModelParams, g: Graph, features: np.ndarray, task: int,
            prep: Prepared | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Return (embeddings, logits of head ``task``) for every vertex of ``g``."""
    if f"head{task}.weight" not in params.tensors:
        raise ValueError(f"no prediction head for task {task}")
    h = embeddings_for(params, g, features, prep)
    t = params.tensors
    return h, h @ t[f"head{task}.weight"] + t[f"head{task}.bias"]


@dataclass
class LossTerm:
    """(1 / normalizer) * sum_k weights[k] * CE(head_task(h[rows[k]]), targets[k])."""

    task: int
    rows: np.ndarray
    targets: np.ndarray
    weights: np.ndarray | None = None
    normalizer: float | None = None

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.targets = np.asarray(self.targets, dtype=np.int64)
        self.weights = np.ones(len(self.rows)) if self.weights is None else np.asarray(self.weights, dtype=np.float64)
        if self.normalizer is None:
            self.normalizer = float(max(len(self.rows), 1))


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def weighted_loss_and_grads(params: ModelParams, g: Graph, features: np.ndarray, terms: Sequence[LossTerm],
                            prep: Prepared | None = None) -> tuple[float, dict[str, np.ndarray]]:
    """Sum of weighted, per-set-normalized cross-entropies and its exact gradient."""
    _check_input(params, features, g)
    if not np.isfinite(features).all() or not all(np.isfinite(v).all() for v in params.tensors.values()):
        raise FloatingPointError("non-finite value in features or parameters")
    for term in terms:
        if not np.isfinite(term.weights).all() or (term.weights < 0).any():
            raise FloatingPointError("sample weights must be finite and non-negative")
    prep = _resolve(params, g, features, prep)
    op = prep.op
    cache: dict = {}
    h2 = _embed(params, prep, cache)
    t = params.tensors
    grads = {k: np.zeros_like(v) for k, v in t.items()}
    dh2 = np.zeros_like(h2)
    loss = 0.0
    for term in terms:
        if len(term.rows) == 0:
            continue
        w_head, b_head = t[f"head{term.task}.weight"], t[f"head{term.task}.bias"]
        h = h2[term.rows]
        logp = _log_softmax(h @ w_head + b_head)
        scale = term.weights / term.normalizer
        loss -= float(np.sum(scale * logp[np.arange(len(term.rows)), term.targets]))
        dlogits = np.exp(logp)
        dlogits[np.arange(len(term.rows)), term.targets] -= 1.0
        dlogits *= scale[:, None]
        grads[f"head{term.task}.weight"] += h.T @ dlogits
        grads[f"head{term.task}.bias"] += dlogits.sum(axis=0)
        np.add.at(dh2, term.rows, dlogits @ w_head.T)
    h2v = cache["h2"]
    if params.last_activation == "sigmoid":
        dz2 = dh2 * h2v * (1.0 - h2v)
    else:
        dz2 = dh2 * (cache["z2"] > 0)
    dh1 = _layer_backward(params, "layer2", op, dz2, cache, grads, need_input=True)
    dz1 = dh1 * (cache["z1"] > 0)
    _layer_backward(params, "layer1", op, dz1, cache, grads, need_input=False)
    if not np.isfinite(loss):
        raise FloatingPointError("loss is not finite")
    return loss, grads


def predict(params: ModelParams, g: Graph, features: np.ndarray, task: int, rows: np.ndarray,
            prep: Prepared | None = None) -> np.ndarray:
    _, logits = forward(params, g, features, task, prep)
    return np.argmax(logits[rows], axis=1)


# ---------------------------------------------------------------------------
# Optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(state: AdamState, params: ModelParams, grads: dict[str, np.ndarray], cfg: TrainConfig) -> ModelParams:
    """One Adam update with decoupled weight decay; ``state`` is advanced in place."""
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    out = {}
    for name, p in params.tensors.items():
        g = grads.get(name)
        if g is None:
            out[name] = p
            continue
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        update = (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        out[name] = p - cfg.learning_rate * (update + cfg.weight_decay * p)
    return ModelParams(params.arch, out, params.last_activation)


# ---------------------------------------------------------------------------
# Checkpoints


def checkpoint_to_dict(params: ModelParams) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "arch": params.arch,
        "last_activation": params.last_activation,
        "tensors": [
            {"name": k, "shape": list(v.shape), "data": v.ravel().tolist()}
            for k, v in sorted(params.tensors.items())
        ],
    }


def checkpoint_from_dict(d: dict) -> ModelParams:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {d.get('format')!r}")
    tensors = {}
    for rec in d["tensors"]:
        arr = np.asarray(rec["data"], dtype=np.float64)
        shape = tuple(rec["shape"])
        if arr.size != int(np.prod(shape)):
            raise ValueError(f"tensor {rec['name']}: {arr.size} values for shape {shape}")
        tensors[rec["name"]] = arr.reshape(shape)
    return ModelParams(d["arch"], tensors, d.get("last_activation", "sigmoid"))


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    # json writes floats with repr(), which round-trips float64 exactly
    Path(path).write_text(json.dumps(checkpoint_to_dict(params)), encoding="utf-8")


def load_checkpoint(path: str | Path) -> ModelParams:
    return checkpoint_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
