"""Kernel mean matching of buffer embeddings across two graph snapshots.

The weights solve min_beta ||sum_v beta_v phi(h_v) - sum_v phi(h'_v)||^2 over
a box, i.e. the convex QP  beta^T K beta - 2 kappa^T beta + const.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .gnn import ModelParams, embeddings_for
from .graph import Graph

UPPER_EPS = 1e-9


@dataclass(frozen=True)
class KernelSpec:
    scales: tuple[float, ...] = (1.0, 0.1, 0.01)

    def __post_init__(self):
        if not self.scales or any(a <= 0 for a in self.scales):
            raise ValueError("kernel scales must be positive")

    def gram(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        d = cdist(np.atleast_2d(x), np.atleast_2d(y), metric="euclidean")
        return sum(np.exp(-a * d) for a in self.scales)


@dataclass(frozen=True)
class BetaBounds:
    lower: float = 0.1
    upper: float = 10.0

    def __post_init__(self):
        if not 0 <= self.lower < self.upper:
            raise ValueError("bounds need 0 <= lower < upper")


@dataclass
class KmmProblem:
    K: np.ndarray
    kappa: np.ndarray
    const: float

    def objective(self, beta: np.ndarray) -> float:
        return float(beta @ self.K @ beta - 2.0 * self.kappa @ beta + self.const)


@dataclass
class QPResult:
    beta: np.ndarray
    objective: float
    iterations: int
    residual: float
    history: list[float] = field(default_factory=list)


def kernel_eval(spec: KernelSpec, x: np.ndarray, y: np.ndarray) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch {x.shape} vs {y.shape}")
    r = float(np.linalg.norm(x - y))
    return float(sum(np.exp(-a * r) for a in spec.scales))


def build_problem(h_new: np.ndarray, h_old: np.ndarray, spec: KernelSpec = KernelSpec()) -> KmmProblem:
    h_new, h_old = np.atleast_2d(h_new), np.atleast_2d(h_old)
    if h_new.shape != h_old.shape:
        raise ValueError(f"embedding tables differ in shape: {h_new.shape} vs {h_old.shape}")
    K = spec.gram(h_new, h_new)
    K = 0.5 * (K + K.T)
    kappa = spec.gram(h_new, h_old).sum(axis=1)
    const = float(spec.gram(h_old, h_old).sum())
    return KmmProblem(K, kappa, const)


def with_sum_penalty(prob: KmmProblem, weight: float) -> KmmProblem:
    """Add weight * (sum(beta) - n)^2, a soft version of the usual KMM normalization."""
    n = len(prob.kappa)
    if weight == 0 or n == 0:
        return prob
    return KmmProblem(prob.K + weight * np.ones((n, n)), prob.kappa + weight * n, prob.const + weight * n * n)


def _power_iteration(K: np.ndarray, iters: int = 100) -> float:
    v = np.ones(K.shape[0]) / np.sqrt(K.shape[0])
    lam = 0.0
    for _ in range(iters):
        w = K @ v
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        lam, v = float(v @ w), w / nrm
    return lam


def solve_box_qp(prob: KmmProblem, bounds: BetaBounds = BetaBounds(), tol: float = 1e-8,
                 max_iter: int = 5000, beta0: np.ndarray | None = None) -> QPResult:
    """Projected gradient descent on beta^T K beta - 2 kappa^T beta over [lower, upper).

    The step is 1/L with L an estimate of 2*lambda_max(K); L doubles whenever a
    step would raise the objective, which keeps the sequence monotone. Every
    few iterations the free coordinates get an exact reduced solve, accepted
    only if it lowers the objective after projection.
    """
    K = np.asarray(prob.K, dtype=float)
    kappa = np.asarray(prob.kappa, dtype=float)
    if not (np.isfinite(K).all() and np.isfinite(kappa).all() and np.isfinite(prob.const)):
        raise FloatingPointError("non-finite KMM problem data")
    n = len(kappa)
    lo, hi = bounds.lower, bounds.upper - UPPER_EPS
    if n == 0:
        return QPResult(np.zeros(0), float(prob.const), 0, 0.0)
    K = 0.5 * (K + K.T)
    # clip negative eigenvalues from round-off so the problem stays convex
    evals, evecs = np.linalg.eigh(K)
    if evals.min() < 0:
        K = (evecs * np.maximum(evals, 0.0)) @ evecs.T
    prob = KmmProblem(K, kappa, prob.const)

    def f(b):
        return prob.objective(b)

    def grad(b):
        return 2.0 * (K @ b - kappa)

    def residual(b):
        return float(np.linalg.norm(b - np.clip(b - grad(b), lo, hi)))

    L = max(2.0 * _power_iteration(K) * 1.01, 1e-12)
    beta = np.clip(np.ones(n) if beta0 is None else np.asarray(beta0, dtype=float), lo, hi)
    fval = f(beta)
    history = [fval]
    it = 0
    for it in range(1, max_iter + 1):
        if residual(beta) <= tol:
            break
        g = grad(beta)
        while True:
            cand = np.clip(beta - g / L, lo, hi)
            fc = f(cand)
            if fc <= fval + 1e-12 * max(1.0, abs(fval)):
                break
            L *= 2.0
        beta, fval = cand, fc
        if it % 10 == 0:
            free = (beta > lo) & (beta < hi)
            if free.any():
                fixed = ~free
                rhs = kappa[free] - K[np.ix_(free, fixed)] @ beta[fixed]
                sol = np.linalg.lstsq(K[np.ix_(free, free)], rhs, rcond=None)[0]
                trial = beta.copy()
                trial[free] = sol
                trial = np.clip(trial, lo, hi)
                ft = f(trial)
                if ft < fval:
                    beta, fval = trial, ft
        history.append(fval)
    return QPResult(beta, fval, it, residual(beta), history)


def kmm_weights(params: ModelParams, old_graph: Graph, old_features: np.ndarray, new_graph: Graph,
                new_features: np.ndarray, buffer: Sequence[int], spec: KernelSpec = KernelSpec(),
                bounds: BetaBounds = BetaBounds(), tol: float = 1e-8, max_iter: int = 5000,
                sum_penalty: float = 0.0) -> np.ndarray:
    """Replay weights for ``buffer`` vertices, matching new-snapshot embeddings to old ones.

    Features are rows aligned with each graph's ``vertex_ids``.
    """
    buffer = np.asarray(buffer, dtype=np.int64)
    if buffer.size == 0:
        return np.zeros(0)
    old_rows = old_graph.local(buffer)
    new_rows = new_graph.local(buffer)
    h_old = embeddings_for(params, old_graph, old_features)[old_rows]
    h_new = embeddings_for(params, new_graph, new_features)[new_rows]
    prob = with_sum_penalty(build_problem(h_new, h_old, spec), sum_penalty)
    return solve_box_qp(prob, bounds, tol, max_iter).beta
