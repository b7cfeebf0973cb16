"""Brute-force references for small graphs.

Everything here enumerates all ``n!`` orderings (and, for scores, every edge
mask over the pairs each ordering allows). It is deliberately naive and
shares no code path with the closed forms it is used to check, apart from the
conditional model's log-density.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .bpl import BplParams
from .estimators import GradientBundle
from .objective import InterventionalDataset


@dataclass(frozen=True)
class EnumerationBudget:
    max_nodes: int = 6

    def check(self, n: int) -> None:
        if n > self.max_nodes:
            raise ValueError(f"enumeration over n={n} nodes exceeds the budget of {self.max_nodes}")


DEFAULT_BUDGET = EnumerationBudget()


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def permutation_probabilities(theta, budget: EnumerationBudget = DEFAULT_BUDGET):
    """All permutations with their Plackett-Luce probabilities, by the sequential-draw definition."""
    theta = [float(t) for t in theta]
    n = len(theta)
    budget.check(n)
    shift = max(theta)
    w = [math.exp(t - shift) for t in theta]
    out = []
    for perm in itertools.permutations(range(n)):
        prob = 1.0
        for pos, item in enumerate(perm):
            # summed afresh: a running difference loses the small weights to cancellation
            prob *= w[item] / math.fsum(w[u] for u in perm[pos:])
        out.append((perm, prob))
    return out


def exact_pair_stats(theta, budget: EnumerationBudget = DEFAULT_BUDGET):
    """``(P2, P3, total)`` with ``P2[i, j] = Pr(i < j)`` and ``P3[i, j, k] = Pr(i < j, k < j)``.

    ``total`` is the summed probability mass (1 up to rounding).
    """
    n = len(theta)
    P2 = np.zeros((n, n))
    P3 = np.zeros((n, n, n))
    total = 0.0
    for perm, prob in permutation_probabilities(theta, budget):
        pos = [0] * n
        for k, item in enumerate(perm):
            pos[item] = k
        total += prob
        for i in range(n):
            for j in range(n):
                if i != j and pos[i] < pos[j]:
                    P2[i, j] += prob
                    for k in range(n):
                        if k != i and k != j and pos[k] < pos[j]:
                            P3[i, j, k] += prob
    return P2, P3, total


def exact_edge_moments(params: BplParams, budget: EnumerationBudget = DEFAULT_BUDGET):
    """``E[a_ij]`` and ``Cov(a_ij, a_kj)`` (indexed ``[i, k, j]``) by enumeration."""
    n = params.n
    p = params.edge_probs
    P2, P3, _ = exact_pair_stats(params.theta, budget)
    mean = p * P2
    cov = np.zeros((n, n, n))
    for i in range(n):
        for k in range(n):
            for j in range(n):
                if len({i, j, k}) == 3:
                    cov[i, k, j] = p[i, j] * p[k, j] * P3[i, j, k] - mean[i, j] * mean[k, j]
    return mean, cov


def enumerate_dags(params: BplParams, budget: EnumerationBudget = DEFAULT_BUDGET):
    """Yield ``(adjacency, probability)`` for every (ordering, forward-mask) pair.

    Mask entries pointing backwards in the ordering never become edges, so
    they are summed out; only the ``n(n-1)/2`` forward pairs are enumerated.
    """
    n = params.n
    p = params.edge_probs
    for perm, p_perm in permutation_probabilities(params.theta, budget):
        pairs = [(perm[a], perm[b]) for a in range(n) for b in range(a + 1, n)]
        for bits in itertools.product((0, 1), repeat=len(pairs)):
            prob = p_perm
            A = np.zeros((n, n))
            for (i, j), bit in zip(pairs, bits):
                if bit:
                    prob *= p[i, j]
                    A[i, j] = 1.0
                else:
                    prob *= 1.0 - p[i, j]
            if prob > 0.0:
                yield A, prob


def _naive_score(batch: InterventionalDataset, A: np.ndarray, model) -> float:
    ll = model.loglik(batch.X, A)
    total = 0.0
    for row in range(batch.m):
        weight = 1.0 if batch.row_weight is None else batch.row_weight[row]
        hit = batch.intervened[int(batch.regime_of[row])]
        for j in range(batch.n):
            if j not in hit:
                total += weight * ll[row, j]
    return total / batch.m


def exact_expected_score(params: BplParams, model, batch: InterventionalDataset,
                         budget: EnumerationBudget = DEFAULT_BUDGET) -> float:
    """``E_{A ~ BPL(params)}[f(A)]`` summed over every DAG the model can produce."""
    budget.check(params.n)
    total = 0.0
    mass = 0.0
    for A, prob in enumerate_dags(params, budget):
        total += prob * _naive_score(batch, A, model)
        mass += prob
    return total / mass


def exact_gradient(params: BplParams, model, batch: InterventionalDataset, step: float = 1e-5,
                   budget: EnumerationBudget = DEFAULT_BUDGET) -> GradientBundle:
    """Central finite differences of ``exact_expected_score`` over every parameter."""
    budget.check(params.n)

    def f(pr, mo):
        return exact_expected_score(pr, mo, batch, budget)

    def central(setter, base):
        flat = base.ravel()
        out = np.zeros_like(flat)
        for idx in range(flat.size):
            old = flat[idx]
            flat[idx] = old + step
            hi = setter()
            flat[idx] = old - step
            lo = setter()
            flat[idx] = old
            out[idx] = (hi - lo) / (2.0 * step)
        return out.reshape(base.shape)

    pr = params.copy()
    mo = model.copy()
    d_theta = central(lambda: f(pr, mo), pr.theta)
    d_edges = central(lambda: f(pr, mo), pr.edge_logits)
    d_edges[pr.forbidden_mask] = 0.0
    d_model = {k: central(lambda: f(pr, mo), v) for k, v in mo.params.items()}
    return GradientBundle(d_theta, d_edges, d_model, {"score": f(pr, mo)})


__all__ = [
    "EnumerationBudget",
    "enumerate_dags",
    "exact_edge_moments",
    "exact_expected_score",
    "exact_gradient",
    "exact_pair_stats",
    "permutation_probabilities",
]
