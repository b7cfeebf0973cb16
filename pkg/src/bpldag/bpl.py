"""Bernoulli-Plackett-Luce distribution over DAGs.

A DAG is drawn as a pair ``(perm, mask)``: a Plackett-Luce permutation with
node logits ``theta`` and an independent Bernoulli edge mask with
probabilities ``sigmoid(edge_logits)``. The edge ``i -> j`` is kept iff it is
in the mask and ``i`` precedes ``j`` in the permutation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import expit, logit

from .graph import adjacency_from_sample, is_permutation

DEFAULT_EDGE_PROB = 0.1


@dataclass
class BplParams:
    theta: np.ndarray
    edge_logits: np.ndarray
    forbidden_mask: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        n = self.theta.shape[0]
        self.edge_logits = np.asarray(self.edge_logits, dtype=float).reshape(n, n)
        forbidden = np.asarray(self.forbidden_mask, dtype=bool).reshape(n, n).copy()
        np.fill_diagonal(forbidden, True)
        self.forbidden_mask = forbidden

    @classmethod
    def init(cls, n: int, theta=None, edge_prob: float = DEFAULT_EDGE_PROB, forbidden=None):
        """Default start: uniform ordering, sparse edges.

        ``theta`` lets the caller seed the ordering (e.g. from expected node
        centralities); ``forbidden`` pins edge probabilities to zero.
        """
        theta = np.zeros(n) if theta is None else np.asarray(theta, dtype=float)
        edge_logits = np.full((n, n), float(logit(edge_prob)))
        if forbidden is None:
            forbidden = np.zeros((n, n), dtype=bool)
        return cls(theta, edge_logits, forbidden)

    @property
    def n(self) -> int:
        return self.theta.shape[0]

    @property
    def free(self) -> np.ndarray:
        return ~self.forbidden_mask

    @property
    def edge_probs(self) -> np.ndarray:
        return np.where(self.forbidden_mask, 0.0, expit(self.edge_logits))

    def copy(self) -> "BplParams":
        return BplParams(self.theta.copy(), self.edge_logits.copy(), self.forbidden_mask.copy())

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "theta": self.theta.tolist(),
            "edge_logits": self.edge_logits.ravel().tolist(),
            "forbidden_mask": self.forbidden_mask.astype(int).ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "BplParams":
        theta = np.asarray(obj["theta"], dtype=float)
        n = theta.shape[0]
        return cls(
            theta,
            np.asarray(obj["edge_logits"], dtype=float).reshape(n, n),
            np.asarray(obj["forbidden_mask"], dtype=bool).reshape(n, n),
        )


@dataclass
class DagSample:
    perm: np.ndarray
    mask: np.ndarray

    @property
    def adjacency(self) -> np.ndarray:
        return adjacency_from_sample(self.perm, self.mask)


# ---------------------------------------------------------------- sampling


def sample_permutation(theta, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """Plackett-Luce draw via the Gumbel-argsort trick.

    Returns shape ``(n,)``, or ``(size, n)`` when ``size`` is given.
    """
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("Plackett-Luce logits must be finite")
    shape = theta.shape if size is None else (size,) + theta.shape
    keys = theta + rng.gumbel(size=shape)
    return np.argsort(-keys, axis=-1, kind="stable")


def sample_edges(params: BplParams, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    n = params.n
    shape = (n, n) if size is None else (size, n, n)
    return (rng.random(shape) < params.edge_probs).astype(np.int8)


def sample_dag(params: BplParams, rng: np.random.Generator) -> DagSample:
    return DagSample(sample_permutation(params.theta, rng), sample_edges(params, rng))


def sample_dags(params: BplParams, rng: np.random.Generator, size: int):
    """Draw ``size`` DAGs at once: ``(perms, masks, adjacency)`` stacks."""
    perms = sample_permutation(params.theta, rng, size)
    masks = sample_edges(params, rng, size)
    return perms, masks, adjacency_from_sample(perms, masks)


# ---------------------------------------------------------------- log-probabilities and scores


def _suffix_logsumexp(x: np.ndarray) -> np.ndarray:
    return np.logaddexp.accumulate(x[..., ::-1], axis=-1)[..., ::-1]


def pl_log_prob(theta, perm) -> np.ndarray | float:
    theta = np.asarray(theta, dtype=float)
    perm = np.asarray(perm)
    th = theta[perm]
    out = np.sum(th - _suffix_logsumexp(th), axis=-1)
    return float(out) if out.ndim == 0 else out


def pl_score(theta, perm) -> np.ndarray:
    """Gradient of ``pl_log_prob`` w.r.t. ``theta`` in O(n) per permutation.

    For the item at position ``m``: ``1 - exp(theta) * sum_{k<=m} 1/Z_k`` with
    ``Z_k`` the suffix normaliser; the running sum is kept in log space.
    """
    theta = np.asarray(theta, dtype=float)
    perm = np.asarray(perm)
    th = theta[perm]
    log_inv_z = -_suffix_logsumexp(th)
    cum = np.logaddexp.accumulate(log_inv_z, axis=-1)
    by_position = 1.0 - np.exp(th + cum)
    out = np.empty_like(by_position)
    np.put_along_axis(out, perm, by_position, axis=-1)
    return out


def bernoulli_score(mask, params: BplParams) -> np.ndarray:
    """``d log p(mask) / d edge_logits``: ``b - p`` on free entries, 0 elsewhere."""
    return np.where(params.forbidden_mask, 0.0, np.asarray(mask, dtype=float) - params.edge_probs)


def bpl_log_prob(params: BplParams, perm, mask) -> float:
    p = params.edge_probs
    b = np.asarray(mask, dtype=bool)
    free = params.free
    with np.errstate(divide="ignore"):
        lb = np.where(b, np.log(p), np.log1p(-p))
    if np.any(b & ~free):
        return -np.inf
    return pl_log_prob(params.theta, perm) + float(lb[free].sum())


# ---------------------------------------------------------------- closed forms


def precedence_matrix(theta) -> np.ndarray:
    """``P[i, j] = Pr(i precedes j)``; the diagonal is set to 0."""
    theta = np.asarray(theta, dtype=float)
    q = expit(theta[:, None] - theta[None, :])
    np.fill_diagonal(q, 0.0)
    return q


def prob_precedes(theta, i: int, j: int) -> float:
    if i == j:
        raise ValueError("prob_precedes needs distinct nodes")
    theta = np.asarray(theta, dtype=float)
    return float(expit(theta[i] - theta[j]))


def _triple_factor(theta, i, j, k) -> float:
    t = np.asarray(theta, dtype=float)[[i, j, k]]
    u = np.exp(t - t.max())
    return float(u[1] / u.sum())


def _check_distinct(*idx) -> None:
    if len(set(idx)) != len(idx):
        raise ValueError(f"indices must be pairwise distinct, got {idx}")


def prob_joint_precedes(theta, i: int, j: int, k: int) -> float:
    """``Pr(i precedes j and k precedes j)``."""
    _check_distinct(i, j, k)
    return prob_precedes(theta, i, j) * prob_precedes(theta, k, j) * (1.0 + _triple_factor(theta, i, j, k))


def expected_edge_matrix(params: BplParams) -> np.ndarray:
    """``E[a_ij] = p_ij * Pr(i precedes j)``; zero on diagonal and forbidden entries."""
    return params.edge_probs * precedence_matrix(params.theta)


def edge_covariance(params: BplParams, i: int, k: int, j: int) -> float:
    """``Cov(a_ij, a_kj)`` for two edges into the same child ``j``."""
    _check_distinct(i, k, j)
    p = params.edge_probs
    theta = params.theta
    return float(
        p[i, j] * p[k, j] * prob_precedes(theta, i, j) * prob_precedes(theta, k, j)
        * _triple_factor(theta, i, j, k)
    )


def expected_edge_count_and_grad(params: BplParams):
    """Expected number of edges and its gradient.

    Returns ``(value, d_theta, d_edge_logits)``.
    """
    value = float(np.sum(expected_edge_matrix(params)))
    d_theta, d_logits = expected_edge_vjp(params, np.ones((params.n, params.n)))
    return value, d_theta, d_logits


def expected_edge_vjp(params: BplParams, g_expected):
    """Pull a gradient w.r.t. ``E[a]`` back to ``(d_theta, d_edge_logits)``."""
    p = params.edge_probs
    q = precedence_matrix(params.theta)
    g = np.asarray(g_expected, dtype=float)
    d_logits = np.where(params.forbidden_mask, 0.0, g * p * (1.0 - p) * q)
    c = g * p * q * (1.0 - q)
    np.fill_diagonal(c, 0.0)
    d_theta = c.sum(axis=1) - c.sum(axis=0)
    return d_theta, d_logits


# ---------------------------------------------------------------- Fisher information

EXACT_FISHER_MAX_NODES = 16


def observed_information_trace(theta, perm) -> np.ndarray | float:
    """Trace of ``-Hessian log p(perm)``: ``sum_k (1 - sum_{u>=k} s_ku^2)``.

    ``s_k`` is the softmax over the items still unplaced at stage ``k``.
    """
    theta = np.asarray(theta, dtype=float)
    th = theta[np.asarray(perm)]
    log_z = _suffix_logsumexp(th)
    log_z2 = _suffix_logsumexp(2.0 * th)
    out = np.sum(1.0 - np.exp(log_z2 - 2.0 * log_z), axis=-1)
    return float(out) if out.ndim == 0 else out


def fisher_trace(theta, rng: Optional[np.random.Generator] = None, n_samples: int = 100_000) -> float:
    """``tr I(theta) = E||pl_score||^2``.

    The per-permutation stage formula depends on the sampled order, so the
    Fisher trace is its expectation over permutations. Computed exactly by
    dynamic programming over the set of still-unplaced items for
    ``n <= 16``; above that a Monte Carlo average of the per-permutation
    trace is returned (``rng`` required).
    """
    theta = np.asarray(theta, dtype=float)
    n = theta.shape[0]
    if n <= 1:
        return 0.0
    if n > EXACT_FISHER_MAX_NODES:
        if rng is None:
            raise ValueError(f"n={n} needs an rng for the Monte Carlo estimate")
        perms = sample_permutation(theta, rng, n_samples)
        return float(np.mean(observed_information_trace(theta, perms)))

    w = np.exp(theta - theta.max())
    n_sets = 1 << n
    sets = np.arange(n_sets)
    members = ((sets[:, None] >> np.arange(n)) & 1).astype(bool)
    z = members @ w
    z2 = members @ (w * w)
    stage = np.zeros(n_sets)
    nonempty = z > 0
    stage[nonempty] = 1.0 - z2[nonempty] / z[nonempty] ** 2

    # sets are visited largest first: removing an item lowers the bitmask value
    reach = np.zeros(n_sets)
    reach[n_sets - 1] = 1.0
    popcount = members.sum(axis=1)
    for size in range(n, 1, -1):
        layer = sets[popcount == size]
        for item in range(n):
            has = layer[members[layer, item]]
            np.add.at(reach, has ^ (1 << item), reach[has] * w[item] / z[has])
    return float(np.dot(reach, stage))


def variance_bound(centered_rewards, params: BplParams) -> float:
    """Variance bound ``max (f - m)^2 * (n + sum_ij p_ij (1 - p_ij))``."""
    p = params.edge_probs
    return float(np.max(np.square(centered_rewards)) * (params.n + np.sum(p * (1.0 - p))))


# ---------------------------------------------------------------- checkpoint I/O


def save_checkpoint(path, params: BplParams, conditional=None, **extra) -> None:
    obj = params.to_dict()
    if conditional is not None:
        obj["conditional"] = conditional.to_dict()
    obj.update(extra)
    Path(path).write_text(json.dumps(obj, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path):
    """Return ``(params, conditional_or_None)``."""
    from .conditionals import model_from_dict

    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    model = model_from_dict(obj["conditional"]) if "conditional" in obj else None
    return BplParams.from_dict(obj), model


__all__ = [
    "BplParams",
    "DagSample",
    "bernoulli_score",
    "bpl_log_prob",
    "edge_covariance",
    "expected_edge_count_and_grad",
    "expected_edge_vjp",
    "expected_edge_matrix",
    "fisher_trace",
    "is_permutation",
    "load_checkpoint",
    "observed_information_trace",
    "pl_log_prob",
    "pl_score",
    "precedence_matrix",
    "prob_joint_precedes",
    "prob_precedes",
    "sample_dag",
    "sample_dags",
    "sample_edges",
    "sample_permutation",
    "save_checkpoint",
    "variance_bound",
]
