"""Permutations, adjacency matrices, acyclicity checks and structure metrics.

Adjacency matrices are dense ``(n, n)`` arrays with ``a[i, j] = 1`` iff the
edge ``i -> j`` is present.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np


def _as_square(a, name="adjacency") -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {a.shape}")
    return a


def _check_same_shape(est: np.ndarray, truth: np.ndarray) -> None:
    if est.shape != truth.shape:
        raise ValueError(f"dimension mismatch: {est.shape} vs {truth.shape}")


# ---------------------------------------------------------------- permutations


def perm_inverse(perm) -> np.ndarray:
    """Return ``inv`` with ``inv[perm[k]] = k``; works on stacks of permutations."""
    perm = np.asarray(perm)
    inv = np.empty_like(perm)
    positions = np.broadcast_to(np.arange(perm.shape[-1]), perm.shape)
    np.put_along_axis(inv, perm, positions, axis=-1)
    return inv


def is_permutation(perm) -> bool:
    perm = np.asarray(perm)
    return perm.ndim == 1 and np.array_equal(np.sort(perm), np.arange(perm.size))


def adjacency_from_sample(perm, mask) -> np.ndarray:
    """Keep the masked edges that point forward in the ordering ``perm``.

    ``perm`` may be a single permutation of shape ``(n,)`` with ``mask`` of
    shape ``(n, n)``, or stacks ``(K, n)`` / ``(K, n, n)``.
    """
    perm = np.asarray(perm)
    mask = np.asarray(mask)
    n = perm.shape[-1]
    if mask.shape[-2:] != (n, n) or mask.shape[:-2] != perm.shape[:-1]:
        raise ValueError(f"dimension mismatch: perm {perm.shape}, mask {mask.shape}")
    rank = perm_inverse(perm)
    forward = rank[..., :, None] < rank[..., None, :]
    return (forward & (mask != 0)).astype(np.int8)


# ---------------------------------------------------------------- acyclicity


def is_dag(a) -> bool:
    """Kahn-style elimination: peel off all source nodes until none remain."""
    a = _as_square(a) != 0
    if np.any(np.diag(a)):
        return False
    remaining = np.ones(a.shape[0], dtype=bool)
    while remaining.any():
        indeg = a[np.ix_(remaining, remaining)].sum(axis=0)
        sources = indeg == 0
        if not sources.any():
            return False
        idx = np.flatnonzero(remaining)
        remaining[idx[sources]] = False
    return True


def topological_order(a) -> np.ndarray:
    a = _as_square(a) != 0
    n = a.shape[0]
    indeg = a.sum(axis=0).astype(int)
    order = []
    stack = sorted(np.flatnonzero(indeg == 0).tolist(), reverse=True)
    while stack:
        v = stack.pop()
        order.append(v)
        for w in np.flatnonzero(a[v]):
            indeg[w] -= 1
            if indeg[w] == 0:
                stack.append(int(w))
    if len(order) != n:
        raise ValueError("graph contains a cycle")
    return np.asarray(order, dtype=int)


def transitive_closure(a) -> np.ndarray:
    """Boolean reachability matrix (paths of length >= 1)."""
    reach = _as_square(a) != 0
    n = reach.shape[0]
    for k in range(n):
        reach |= reach[:, k : k + 1] & reach[k : k + 1, :]
    return reach


# ---------------------------------------------------------------- metrics


@dataclass
class MetricReport:
    shd: int
    fdr: float
    tpr: float
    precision: float
    recall: float
    f1: float
    kendall_tau: Optional[float] = None

    def as_dict(self) -> dict:
        return asdict(self)


def shd(est, truth) -> int:
    """Structural Hamming distance; a reversed edge counts once."""
    est = _as_square(est) != 0
    truth = _as_square(truth) != 0
    _check_same_shape(est, truth)
    differs = (est != truth) | (est.T != truth.T)
    return int(np.triu(differs, k=1).sum())


def confusion_metrics(est, truth) -> MetricReport:
    """Directed-edge FDR/TPR/precision/recall/F1 (plus SHD for convenience).

    Conventions: no predicted edges gives ``fdr = 0``; an empty truth gives
    ``tpr = 1``.
    """
    est = _as_square(est) != 0
    truth = _as_square(truth) != 0
    _check_same_shape(est, truth)
    off = ~np.eye(est.shape[0], dtype=bool)
    tp = int((est & truth & off).sum())
    fp = int((est & ~truth & off).sum())
    fn = int((~est & truth & off).sum())
    fdr = fp / (tp + fp) if tp + fp else 0.0
    tpr = tp / (tp + fn) if tp + fn else 1.0
    precision = 1.0 - fdr
    f1 = 2 * precision * tpr / (precision + tpr) if precision + tpr > 0 else 0.0
    return MetricReport(
        shd=shd(est, truth), fdr=fdr, tpr=tpr, precision=precision, recall=tpr, f1=f1
    )


def kendall_tau_partial(scores, truth) -> float:
    """Kendall tau of ``scores`` against the reachability order of ``truth``.

    Only pairs ``(i, j)`` with a directed path ``i -> ... -> j`` are
    compared; the pair is concordant when ``scores[i] > scores[j]``. Ties
    count neither way. Returns 1.0 when no pair is comparable.
    """
    truth = _as_square(truth)
    if not is_dag(truth):
        raise ValueError("truth must be acyclic")
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (truth.shape[0],):
        raise ValueError("scores must have one entry per node")
    reach = transitive_closure(truth)
    total = int(reach.sum())
    if total == 0:
        return 1.0
    diff = scores[:, None] - scores[None, :]
    concordant = int((reach & (diff > 0)).sum())
    discordant = int((reach & (diff < 0)).sum())
    return (concordant - discordant) / total


def evaluate_graph(est, truth, scores=None) -> MetricReport:
    report = confusion_metrics(est, truth)
    if scores is not None:
        report.kendall_tau = kendall_tau_partial(scores, truth)
    return report


# ---------------------------------------------------------------- serialization


def graph_to_json(a) -> dict:
    a = _as_square(a)
    rows, cols = np.nonzero(a)
    return {"n": int(a.shape[0]), "edges": [[int(i), int(j)] for i, j in zip(rows, cols)]}


def graph_from_json(obj: dict) -> np.ndarray:
    n = int(obj["n"])
    a = np.zeros((n, n), dtype=np.int8)
    for i, j in obj["edges"]:
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"edge ({i}, {j}) out of range for n={n}")
        a[i, j] = 1
    return a


def save_graph_json(path, a, **extra) -> None:
    obj = graph_to_json(a)
    obj.update(extra)
    Path(path).write_text(json.dumps(obj, sort_keys=True) + "\n", encoding="utf-8")


def load_graph_json(path) -> np.ndarray:
    return graph_from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def save_graph_csv(path, a) -> None:
    a = _as_square(a)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in a:
            writer.writerow([int(v != 0) for v in row])


def load_graph_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [[int(v) for v in row] for row in csv.reader(fh) if row]
    return _as_square(np.asarray(rows, dtype=np.int8))


def load_graph(path) -> np.ndarray:
    """Load a graph from ``.json`` or dense ``.csv`` depending on the suffix."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return load_graph_csv(path)
    return load_graph_json(path)
