"""Interventional likelihood score and the sparsity-regularized objective."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .bpl import BplParams, expected_edge_count_and_grad

REGIME_WEIGHTINGS = ("empirical", "regime")


class DataError(ValueError):
    """Malformed or inconsistent dataset files."""


@dataclass
class InterventionalDataset:
    """Samples ``X`` (m, n), a regime label per row and the intervened set per regime.

    ``row_weight`` rescales rows inside the batch mean; ``None`` means 1.
    """

    X: np.ndarray
    regime_of: np.ndarray
    intervened: dict
    names: Optional[list] = None
    row_weight: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2:
            raise DataError("X must be a 2-D array")
        self.regime_of = np.asarray(self.regime_of, dtype=int)
        if self.regime_of.shape != (self.X.shape[0],):
            raise DataError("regime_of needs one label per row")
        self.intervened = {int(r): tuple(sorted(int(v) for v in vs)) for r, vs in self.intervened.items()}
        n = self.X.shape[1]
        for r, vs in self.intervened.items():
            if any(v < 0 or v >= n for v in vs):
                raise DataError(f"regime {r} intervenes on an out-of-range variable")
        missing = set(np.unique(self.regime_of).tolist()) - set(self.intervened)
        if missing:
            raise DataError(f"unknown regime label(s): {sorted(missing)}")
        if self.names is None:
            self.names = [f"X{j}" for j in range(n)]
        if self.row_weight is not None:
            self.row_weight = np.asarray(self.row_weight, dtype=float)

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def m(self) -> int:
        return self.X.shape[0]

    def __len__(self) -> int:
        return self.m

    @property
    def regimes(self) -> list:
        return sorted(self.intervened)

    def intervention_matrix(self) -> np.ndarray:
        """Boolean (R_max+1, n) table: row r flags the variables intervened in regime r."""
        table = np.zeros((max(self.intervened) + 1, self.n), dtype=bool)
        for r, vs in self.intervened.items():
            table[r, list(vs)] = True
        return table

    def observed_mask(self) -> np.ndarray:
        """(m, n) boolean: True where the variable is not intervened in the row's regime."""
        return ~self.intervention_matrix()[self.regime_of]

    def subset(self, rows) -> "InterventionalDataset":
        rows = np.asarray(rows)
        return InterventionalDataset(
            self.X[rows], self.regime_of[rows], dict(self.intervened), list(self.names),
            None if self.row_weight is None else self.row_weight[rows], dict(self.meta),
        )

    def split_validation(self, fraction: float):
        """Hold out the last ``fraction`` of rows within each regime."""
        if not 0.0 <= fraction < 1.0:
            raise ValueError("validation fraction must lie in [0, 1)")
        train, val = [], []
        for r in self.regimes:
            rows = np.flatnonzero(self.regime_of == r)
            n_val = int(round(fraction * rows.size))
            if fraction > 0 and rows.size > 1:
                n_val = min(max(n_val, 1), rows.size - 1)
            else:
                n_val = 0
            train.append(rows[: rows.size - n_val])
            val.append(rows[rows.size - n_val :])
        return self.subset(np.concatenate(train)), self.subset(np.concatenate(val))

    def with_regime_weighting(self, scheme: str) -> "InterventionalDataset":
        """Attach row weights for the batch-mean score.

        ``"empirical"``: every row counts once (regimes weighted by their
        share of the data). ``"regime"``: row weight ``1 / share(regime)`` so
        the batch mean estimates the sum over regimes of per-regime means.
        """
        if scheme not in REGIME_WEIGHTINGS:
            raise ValueError(f"unknown regime weighting {scheme!r}")
        if scheme == "empirical":
            weight = None
        else:
            labels, counts = np.unique(self.regime_of, return_counts=True)
            share = dict(zip(labels.tolist(), (counts / self.m).tolist()))
            weight = np.array([1.0 / share[r] for r in self.regime_of.tolist()])
        out = self.subset(np.arange(self.m))
        out.row_weight = weight
        return out


def score_weights(batch: InterventionalDataset) -> np.ndarray:
    """(m, n) coefficients turning per-node log-densities into the batch score."""
    w = batch.observed_mask().astype(float) / batch.m
    if batch.row_weight is not None:
        w *= batch.row_weight[:, None]
    return w


def interventional_score(batch: InterventionalDataset, adjacency, model) -> float | np.ndarray:
    """Batch-mean log-likelihood of the non-intervened variables.

    ``adjacency`` may be a single ``(n, n)`` matrix or a ``(K, n, n)`` stack,
    in which case a length-``K`` array is returned.
    """
    adjacency = getattr(adjacency, "adjacency", adjacency)
    ll = model.loglik(batch.X, adjacency)
    out = np.sum(ll * score_weights(batch), axis=(-2, -1))
    return float(out) if np.ndim(out) == 0 else out


def regularized_objective(batch, adjacency, model, params: BplParams, lam: float = 1.0) -> float:
    """Interventional score minus ``lam`` times the expected edge count."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    count, _, _ = expected_edge_count_and_grad(params)
    return interventional_score(batch, adjacency, model) - lam * count


# ---------------------------------------------------------------- file I/O


def save_dataset(directory, dataset: InterventionalDataset, prefix: str = "") -> dict:
    """Write ``samples.csv``, ``regimes.csv`` and ``interventions.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "samples": directory / f"{prefix}samples.csv",
        "regimes": directory / f"{prefix}regimes.csv",
        "interventions": directory / f"{prefix}interventions.json",
    }
    with open(paths["samples"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(dataset.names)
        for row in dataset.X:
            writer.writerow([repr(float(v)) for v in row])
    with open(paths["regimes"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row_index", "regime_id"])
        for i, r in enumerate(dataset.regime_of.tolist()):
            writer.writerow([i, r])
    obj = {str(r): list(vs) for r, vs in sorted(dataset.intervened.items())}
    paths["interventions"].write_text(json.dumps(obj, sort_keys=True) + "\n", encoding="utf-8")
    return paths


def load_dataset(samples_path, regimes_path, interventions_path) -> InterventionalDataset:
    for p in (samples_path, regimes_path, interventions_path):
        if not Path(p).exists():
            raise DataError(f"missing file: {p}")
    with open(samples_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        names = next(reader)
        rows = [r for r in reader if r]
    if any(len(r) != len(names) for r in rows):
        raise DataError("samples CSV rows do not match the header width")
    try:
        X = np.asarray(rows, dtype=float).reshape(len(rows), len(names))
    except ValueError as exc:
        raise DataError(f"non-numeric sample value: {exc}") from exc
    regime_of = np.full(X.shape[0], -1, dtype=int)
    with open(regimes_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            i = int(rec["row_index"])
            if not 0 <= i < X.shape[0]:
                raise DataError(f"regime row index {i} out of range")
            regime_of[i] = int(rec["regime_id"])
    if np.any(regime_of < 0):
        raise DataError("some sample rows have no regime label")
    raw = json.loads(Path(interventions_path).read_text(encoding="utf-8"))
    intervened = {int(r): vs for r, vs in raw.items()}
    return InterventionalDataset(X, regime_of, intervened, names)


def load_dataset_dir(directory, prefix: str = "") -> InterventionalDataset:
    directory = Path(directory)
    return load_dataset(
        directory / f"{prefix}samples.csv",
        directory / f"{prefix}regimes.csv",
        directory / f"{prefix}interventions.json",
    )
