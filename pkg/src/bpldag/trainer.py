"""Training loop: adaptive-moment ascent, validation checkpointing, graph extraction."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .bpl import BplParams, expected_edge_matrix, save_checkpoint
from .conditionals import make_model
from .estimators import analytic_gradient, analytic_score, reinforce_step
from .graph import is_dag, save_graph_csv, save_graph_json
from .objective import InterventionalDataset, interventional_score, REGIME_WEIGHTINGS

log = logging.getLogger(__name__)

VALIDATION_EVERY = 100


class NumericalAbort(FloatingPointError):
    """Training produced a non-finite objective or gradient."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state or {}


# ---------------------------------------------------------------- optimizer


class Adam:
    """Adaptive-moment *ascent* on a dict of arrays, updated in place."""

    def __init__(self, lr: float = 0.01, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] += self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def adam_update(state: dict, gradient: np.ndarray, lr: float, beta1: float = 0.9,
                beta2: float = 0.999, eps: float = 1e-8) -> dict:
    """Functional single-array variant: ``state`` holds ``param``, ``m``, ``v``, ``t``."""
    t = state.get("t", 0) + 1
    m = beta1 * state.get("m", 0.0) + (1.0 - beta1) * gradient
    v = beta2 * state.get("v", 0.0) + (1.0 - beta2) * gradient * gradient
    step = lr * (m / (1.0 - beta1**t)) / (np.sqrt(v / (1.0 - beta2**t)) + eps)
    return {"param": state["param"] + step, "m": m, "v": v, "t": t}


# ---------------------------------------------------------------- config and result


@dataclass
class TrainConfig:
    estimator: str = "reinforce"
    steps: int = 5000
    batch_size: int = 64
    learning_rate: float = 0.01
    mc_samples: int = 200
    lam: float = 1.0
    threshold: float = 0.5
    val_fraction: float = 0.2
    seed: int = 0
    subsample_nodes: bool = False
    model: str = "linear"
    mlp_layers: int = 2
    mlp_width: int = 4
    regime_weighting: str = "regime"
    val_every: int = VALIDATION_EVERY
    val_mc_samples: int = 200

    def __post_init__(self):
        if self.estimator not in ("reinforce", "analytic"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")
        if self.steps <= 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise ValueError("steps, batch_size and learning_rate must be positive")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.regime_weighting not in REGIME_WEIGHTINGS:
            raise ValueError(f"unknown regime weighting {self.regime_weighting!r}")
        if self.estimator == "analytic" and self.model != "linear":
            raise ValueError("the analytic estimator needs the linear model")

    @classmethod
    def analytic_defaults(cls, **overrides) -> "TrainConfig":
        base = {"estimator": "analytic", "learning_rate": 0.001, "steps": 20000}
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_json(cls, path, **overrides) -> "TrainConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FitResult:
    params: BplParams
    model: object
    expected_adjacency: np.ndarray
    graph: np.ndarray
    history: list
    best_step: int
    best_val: float
    warnings: list = field(default_factory=list)

    def save(self, directory, prefix: str = "") -> dict:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {
            "checkpoint": directory / f"{prefix}checkpoint.json",
            "graph_json": directory / f"{prefix}graph.json",
            "graph_csv": directory / f"{prefix}graph.csv",
            "history": directory / f"{prefix}history.csv",
        }
        save_checkpoint(paths["checkpoint"], self.params, self.model,
                        best_step=self.best_step, best_val=self.best_val)
        save_graph_json(paths["graph_json"], self.graph)
        save_graph_csv(paths["graph_csv"], self.graph)
        write_history(paths["history"], self.history)
        return paths


HISTORY_COLUMNS = ("step", "train_obj", "val_obj", "grad_var")


def write_history(path, history) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for rec in history:
            val = rec.get("val_obj")
            writer.writerow([rec["step"], repr(rec["train_obj"]),
                             "" if val is None else repr(val), repr(rec["grad_var"])])


# ---------------------------------------------------------------- graph extraction


def extract_graph(params: BplParams, threshold: float = 0.5) -> np.ndarray:
    """Edges whose expected presence strictly exceeds ``threshold``.

    With ``threshold >= 0.5`` a kept edge ``i -> j`` implies ``theta_i >
    theta_j``, so the result is acyclic.
    """
    if threshold < 0.5:
        raise ValueError("threshold below 0.5 does not guarantee an acyclic graph")
    return (expected_edge_matrix(params) > threshold).astype(np.int8)


# ---------------------------------------------------------------- fit


def _validation_objective(val, params, model, config, rng_seed):
    if val.m == 0:
        return None
    if config.estimator == "analytic":
        return analytic_score(val, params, model)
    # fixed draws so successive evaluations compare like with like
    from .bpl import sample_dags

    rng = np.random.default_rng(rng_seed)
    _, _, adjacency = sample_dags(params, rng, config.val_mc_samples)
    chunk = max(1, 2_000_000 // max(1, val.m * val.n))
    total = 0.0
    for start in range(0, adjacency.shape[0], chunk):
        total += float(np.sum(interventional_score(val, adjacency[start:start + chunk], model)))
    return total / adjacency.shape[0]


def _check_finite(step, objective, bundle, params, model):
    arrays = [bundle.d_theta, bundle.d_edge_logits, *bundle.d_model.values()]
    if np.isfinite(objective) and all(np.all(np.isfinite(a)) for a in arrays):
        return
    state = {
        "step": step,
        "objective": objective,
        "params": params.to_dict(),
        "model": model.to_dict(),
    }
    raise NumericalAbort(f"non-finite objective or gradient at step {step}", state)


def _dump_state(path, state) -> None:
    if path is None:
        return
    # non-finite floats are written as strings so the dump stays valid JSON
    def clean(obj):
        if isinstance(obj, float) and not np.isfinite(obj):
            return repr(obj)
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        if isinstance(obj, list):
            return [clean(v) for v in obj]
        return obj

    Path(path).write_text(json.dumps(clean(state), sort_keys=True), encoding="utf-8")


def fit(dataset: InterventionalDataset, config: Optional[TrainConfig] = None,
        params: Optional[BplParams] = None, model=None, dump_path=None) -> FitResult:
    """Maximise the regularized expected score; keep the best validation checkpoint.

    The validation objective (expected score on the held-out rows, without the
    sparsity term) is evaluated every ``config.val_every`` steps and at the
    last step; the returned parameters are those with the highest value.
    """
    config = config or TrainConfig()
    if dataset.m == 0:
        raise ValueError("empty dataset")
    if dataset.n < 2:
        raise ValueError("need at least two variables")
    n = dataset.n
    rng = np.random.default_rng(config.seed)
    notes = []

    std = dataset.X.std(axis=0)
    constant = np.flatnonzero(std == 0)
    if constant.size:
        msg = f"constant column(s) {constant.tolist()}: scale floor will engage"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)

    weighted = dataset.with_regime_weighting(config.regime_weighting)
    train, val = weighted.split_validation(config.val_fraction)
    params = params.copy() if params is not None else BplParams.init(n)
    if model is None:
        model = make_model(config.model, n, rng, config.mlp_layers, config.mlp_width)
    else:
        model = model.copy()
    val_seed = int(rng.integers(2**63 - 1))

    opt = Adam(lr=config.learning_rate)
    history = []
    best = (-np.inf, 0, params.copy(), model.copy())
    for step in range(config.steps):
        rows = rng.integers(0, train.m, size=min(config.batch_size, train.m))
        batch = train.subset(rows)
        if config.estimator == "analytic":
            bundle = analytic_gradient(batch, params, model, subsample=config.subsample_nodes or None,
                                       rng=rng, lam=config.lam)
        else:
            bundle = reinforce_step(batch, params, model, K=config.mc_samples, lam=config.lam, rng=rng)
        objective = bundle.diagnostics["objective"]
        try:
            _check_finite(step, objective, bundle, params, model)
        except NumericalAbort as exc:
            _dump_state(dump_path, exc.state)
            raise
        record = {"step": step, "train_obj": objective, "val_obj": None,
                  "grad_var": bundle.diagnostics.get("grad_var", 0.0)}

        opt.step({"theta": params.theta, "edge_logits": params.edge_logits, **model.params},
                 {"theta": bundle.d_theta, "edge_logits": bundle.d_edge_logits, **bundle.d_model})

        if (step + 1) % config.val_every == 0 or step == config.steps - 1:
            val_obj = _validation_objective(val if val.m else train, params, model, config, val_seed)
            if val_obj is None or not np.isfinite(val_obj):
                state = {"step": step, "params": params.to_dict(), "model": model.to_dict()}
                _dump_state(dump_path, state)
                raise NumericalAbort(f"non-finite validation objective at step {step}", state)
            record["val_obj"] = val_obj
            if val_obj > best[0]:
                best = (val_obj, step, params.copy(), model.copy())
            log.debug("step %d train %.4f val %.4f", step, objective, val_obj)
        history.append(record)

    best_val, best_step, best_params, best_model = best
    graph = extract_graph(best_params, config.threshold)
    assert is_dag(graph)
    return FitResult(best_params, best_model, expected_edge_matrix(best_params), graph,
                     history, best_step, float(best_val), notes)
