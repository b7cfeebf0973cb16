"""Learn DAGs from interventional data by optimising an expected score under a
Bernoulli-Plackett-Luce distribution over graphs."""

__version__ = "0.1.0"

from .bpl import (
    BplParams,
    DagSample,
    expected_edge_matrix,
    fisher_trace,
    load_checkpoint,
    pl_log_prob,
    pl_score,
    sample_dag,
    sample_dags,
    save_checkpoint,
)
from .conditionals import LinearGaussian, MlpGaussian, make_model
from .estimators import analytic_gradient, analytic_score, reinforce_step, variance_report
from .graph import evaluate_graph, is_dag, kendall_tau_partial, shd
from .objective import DataError, InterventionalDataset, interventional_score, load_dataset_dir, save_dataset
from .synth import generate, run_benchmark, sample_er_dag
from .trainer import FitResult, NumericalAbort, TrainConfig, extract_graph, fit

__all__ = [
    "BplParams", "DagSample", "DataError", "FitResult", "InterventionalDataset", "LinearGaussian",
    "MlpGaussian", "NumericalAbort", "TrainConfig", "analytic_gradient", "analytic_score",
    "evaluate_graph", "expected_edge_matrix", "extract_graph", "fisher_trace", "fit", "generate",
    "interventional_score", "is_dag", "kendall_tau_partial", "load_checkpoint", "load_dataset_dir",
    "make_model", "pl_log_prob", "pl_score", "reinforce_step", "run_benchmark", "sample_dag",
    "sample_dags", "sample_er_dag", "save_checkpoint", "save_dataset", "shd", "variance_report",
]
