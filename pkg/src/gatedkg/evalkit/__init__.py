"""Evaluation tooling: metrics, agreement statistics, datasets and runs."""

from .agreement import gwet_ac, percent_agreement, read_ratings_csv
from .dataset import BenchmarkItem, load_dataset, validate_item
from .metrics import exact_match, normalize_answer, token_f1
from .runner import EvalReport, GraphSource, config_hash, run_eval, sweep

__all__ = [
    "BenchmarkItem", "EvalReport", "GraphSource", "config_hash", "exact_match", "gwet_ac", "load_dataset",
    "normalize_answer", "percent_agreement", "read_ratings_csv", "run_eval", "sweep", "token_f1", "validate_item",
]
