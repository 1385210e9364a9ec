"""Federated time-series anomaly detection: python surface of the C++ core."""

from ._core import (
    auc_roc,
    gaussian_kl,
    generate_benchmark,
    metrics,
    mutual_information,
    patch_scores,
    point_adjust,
    run_experiment,
    ssa_decompose,
    threshold_top_r,
    wasserstein_1d,
)

__all__ = [
    "auc_roc",
    "gaussian_kl",
    "generate_benchmark",
    "metrics",
    "mutual_information",
    "patch_scores",
    "point_adjust",
    "run_experiment",
    "ssa_decompose",
    "threshold_top_r",
    "wasserstein_1d",
]
