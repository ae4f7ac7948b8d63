"""Kernel-based multi-task contextual bandits for network configuration tuning.

A toolkit for running upper-confidence-bound contextual bandits across a
fleet of similar tasks (base stations), sharing observations through a
task-similarity kernel.  Ships the similarity estimators, the synthetic and
trace-driven evaluation environments, and an experiment-runner CLI.
"""

__version__ = "0.1.0"

from .kernels import KernelSpec, eval_kernel, gram, median_heuristic, product_kernel
from .krr import AugmentedContext, CholeskyModel, ModelState, Prediction, fit_predict_batch
from .similarity import TaskDataset, cke_distance_sq, cke_similarity, r2_similarity

__all__ = [
    "KernelSpec",
    "eval_kernel",
    "gram",
    "median_heuristic",
    "product_kernel",
    "AugmentedContext",
    "ModelState",
    "CholeskyModel",
    "Prediction",
    "fit_predict_batch",
    "TaskDataset",
    "cke_distance_sq",
    "cke_similarity",
    "r2_similarity",
]
