"""Multi-task regression data sampled from a coupled Gaussian prior.

The stacked vector of all tasks' targets over a shared design is drawn
from a zero-mean normal whose covariance is the Kronecker product of the
task-similarity matrix with the context Gram matrix, plus white noise:

    y ~ N(0, K_task (x) K_ctx + noise_var * I)

Sampling goes through an eigendecomposition so the degenerate corners
(perfect similarity, zero noise) still work.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..kernels import KernelSpec, gram
from ..similarity import TaskDataset, uniform_similarity

__all__ = ["GpRegressionConfig", "GpTaskSampler", "generate_gp_tasks"]

# sub-stream tags so design, draws, and splits never share a stream
_DESIGN, _DRAW, _SPLIT = 11, 12, 13


@dataclass(frozen=True)
class GpRegressionConfig:
    tasks: int = 2
    points: int = 100
    sim_ground: float = 0.8
    lengthscale: float = 0.5
    noise_var: float = 0.05
    train_size: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.tasks < 1:
            raise ValueError("need at least one task")
        if not 0.0 <= self.sim_ground <= 1.0:
            raise ValueError(f"ground-truth similarity must lie in [0, 1], got {self.sim_ground}")
        if self.noise_var < 0:
            raise ValueError(f"noise variance must be nonnegative, got {self.noise_var}")
        if not 0 < self.train_size < self.points:
            raise ValueError(
                f"train_size must be in (0, points); got {self.train_size} of {self.points}"
            )


class GpTaskSampler:
    """Shared design plus a factorized covariance; repeated target draws are cheap."""

    def __init__(self, cfg: GpRegressionConfig) -> None:
        self.cfg = cfg
        rng = np.random.default_rng([cfg.seed, _DESIGN])
        self.design = rng.random((cfg.points, 2))
        self.kernel = KernelSpec("gaussian", lengthscale=cfg.lengthscale)
        self.gram_x = gram(self.kernel, self.design)
        self.sim_matrix = uniform_similarity(cfg.tasks, cfg.sim_ground)
        self.covariance = np.kron(self.sim_matrix, self.gram_x)
        self.covariance[np.diag_indices_from(self.covariance)] += cfg.noise_var
        w, V = np.linalg.eigh(self.covariance)
        n = self.covariance.shape[0]
        if w.min() < -1e-8 * max(np.trace(self.covariance) / n, 1.0):
            raise ValueError(f"covariance is not PSD (min eigenvalue {w.min():.3e})")
        self._sqrt = V * np.sqrt(np.clip(w, 0.0, None))

    def sample_stacked(self, draw: int) -> np.ndarray:
        """One stacked target vector of length tasks * points (task-major)."""
        z = np.random.default_rng([self.cfg.seed, _DRAW, int(draw)]).standard_normal(
            self.covariance.shape[0]
        )
        return self._sqrt @ z

    def sample(self, draw: int) -> tuple[list[TaskDataset], list[TaskDataset]]:
        """Per-task train/test datasets for one target draw.

        Train indices are resampled per draw and per task.
        """
        cfg = self.cfg
        y = self.sample_stacked(draw).reshape(cfg.tasks, cfg.points)
        train, test = [], []
        for m in range(cfg.tasks):
            perm = np.random.default_rng([cfg.seed, _SPLIT, int(draw), m]).permutation(cfg.points)
            tr, te = perm[: cfg.train_size], perm[cfg.train_size :]
            train.append(TaskDataset(self.design[tr], y[m, tr]))
            test.append(TaskDataset(self.design[te], y[m, te]))
        return train, test

    def full_datasets(self, draw: int) -> list[TaskDataset]:
        """All points per task, unsplit."""
        y = self.sample_stacked(draw).reshape(self.cfg.tasks, self.cfg.points)
        return [TaskDataset(self.design, y[m]) for m in range(self.cfg.tasks)]


def generate_gp_tasks(
    cfg: GpRegressionConfig, draw: int = 0
) -> tuple[list[TaskDataset], list[TaskDataset]]:
    """Sample one train/test split of coupled multi-task regression data."""
    return GpTaskSampler(cfg).sample(draw)
