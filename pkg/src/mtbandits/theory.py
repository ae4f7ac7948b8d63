"""Numerical checks of the regret-bound quantities.

The determinant ratio

    g = det(K + lam I) / lam^n

over the joint Gram matrix of a history controls the regret bound of the
staged-elimination policy.  Everything here works in log space: log g is
nonnegative (the Gram matrix is PSD), grows when history is appended, is
bounded by the product of the context-Gram and similarity-matrix ranks,
and shrinks as tasks become more uniformly similar.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .kernels import KernelSpec, gram
from .krr import ModelState
from .similarity import uniform_similarity

__all__ = ["TheoryReport", "log_g", "rank_bound_check", "check_monotonicity"]


def _joint_gram(tasks, contexts, similarity, kx: KernelSpec) -> np.ndarray:
    scratch = ModelState(kx, similarity)
    tasks = scratch._check_tasks(tasks)
    contexts = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
    if tasks.shape[0] != contexts.shape[0]:
        raise ValueError(f"{tasks.shape[0]} task ids for {contexts.shape[0]} contexts")
    if tasks.shape[0] == 0:
        raise ValueError("log_g needs a non-empty history")
    return scratch.joint_kernel(tasks, contexts, tasks, contexts)


def log_g(tasks, contexts, similarity, kx: KernelSpec, lam: float = 1.0) -> float:
    """log of det(K + lam I) / lam^n via a Cholesky log-determinant.

    Reports exponentiate only when small; the internal value stays in logs.
    """
    if not lam > 0:
        raise ValueError(f"lam must be positive, got {lam}")
    K = _joint_gram(tasks, contexts, similarity, kx)
    n = K.shape[0]
    K[np.diag_indices_from(K)] += lam
    L = np.linalg.cholesky(K)
    return float(2.0 * np.sum(np.log(np.diag(L))) - n * np.log(lam))


def rank_bound_check(tasks, contexts, similarity, kx: KernelSpec, lam: float = 1.0) -> dict:
    """Compare log g against its rank bound.

    The joint Gram matrix is an elementwise product of the expanded
    similarity matrix with the context Gram matrix, so its rank is at most
    the product of their ranks; each of its at most r_z * r_x nonzero
    eigenvalues is at most n * c, with c the largest kernel diagonal.
    """
    value = log_g(tasks, contexts, similarity, kx, lam)
    K = _joint_gram(tasks, contexts, similarity, kx)
    n = K.shape[0]
    r_z = int(np.linalg.matrix_rank(np.asarray(similarity, dtype=np.float64)))
    r_x = int(np.linalg.matrix_rank(gram(kx, contexts)))
    c = float(np.diag(K).max())
    bound = r_z * r_x * np.log((n * c + lam) / lam)
    return {
        "log_g": value,
        "bound": float(bound),
        "rank_similarity": r_z,
        "rank_context_gram": r_x,
        "kernel_diag_max": c,
        "satisfied": bool(value <= bound + 1e-9),
    }


@dataclass
class TheoryReport:
    """Result of a similarity-monotonicity sweep of log g."""

    mu_grid: list[float]
    log_g_values: list[float]
    violations: list[dict] = field(default_factory=list)
    rank_checks: list[dict] = field(default_factory=list)

    @property
    def monotone(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "mu_grid": self.mu_grid,
            "log_g_values": self.log_g_values,
            "violations": self.violations,
            "monotone": self.monotone,
            "rank_checks": self.rank_checks,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def check_monotonicity(
    mu_grid,
    tasks,
    contexts,
    kx: KernelSpec,
    lam: float = 1.0,
    rel_tol: float = 1e-9,
) -> TheoryReport:
    """Evaluate log g over uniformly-similar task matrices for each mu.

    Raising the shared similarity can only shrink the determinant ratio, so
    the sequence must be non-increasing; any pair exceeding the relative
    tolerance is reported as a violation.
    """
    mu_grid = [float(m) for m in mu_grid]
    if any(not 0.0 <= m <= 1.0 for m in mu_grid):
        raise ValueError("mu grid entries must lie in [0, 1]")
    if any(b < a for a, b in zip(mu_grid, mu_grid[1:])):
        raise ValueError("mu grid must be ascending")
    tasks = np.asarray(tasks, dtype=np.int64).ravel()
    num_tasks = int(tasks.max()) + 1 if tasks.size else 1
    values = [
        log_g(tasks, contexts, uniform_similarity(num_tasks, mu), kx, lam) for mu in mu_grid
    ]
    violations = []
    for i in range(len(values) - 1):
        tol = rel_tol * max(1.0, abs(values[i]))
        if values[i + 1] > values[i] + tol:
            violations.append(
                {
                    "mu_low": mu_grid[i],
                    "mu_high": mu_grid[i + 1],
                    "log_g_low": values[i],
                    "log_g_high": values[i + 1],
                }
            )
    return TheoryReport(mu_grid=mu_grid, log_g_values=values, violations=violations)
