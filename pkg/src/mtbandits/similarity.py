"""Task-similarity estimation from per-task regression datasets.

Two estimators produce the M x M similarity matrix consumed by the
multi-task model:

* conditional-embedding distance: each task's conditional law of reward
  given context is embedded as an operator between RKHSs, estimated from
  the task's dataset; squared operator distances pass through a gaussian
  to give similarities in (0, 1].
* average R-squared: train a kernel ridge regressor on one task, score it
  on the other, average the two directions, clamp negatives to zero.

Similarity matrices are plain numpy arrays: symmetric, unit diagonal,
entries in [0, 1].  They round-trip through headerless CSV so harness runs
can cache a trained matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .kernels import KernelSpec, cross_gram, gram, jitter_scale, median_heuristic
from .krr import NumericalError, _validate_similarity, fit_predict_batch

__all__ = [
    "TaskDataset",
    "cke_distance_sq",
    "cke_similarity",
    "r2_similarity",
    "r_squared",
    "identity_similarity",
    "uniform_similarity",
    "validate_similarity",
    "save_similarity_csv",
    "load_similarity_csv",
]

DEFAULT_CKE_LAM = 0.1
DEFAULT_R2_FLOOR = -0.5


def validate_similarity(matrix: np.ndarray) -> np.ndarray:
    """Check symmetry, unit diagonal, and [0, 1] range; returns a float64 copy."""
    return _validate_similarity(matrix)


def identity_similarity(num_tasks: int) -> np.ndarray:
    """Similarity of fully independent tasks."""
    return np.eye(num_tasks)


def uniform_similarity(num_tasks: int, mu: float) -> np.ndarray:
    """Unit diagonal with every off-diagonal entry equal to mu."""
    if not 0.0 <= mu <= 1.0:
        raise ValueError(f"uniform similarity must lie in [0, 1], got {mu}")
    S = np.full((num_tasks, num_tasks), float(mu))
    np.fill_diagonal(S, 1.0)
    return S


@dataclass(frozen=True)
class TaskDataset:
    """Observed (context, reward) pairs for one task."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        y = np.asarray(self.y, dtype=np.float64).ravel()
        if x.shape[0] == 0:
            raise ValueError("a TaskDataset must contain at least one point")
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"{x.shape[0]} contexts but {y.shape[0]} rewards")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("TaskDataset entries must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.x.shape[0]


def _embedding_factor(ds: TaskDataset, kx: KernelSpec, lam: float):
    """Raw context Gram and the Cholesky factor of (K + lam * n * I)."""
    K = gram(kx, ds.x)
    K_reg = K.copy()
    K_reg[np.diag_indices_from(K_reg)] += lam * len(ds) + jitter_scale(kx)
    return K, cho_factor(K_reg, lower=True, check_finite=False)


def cke_distance_sq(
    dm: TaskDataset,
    dn: TaskDataset,
    kx: KernelSpec,
    ky: KernelSpec,
    lam: float = DEFAULT_CKE_LAM,
) -> float:
    """Squared operator distance between two conditional-embedding estimates.

    ``lam`` is a per-sample regularizer: dataset m contributes
    lam * len(m) to its Gram diagonal, so the effective smoothing scales
    with dataset size.

    The closed form is a three-trace expression over context and reward
    Gram matrices; both cross-Gram orientations agree by trace symmetry.
    """
    if not lam > 0:
        raise ValueError(f"regularizer lam must be positive, got {lam}")
    if dm.x.shape[1] != dn.x.shape[1]:
        raise ValueError(
            f"datasets disagree on context dimension: {dm.x.shape[1]} vs {dn.x.shape[1]}"
        )
    ym = dm.y[:, None]
    yn = dn.y[:, None]
    K_m, cm = _embedding_factor(dm, kx, lam)
    K_n, cn = _embedding_factor(dn, kx, lam)
    L_m = gram(ky, ym)
    L_n = gram(ky, yn)
    K_mn = cross_gram(kx, dm.x, dn.x)
    L_nm = cross_gram(ky, yn, ym)

    P1 = cho_solve(cm, K_m, check_finite=False)
    Q1 = cho_solve(cm, L_m, check_finite=False)
    term_m = float(np.sum(P1 * Q1.T))
    P2 = cho_solve(cn, K_n, check_finite=False)
    Q2 = cho_solve(cn, L_n, check_finite=False)
    term_n = float(np.sum(P2 * Q2.T))
    P12 = cho_solve(cm, K_mn, check_finite=False)  # (n_m, n_n)
    Q12 = cho_solve(cn, L_nm, check_finite=False)  # (n_n, n_m)
    term_mn = float(np.sum(P12 * Q12.T))

    d2 = term_m - 2.0 * term_mn + term_n
    tol = 1e-9 * max(1.0, term_m + term_n)
    if d2 < -tol:
        raise NumericalError(f"squared embedding distance came out negative: {d2:.3e}")
    return max(d2, 0.0)


def cke_similarity(
    datasets: list[TaskDataset],
    kx: KernelSpec,
    ky: KernelSpec | None = None,
    lam: float = DEFAULT_CKE_LAM,
) -> np.ndarray:
    """Similarity matrix from pairwise conditional-embedding distances.

    Entry (m, n) is exp(-d2_mn / (2 sigma^2)) with sigma the median of the
    pairwise operator distances (1.0 when all distances vanish).  The
    reward kernel defaults to a gaussian with median-heuristic lengthscale
    over the pooled rewards.
    """
    M = len(datasets)
    if M < 2:
        raise ValueError(f"similarity estimation needs at least 2 datasets, got {M}")
    if ky is None:
        pooled = np.concatenate([ds.y for ds in datasets])[:, None]
        ky = KernelSpec("gaussian", lengthscale=median_heuristic(pooled))
    d2 = np.zeros((M, M))
    for m in range(M):
        for n in range(m + 1, M):
            d2[m, n] = d2[n, m] = cke_distance_sq(datasets[m], datasets[n], kx, ky, lam)
    pair_dists = np.sqrt(d2[np.triu_indices(M, k=1)])
    sigma = float(np.median(pair_dists))
    if sigma <= 0:
        sigma = 1.0
    S = np.exp(-d2 / (2.0 * sigma**2))
    np.fill_diagonal(S, 1.0)
    return S


def r_squared(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """Coefficient of determination: 1 - SSE / (target variance * sample count)."""
    y_true = np.asarray(y_true, dtype=np.float64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.float64).ravel()
    if y_true.shape != y_pred.shape:
        raise ValueError(f"shape mismatch: {y_true.shape} vs {y_pred.shape}")
    tss = float(np.sum((y_true - y_true.mean()) ** 2))
    if tss <= 0.0:
        raise ValueError("target variance is zero; R^2 is undefined")
    sse = float(np.sum((y_true - y_pred) ** 2))
    return 1.0 - sse / tss


def r2_similarity(
    datasets: list[TaskDataset],
    kx: KernelSpec,
    lam: float = 1.0,
    floor: float = DEFAULT_R2_FLOOR,
) -> np.ndarray:
    """Similarity from cross-task prediction accuracy.

    Trains kernel ridge regression on task m, scores R^2 on task n, averages
    the two directions, and clamps to [0, 1]; averages below ``floor`` (and
    all negatives) map to 0.
    """
    M = len(datasets)
    if M < 2:
        raise ValueError(f"similarity estimation needs at least 2 datasets, got {M}")
    if floor > 0:
        raise ValueError(f"the R^2 floor must be <= 0, got {floor}")
    for idx, ds in enumerate(datasets):
        if len(ds) < 2:
            raise ValueError(f"dataset for task {idx} needs >= 2 points for a defined variance")
        if np.allclose(ds.y, ds.y[0]):
            raise ValueError(f"zero target variance in the dataset for task {idx}")
    S = np.eye(M)
    scores = np.zeros((M, M))
    for m in range(M):
        for n in range(M):
            if m == n:
                continue
            preds = fit_predict_batch(datasets[m].x, datasets[m].y, datasets[n].x, kx, lam)
            scores[m, n] = r_squared(datasets[n].y, preds)
    for m in range(M):
        for n in range(m + 1, M):
            avg = 0.5 * (scores[m, n] + scores[n, m])
            entry = 0.0 if avg < floor else min(max(avg, 0.0), 1.0)
            S[m, n] = S[n, m] = entry
    return S


def save_similarity_csv(matrix: np.ndarray, path) -> None:
    """Write an M x M similarity matrix as headerless CSV."""
    S = validate_similarity(matrix)
    np.savetxt(path, S, delimiter=",", fmt="%.17g")


def load_similarity_csv(path) -> np.ndarray:
    """Read a similarity matrix written by :func:`save_similarity_csv`."""
    S = np.loadtxt(path, delimiter=",", ndmin=2)
    return validate_similarity(S)
