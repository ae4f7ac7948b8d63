"""Kernel ridge regression over augmented (task, context) pairs.

Two interchangeable model states are provided:

* :class:`ModelState` keeps the explicit inverse of the regularized Gram
  matrix, extended one observation (or one block) at a time through the
  block-matrix Schur-complement identity, with a periodic direct refresh
  for numerical hygiene.  This is the reference implementation; all
  correctness invariants are stated against it.
* :class:`CholeskyModel` keeps a growing Cholesky factor instead and
  produces the same posterior means and widths.  It exists purely for
  speed on long experiment runs (triangular solves touch a quarter of the
  memory the explicit-inverse update does) and is swappable wherever a
  ModelState is accepted.

Predictions follow the closed form of regularized kernel regression: for a
query q with kernel vector k against the history,

    mean  = k' (K + lam I)^{-1} y
    width = sqrt(k(q, q) - k' (K + lam I)^{-1} k)

where K is the Gram matrix of the joint kernel
k_task(z, z') * k_ctx(x, x').
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky, solve_triangular
from scipy.linalg.lapack import dpotri

from .kernels import KernelSpec, cross_gram, jitter_scale

__all__ = [
    "AugmentedContext",
    "Prediction",
    "ModelState",
    "CholeskyModel",
    "fit_predict_batch",
    "NumericalError",
]

# Negative width^2 more extreme than this is a bug, not roundoff.
WIDTH_CLAMP_TOL = 1e-6

DEFAULT_REFRESH_EVERY = 512


class NumericalError(RuntimeError):
    """The maintained linear-algebra state degraded beyond tolerance."""


@dataclass(frozen=True)
class AugmentedContext:
    """A (task id, context vector) pair; tasks are 0-based indices."""

    task: int
    context: np.ndarray


@dataclass(frozen=True)
class Prediction:
    mean: float
    width: float


def _validate_similarity(similarity: np.ndarray) -> np.ndarray:
    S = np.asarray(similarity, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"similarity matrix must be square, got shape {S.shape}")
    if not np.allclose(S, S.T, atol=1e-12):
        raise ValueError("similarity matrix must be symmetric")
    if not np.allclose(np.diag(S), 1.0, atol=1e-12):
        raise ValueError("similarity matrix must have unit diagonal")
    if S.min() < -1e-12 or S.max() > 1.0 + 1e-12:
        raise ValueError("similarity entries must lie in [0, 1]")
    return S


def _kernel_diag(kx: KernelSpec, X: np.ndarray) -> np.ndarray:
    """k(x, x) per row; the task factor is 1 on the diagonal."""
    if kx.family == "gaussian":
        return np.full(X.shape[0], kx.output_scale)
    return kx.output_scale * np.einsum("ij,ij->i", X, X)


class _HistoryBase:
    """Shared storage and kernel plumbing for both model backends."""

    def __init__(self, kx: KernelSpec, similarity: np.ndarray, lam: float = 1.0) -> None:
        if not lam > 0:
            raise ValueError(f"ridge parameter lam must be positive, got {lam}")
        self.kx = kx
        self.similarity = _validate_similarity(similarity)
        self.lam = float(lam)
        self._n = 0
        self._X: np.ndarray | None = None  # (cap, p)
        self._tasks = np.empty(0, dtype=np.int64)
        self._y = np.empty(0, dtype=np.float64)

    @property
    def n(self) -> int:
        return self._n

    @property
    def num_tasks(self) -> int:
        return self.similarity.shape[0]

    @property
    def lam_eff(self) -> float:
        """Ridge plus the uniform diagonal jitter used by every factorization."""
        return self.lam + jitter_scale(self.kx)

    @property
    def history_contexts(self) -> np.ndarray:
        return self._X[: self._n] if self._X is not None else np.empty((0, 0))

    @property
    def history_tasks(self) -> np.ndarray:
        return self._tasks[: self._n]

    @property
    def history_rewards(self) -> np.ndarray:
        return self._y[: self._n]

    def _check_tasks(self, tasks: np.ndarray) -> np.ndarray:
        tasks = np.asarray(tasks, dtype=np.int64).ravel()
        if tasks.size and (tasks.min() < 0 or tasks.max() >= self.num_tasks):
            bad = tasks[(tasks < 0) | (tasks >= self.num_tasks)][0]
            raise ValueError(f"task id {bad} outside 0..{self.num_tasks - 1}")
        return tasks

    def _coerce_queries(self, tasks, X) -> tuple[np.ndarray, np.ndarray]:
        tasks = self._check_tasks(tasks)
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[0] != tasks.shape[0]:
            raise ValueError(f"got {tasks.shape[0]} task ids for {X.shape[0]} contexts")
        return tasks, X

    def _grow_history(self, tasks: np.ndarray, X: np.ndarray, y: np.ndarray) -> None:
        m = X.shape[0]
        if self._X is None:
            cap = max(64, m)
            self._X = np.empty((cap, X.shape[1]), dtype=np.float64)
            self._tasks = np.empty(cap, dtype=np.int64)
            self._y = np.empty(cap, dtype=np.float64)
        elif X.shape[1] != self._X.shape[1]:
            raise ValueError(
                f"context dimension {X.shape[1]} does not match history dimension {self._X.shape[1]}"
            )
        if self._n + m > self._X.shape[0]:
            cap = max(2 * self._X.shape[0], self._n + m)
            self._X = np.vstack([self._X, np.empty((cap - self._X.shape[0], self._X.shape[1]))])
            self._tasks = np.concatenate([self._tasks, np.empty(cap - self._tasks.shape[0], dtype=np.int64)])
            self._y = np.concatenate([self._y, np.empty(cap - self._y.shape[0])])
        self._X[self._n : self._n + m] = X
        self._tasks[self._n : self._n + m] = tasks
        self._y[self._n : self._n + m] = y
        self._n += m

    def joint_kernel(self, tasks_a, X_a, tasks_b, X_b) -> np.ndarray:
        """Joint-kernel matrix between two augmented batches, shape (len a, len b)."""
        KX = cross_gram(self.kx, X_a, X_b)
        return self.similarity[np.ix_(tasks_a, tasks_b)] * KX

    def _query_cross(self, tasks: np.ndarray, X: np.ndarray) -> np.ndarray:
        """Kernel vectors of queries against the history, shape (Q, n)."""
        if self._n == 0:
            return np.empty((X.shape[0], 0))
        return self.joint_kernel(tasks, X, self.history_tasks, self.history_contexts)

    def _query_diag(self, tasks: np.ndarray, X: np.ndarray) -> np.ndarray:
        return np.diag(self.similarity)[tasks] * _kernel_diag(self.kx, X)

    @staticmethod
    def _clamp_width_sq(w2: np.ndarray) -> np.ndarray:
        low = w2.min() if w2.size else 0.0
        if low < -WIDTH_CLAMP_TOL:
            raise NumericalError(
                f"negative predictive variance {low:.3e}; model state needs a refresh"
            )
        return np.sqrt(np.maximum(w2, 0.0))

    # Single-observation convenience wrappers shared by both backends.

    def predict(self, x: AugmentedContext) -> Prediction:
        means, widths = self.predict_batch([x.task], np.atleast_2d(x.context))
        return Prediction(mean=float(means[0]), width=float(widths[0]))

    def append(self, x: AugmentedContext, reward: float) -> None:
        self.append_batch([x.task], np.atleast_2d(x.context), [reward])


class ModelState(_HistoryBase):
    """History plus the maintained inverse of (K + lam I).

    Appends extend the inverse through the Schur-complement block identity:
    for the bordered matrix [[A, B], [B', C]] with A^{-1} known,

        S = C - B' A^{-1} B
        inverse = [[A^{-1} + Z S^{-1} Z',  -Z S^{-1}],
                   [-S^{-1} Z',             S^{-1}  ]],   Z = A^{-1} B

    at O(n^2) per appended observation.  Roundoff accumulates across
    updates, so a direct re-factorization runs every ``refresh_every``
    appended observations.
    """

    def __init__(
        self,
        kx: KernelSpec,
        similarity: np.ndarray,
        lam: float = 1.0,
        refresh_every: int = DEFAULT_REFRESH_EVERY,
    ) -> None:
        super().__init__(kx, similarity, lam)
        if refresh_every < 1:
            raise ValueError("refresh_every must be >= 1")
        self.refresh_every = int(refresh_every)
        self._inv_buf = np.empty((0, 0))
        self._alpha = np.empty(0)  # inverse @ y, kept in sync
        self._since_refresh = 0

    @property
    def inverse(self) -> np.ndarray:
        """View of the maintained (K + lam I)^{-1}; treat as read-only."""
        return self._inv_buf[: self._n, : self._n]

    def predict_batch(self, tasks, X) -> tuple[np.ndarray, np.ndarray]:
        tasks, X = self._coerce_queries(tasks, X)
        kdiag = self._query_diag(tasks, X)
        if self._n == 0:
            return np.zeros(X.shape[0]), self._clamp_width_sq(kdiag)
        kvec = self._query_cross(tasks, X)
        means = kvec @ self._alpha[: self._n]
        Z = kvec @ self.inverse
        w2 = kdiag - np.einsum("ij,ij->i", Z, kvec)
        return means, self._clamp_width_sq(w2)

    def append_batch(self, tasks, X, rewards) -> None:
        tasks, X = self._coerce_queries(tasks, X)
        y = np.asarray(rewards, dtype=np.float64).ravel()
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"got {y.shape[0]} rewards for {X.shape[0]} observations")
        if not np.all(np.isfinite(y)):
            raise ValueError("rewards must be finite")
        m = X.shape[0]
        if m == 0:
            return
        C = self.joint_kernel(tasks, X, tasks, X) + self.lam_eff * np.eye(m)
        B = self._query_cross(tasks, X).T  # (n, m)
        n = self._n

        if n == 0:
            Sinv = _spd_inverse(C)
            self._ensure_inv_capacity(m)
            self._inv_buf[:m, :m] = Sinv
            self._grow_history(tasks, X, y)
            self._alpha = np.empty(self._inv_buf.shape[0])
            self._alpha[:m] = Sinv @ y
        else:
            A_inv = self.inverse
            Z = A_inv @ B
            S = C - B.T @ Z
            S = 0.5 * (S + S.T)
            try:
                Sinv = _spd_inverse(S)
            except np.linalg.LinAlgError:
                # Maintained inverse too stale for a stable update; rebuild.
                self._grow_history(tasks, X, y)
                self.refresh()
                return
            ZS = Z @ Sinv
            self._ensure_inv_capacity(n + m)
            inv = self._inv_buf
            inv[:n, :n] += ZS @ Z.T
            inv[:n, n : n + m] = -ZS
            inv[n : n + m, :n] = -ZS.T
            inv[n : n + m, n : n + m] = Sinv
            # alpha update from the same block identity
            w = Sinv @ (y - Z.T @ self._y[:n])
            self._alpha[:n] -= Z @ w
            self._alpha[n : n + m] = w
            self._grow_history(tasks, X, y)

        self._since_refresh += m
        if self._since_refresh >= self.refresh_every:
            self.refresh()

    def _ensure_inv_capacity(self, need: int) -> None:
        cap = self._inv_buf.shape[0]
        if need <= cap:
            if self._alpha.shape[0] < need:
                self._alpha = np.resize(self._alpha, cap)
            return
        new_cap = max(64, need, 2 * cap)
        new_buf = np.empty((new_cap, new_cap))
        new_buf[: self._n, : self._n] = self._inv_buf[: self._n, : self._n]
        self._inv_buf = new_buf
        new_alpha = np.empty(new_cap)
        new_alpha[: self._n] = self._alpha[: self._n]
        self._alpha = new_alpha

    def refresh(self) -> None:
        """Recompute the inverse by direct factorization and verify it."""
        self._since_refresh = 0
        n = self._n
        if n == 0:
            return
        K = self.joint_kernel(
            self.history_tasks, self.history_contexts, self.history_tasks, self.history_contexts
        )
        K[np.diag_indices_from(K)] += self.lam_eff
        inv = _spd_inverse(K)
        self._ensure_inv_capacity(n)
        self._inv_buf[:n, :n] = inv
        self._alpha[:n] = inv @ self._y[:n]
        resid = self._residual_probe(K)
        if resid > 1e-6:
            raise NumericalError(f"refreshed inverse residual {resid:.3e} exceeds 1e-6")

    def _residual_probe(self, K_reg: np.ndarray) -> float:
        """Max-abs residual of inverse @ (K + lam I) - I, on probe columns for large n."""
        n = self._n
        if n <= 1024:
            R = self.inverse @ K_reg
            R[np.diag_indices_from(R)] -= 1.0
        else:
            cols = np.linspace(0, n - 1, 32).astype(np.int64)
            R = self.inverse @ K_reg[:, cols]
            R[cols, np.arange(cols.size)] -= 1.0
        return float(np.abs(R).max())

    def residual(self) -> float:
        """Full max-abs residual of inverse @ (K + lam I) - I (diagnostic)."""
        n = self._n
        if n == 0:
            return 0.0
        K = self.joint_kernel(
            self.history_tasks, self.history_contexts, self.history_tasks, self.history_contexts
        )
        K[np.diag_indices_from(K)] += self.lam_eff
        R = self.inverse @ K
        R[np.diag_indices_from(R)] -= 1.0
        return float(np.abs(R).max())

    def swap_similarity(self, similarity: np.ndarray) -> None:
        """Replace the task-similarity matrix; forces a full refresh."""
        S = _validate_similarity(similarity)
        if S.shape != self.similarity.shape:
            raise ValueError("replacement similarity has a different task count")
        self.similarity = S
        self.refresh()


class CholeskyModel(_HistoryBase):
    """Performance twin of :class:`ModelState` built on a growing Cholesky factor.

    The factor is stored as frozen contiguous row blocks plus a pending
    tail; each block carries the explicit inverse of its triangular
    diagonal part, so a forward substitution is a short sequence of plain
    matrix products with no per-row solver calls.  Appending rows whose
    kernel columns were just solved for (the select-then-observe pattern of
    a bandit round) reuses that solve instead of triggering another one.
    """

    _CONSOLIDATE_ROWS = 256

    def __init__(self, kx: KernelSpec, similarity: np.ndarray, lam: float = 1.0) -> None:
        super().__init__(kx, similarity, lam)
        # frozen blocks: (rows, diag_inv) where rows is (b, r0 + b) holding
        # [L_{block,0..} | L_diag] and diag_inv = L_diag^{-1}
        self._blocks: list[tuple[np.ndarray, np.ndarray]] = []
        self._frozen_rows = 0
        # pending tail buffers; rows [frozen, frozen + p) of L, zero-padded
        self._pend: np.ndarray | None = None  # (row_cap, col_cap)
        self._pend_inv: np.ndarray | None = None  # (row_cap, row_cap)
        self._pend_rows = 0
        self._u = np.empty(0)  # L^{-1} y
        self._solve_cache: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None

    def _forward_solve(self, B: np.ndarray) -> np.ndarray:
        """Solve L V = B by block forward substitution; B is (n, Q)."""
        V = np.empty_like(B, dtype=np.float64)
        r = 0
        for rows, dinv in self._blocks:
            b = rows.shape[0]
            rhs = B[r : r + b]
            if r:
                rhs = rhs - rows[:, :r] @ V[:r]
            V[r : r + b] = dinv @ rhs
            r += b
        p = self._pend_rows
        if p:
            rhs = B[r : r + p]
            if r:
                rhs = rhs - self._pend[:p, :r] @ V[:r]
            V[r : r + p] = self._pend_inv[:p, :p] @ rhs
        return V

    def predict_batch(self, tasks, X) -> tuple[np.ndarray, np.ndarray]:
        tasks, X = self._coerce_queries(tasks, X)
        kdiag = self._query_diag(tasks, X)
        if self._n == 0:
            return np.zeros(X.shape[0]), self._clamp_width_sq(kdiag)
        kvec = self._query_cross(tasks, X)  # (Q, n)
        V = self._forward_solve(np.ascontiguousarray(kvec.T))  # (n, Q)
        means = V.T @ self._u
        w2 = kdiag - np.einsum("ij,ij->j", V, V)
        self._solve_cache = (tasks, X, V)
        return means, self._clamp_width_sq(w2)

    def append_batch(self, tasks, X, rewards) -> None:
        tasks, X = self._coerce_queries(tasks, X)
        y = np.asarray(rewards, dtype=np.float64).ravel()
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"got {y.shape[0]} rewards for {X.shape[0]} observations")
        if not np.all(np.isfinite(y)):
            raise ValueError("rewards must be finite")
        m = X.shape[0]
        if m == 0:
            return
        C = self.joint_kernel(tasks, X, tasks, X) + self.lam_eff * np.eye(m)
        n = self._n
        if n == 0:
            W = np.empty((0, m))
            S = C
        else:
            W = self._reuse_or_solve(tasks, X)  # (n, m) = L^{-1} B
            S = C - W.T @ W
            S = 0.5 * (S + S.T)
        try:
            Lc = cholesky(S, lower=True)
        except np.linalg.LinAlgError:
            self._grow_history(tasks, X, y)
            self.refresh()
            return
        Lc_inv = solve_triangular(Lc, np.eye(m), lower=True, check_finite=False)
        q = self._frozen_rows
        p = self._pend_rows
        self._ensure_pending_capacity(p + m, n + m)
        # new pending rows of L: [W' | Lc], zero-padded to the buffer width
        self._pend[p : p + m, :n] = W.T
        self._pend[p : p + m, n : n + m] = Lc
        # extend the pending-diagonal inverse by the same block identity
        if p:
            Wp = W[q:, :]  # the part of the solve that hits pending rows
            self._pend_inv[p : p + m, :p] = -Lc_inv @ (Wp.T @ self._pend_inv[:p, :p])
            self._pend_inv[:p, p : p + m] = 0.0
        self._pend_inv[p : p + m, p : p + m] = Lc_inv
        self._pend_rows = p + m
        tail = Lc_inv @ (y - W.T @ self._u) if n else Lc_inv @ y
        self._u = np.concatenate([self._u, tail])
        self._grow_history(tasks, X, y)
        self._solve_cache = None
        if self._pend_rows >= self._CONSOLIDATE_ROWS:
            self._freeze_pending()

    def _reuse_or_solve(self, tasks: np.ndarray, X: np.ndarray) -> np.ndarray:
        cache = self._solve_cache
        if cache is not None:
            c_tasks, c_X, c_V = cache
            if c_V.shape[0] == self._n:
                cols = []
                for t, row in zip(tasks, X):
                    hits = np.flatnonzero((c_tasks == t) & np.all(c_X == row, axis=1))
                    if hits.size == 0:
                        break
                    cols.append(hits[0])
                else:
                    return np.ascontiguousarray(c_V[:, cols])
        B = self._query_cross(tasks, X).T
        return self._forward_solve(np.ascontiguousarray(B))

    def _ensure_pending_capacity(self, rows: int, cols: int) -> None:
        row_cap = self._CONSOLIDATE_ROWS + max(64, rows - self._CONSOLIDATE_ROWS + 1)
        if self._pend is None:
            self._pend = np.zeros((row_cap, max(256, 2 * cols)))
            self._pend_inv = np.zeros((row_cap, row_cap))
            return
        p = self._pend_rows
        if rows > self._pend.shape[0]:
            grown = np.zeros((row_cap, self._pend.shape[1]))
            grown[:p] = self._pend[:p]
            self._pend = grown
            grown_inv = np.zeros((row_cap, row_cap))
            grown_inv[:p, :p] = self._pend_inv[:p, :p]
            self._pend_inv = grown_inv
        if cols > self._pend.shape[1]:
            grown = np.zeros((self._pend.shape[0], max(2 * self._pend.shape[1], cols)))
            grown[:p, : self._n] = self._pend[:p, : self._n]
            self._pend = grown

    def _freeze_pending(self) -> None:
        p = self._pend_rows
        rows = self._pend[:p, : self._n].copy()
        dinv = self._pend_inv[:p, :p].copy()
        self._blocks.append((rows, dinv))
        self._frozen_rows += p
        self._pend_rows = 0
        self._pend[:p, : self._n] = 0.0
        self._pend_inv[:p, :p] = 0.0

    def refresh(self) -> None:
        """Re-factorize from scratch (used after a degenerate incremental step)."""
        self._solve_cache = None
        self._blocks = []
        self._frozen_rows = 0
        self._pend = None
        self._pend_inv = None
        self._pend_rows = 0
        n = self._n
        if n == 0:
            self._u = np.empty(0)
            return
        K = self.joint_kernel(
            self.history_tasks, self.history_contexts, self.history_tasks, self.history_contexts
        )
        K[np.diag_indices_from(K)] += self.lam_eff
        L = cholesky(K, lower=True)
        dinv = solve_triangular(L, np.eye(n), lower=True, check_finite=False)
        self._blocks = [(L, dinv)]
        self._frozen_rows = n
        self._u = dinv @ self._y[:n]

    def dense_factor(self) -> np.ndarray:
        """Materialize the full lower-triangular factor (diagnostics only)."""
        n = self._n
        L = np.zeros((n, n))
        r = 0
        for rows, _ in self._blocks:
            L[r : r + rows.shape[0], : rows.shape[1]] = rows
            r += rows.shape[0]
        p = self._pend_rows
        if p:
            L[r : r + p, :n] = self._pend[:p, :n]
        return L


def _spd_inverse(K: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric positive-definite matrix via Cholesky."""
    c, low = cho_factor(K, lower=True, check_finite=False)
    inv, info = dpotri(c, lower=1)
    if info != 0:
        raise np.linalg.LinAlgError(f"dpotri failed with info={info}")
    inv = np.tril(inv) + np.tril(inv, -1).T
    return inv


def fit_predict_batch(
    train_x: np.ndarray,
    train_y: np.ndarray,
    test_x: np.ndarray,
    kx: KernelSpec,
    lam: float,
) -> np.ndarray:
    """Single-task kernel ridge regression, fit once and predict a batch.

    Returns f(x) = k_x' (K + lam I)^{-1} y for each test point.
    """
    train_x = np.atleast_2d(np.asarray(train_x, dtype=np.float64))
    train_y = np.asarray(train_y, dtype=np.float64).ravel()
    test_x = np.atleast_2d(np.asarray(test_x, dtype=np.float64))
    if train_x.shape[0] == 0:
        raise ValueError("fit_predict_batch requires non-empty training data")
    if train_y.shape[0] != train_x.shape[0]:
        raise ValueError(f"{train_x.shape[0]} training points but {train_y.shape[0]} targets")
    if not lam > 0:
        raise ValueError(f"ridge parameter lam must be positive, got {lam}")
    K = cross_gram(kx, train_x, train_x)
    K = 0.5 * (K + K.T)
    K[np.diag_indices_from(K)] += lam + jitter_scale(kx)
    c = cho_factor(K, lower=True, check_finite=False)
    alpha = cho_solve(c, train_y, check_finite=False)
    return cross_gram(kx, test_x, train_x) @ alpha
