"""Kernel functions, Gram matrices, and the multi-task product kernel.

Context vectors are plain 1-D float arrays.  A :class:`KernelSpec` selects
the kernel family and hyperparameters; the module-level functions evaluate
kernels pointwise, build Gram matrices, and combine a task-similarity value
with a context-kernel value into the product kernel used by the multi-task
regressor:

    k_joint((z, x), (z', x')) = k_task(z, z') * k_ctx(x, x')
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist

__all__ = [
    "KernelSpec",
    "eval_kernel",
    "gram",
    "cross_gram",
    "product_kernel",
    "median_heuristic",
    "jitter_scale",
    "DimensionMismatchError",
]

FAMILIES = ("gaussian", "linear")

# Relative diagonal jitter added before any factorization so that the
# incremental and direct linear-algebra paths see the same matrix.
JITTER_REL = 1e-8


class DimensionMismatchError(ValueError):
    """Two context vectors (or batches) disagree on dimension."""


@dataclass(frozen=True)
class KernelSpec:
    """A positive-definite kernel on context vectors or task descriptors.

    Parameters
    ----------
    family : str
        "gaussian" or "linear".
    lengthscale : float, optional
        Bandwidth of the gaussian kernel; ignored for linear.
    output_scale : float
        Multiplier on the kernel value; the gaussian satisfies
        k(x, x) = output_scale.
    """

    family: str
    lengthscale: float | None = None
    output_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}, expected one of {FAMILIES}")
        if self.family == "gaussian":
            if self.lengthscale is None:
                raise ValueError("gaussian kernel requires a lengthscale")
            if not self.lengthscale > 0:
                raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")
        if not self.output_scale > 0:
            raise ValueError(f"output_scale must be positive, got {self.output_scale}")

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"family": self.family, "output_scale": self.output_scale}
        if self.lengthscale is not None:
            d["lengthscale"] = self.lengthscale
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "KernelSpec":
        return cls(
            family=d["family"],
            lengthscale=d.get("lengthscale"),
            output_scale=float(d.get("output_scale", 1.0)),
        )


def _as_matrix(xs: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    if not np.all(np.isfinite(X)):
        raise ValueError("context vectors must be finite")
    return X


def jitter_scale(spec: KernelSpec) -> float:
    """Diagonal jitter to add alongside the ridge term before factorizing."""
    return JITTER_REL * spec.output_scale


def eval_kernel(spec: KernelSpec, x: np.ndarray, y: np.ndarray) -> float:
    """Evaluate k(x, y) for a single pair of context vectors."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape[0] != y.shape[0]:
        raise DimensionMismatchError(
            f"context dimensions differ: x has dimension {x.shape[0]}, y has dimension {y.shape[0]}"
        )
    if spec.family == "gaussian":
        sq = float(np.sum((x - y) ** 2))
        return spec.output_scale * float(np.exp(-sq / (2.0 * spec.lengthscale**2)))
    return spec.output_scale * float(x @ y)


def cross_gram(spec: KernelSpec, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Kernel matrix between two batches of context vectors, shape (len(X), len(Y))."""
    X = _as_matrix(X)
    Y = _as_matrix(Y)
    if X.shape[1] != Y.shape[1]:
        raise DimensionMismatchError(
            f"context dimensions differ: left batch has dimension {X.shape[1]}, "
            f"right batch has dimension {Y.shape[1]}"
        )
    if spec.family == "gaussian":
        sq = cdist(X, Y, metric="sqeuclidean")
        return spec.output_scale * np.exp(-sq / (2.0 * spec.lengthscale**2))
    return spec.output_scale * (X @ Y.T)


def gram(spec: KernelSpec, xs: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    """Gram matrix K[i, j] = k(xs[i], xs[j]); symmetric by construction."""
    X = _as_matrix(xs)
    if X.shape[0] == 0:
        raise ValueError("gram() requires a non-empty list of context vectors")
    K = cross_gram(spec, X, X)
    return 0.5 * (K + K.T)


def product_kernel(kz_value: float, kx_value: float) -> float:
    """Multi-task kernel value: task-similarity factor times context-kernel factor."""
    if not (np.isfinite(kz_value) and np.isfinite(kx_value)):
        raise ValueError(f"kernel factors must be finite, got {kz_value} and {kx_value}")
    return kz_value * kx_value


def median_heuristic(xs: Sequence[np.ndarray] | np.ndarray) -> float:
    """Median pairwise Euclidean distance, the default gaussian lengthscale.

    Falls back to 1.0 when all points coincide.
    """
    X = _as_matrix(xs)
    if X.shape[0] < 2:
        raise ValueError(f"median_heuristic requires at least 2 points, got {X.shape[0]}")
    med = float(np.median(pdist(X)))
    return med if med > 0 else 1.0
