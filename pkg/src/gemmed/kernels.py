"""Kernel evaluation and Gram matrix construction.

Two kernels are supported: the raw dot product (``linear``) and the
Gaussian kernel ``exp(-gamma * ||x - x'||^2)`` (``rbf``). Decision
functions built on these kernels carry no intercept term, so a Gram
matrix plus dual coefficients fully determines a model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from .errors import NumericsError

KERNEL_KINDS = ("linear", "rbf")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus its parameters.

    gamma is required (and must be positive) for ``rbf``; it is ignored
    for ``linear``. jitter is added to the Gram diagonal before
    factorization to keep the Cholesky well posed.
    """

    kind: str
    gamma: float | None = None
    jitter: float = 1e-8

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "rbf":
            if self.gamma is None or not self.gamma > 0:
                raise ValueError("rbf kernel requires gamma > 0")
        if self.jitter < 0:
            raise ValueError("jitter must be nonnegative")


@dataclass(frozen=True)
class GramMatrix:
    """Symmetric kernel matrix with its cached lower Cholesky factor."""

    values: np.ndarray
    factor: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]


def kernel_eval(spec: KernelSpec, x1, x2) -> float:
    """Evaluate the kernel on a single pair of points."""
    a = np.asarray(x1, dtype=float).ravel()
    b = np.asarray(x2, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError("points must share a dimension")
    if spec.kind == "linear":
        return float(np.dot(a, b))
    d2 = float(np.dot(a - b, a - b))
    return float(np.exp(-spec.gamma * d2))


def kernel_cross(spec: KernelSpec, xs1: np.ndarray, xs2: np.ndarray) -> np.ndarray:
    """Kernel matrix between two point sets, shape (len(xs1), len(xs2))."""
    xs1 = np.atleast_2d(np.asarray(xs1, dtype=float))
    xs2 = np.atleast_2d(np.asarray(xs2, dtype=float))
    if spec.kind == "linear":
        return xs1 @ xs2.T
    return np.exp(-spec.gamma * cdist(xs1, xs2, "sqeuclidean"))


def kernel_matrix(spec: KernelSpec, xs: np.ndarray) -> np.ndarray:
    """Plain symmetric kernel matrix on one point set, no jitter."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if spec.kind == "linear":
        values = xs @ xs.T
        # mirror the lower triangle so values[i, j] == values[j, i] exactly
        values = np.tril(values) + np.tril(values, -1).T
        return values
    if xs.shape[0] == 1:
        return np.ones((1, 1))
    d2 = squareform(pdist(xs, "sqeuclidean"))
    return np.exp(-spec.gamma * d2)


def gram_matrix(spec: KernelSpec, xs: np.ndarray) -> GramMatrix:
    """Build the jittered Gram matrix and factor it.

    Raises NumericsError when the Cholesky factorization fails; the fix
    is almost always a larger jitter.
    """
    values = kernel_matrix(spec, xs)
    values = values + spec.jitter * np.eye(values.shape[0])
    try:
        factor = np.linalg.cholesky(values)
    except np.linalg.LinAlgError as exc:
        raise NumericsError(
            "Gram factorization failed; increase the kernel jitter "
            f"(currently {spec.jitter:g})"
        ) from exc
    return GramMatrix(values=values, factor=factor)


def median_heuristic_gamma(xs: np.ndarray) -> float:
    """Return 1 / median squared pairwise distance of the points.

    Raises ValueError when fewer than two points are given or all
    points coincide (the median distance is then zero).
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if xs.shape[0] < 2:
        raise ValueError("median heuristic needs at least two points")
    med = float(np.median(pdist(xs, "sqeuclidean")))
    if med <= 0:
        raise ValueError("median pairwise distance is zero; gamma undefined")
    return 1.0 / med


def resolve_kernel(kind: str, gamma, xs: np.ndarray | None = None,
                   jitter: float = 1e-8) -> KernelSpec:
    """Build a KernelSpec, resolving gamma='auto' via the median heuristic."""
    if kind == "linear":
        return KernelSpec(kind="linear", gamma=None, jitter=jitter)
    if isinstance(gamma, str):
        if gamma != "auto":
            raise ValueError(f"gamma must be a positive number or 'auto', got {gamma!r}")
        if xs is None:
            raise ValueError("gamma='auto' needs data points to resolve against")
        gamma = median_heuristic_gamma(xs)
    return KernelSpec(kind="rbf", gamma=float(gamma), jitter=jitter)
