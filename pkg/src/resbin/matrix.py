"""Dense linear-algebra substrate shared by the rest of the package.

Weights, activations, gradients, and binary cores all travel as plain float64
numpy arrays. This module pins down the conventions everything else relies on:
shape and finiteness validation, dual-axis scaling, a matrix-vector product
with a fixed per-row accumulation order, and the power-iteration rank-1 SVD
that the decomposition code consumes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ShapeError",
    "Rank1Factor",
    "as_matrix",
    "as_vector",
    "scale_rows_cols",
    "matvec",
    "rank1_svd",
]


class ShapeError(ValueError):
    """Operands disagree about dimensions."""


def as_matrix(w, name: str = "matrix") -> np.ndarray:
    """Validate and return `w` as a finite 2-d float64 array."""
    arr = np.asarray(w, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name}: expected 2 dimensions, got {arr.ndim}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name}: empty axis in shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite entries")
    return arr


def as_vector(v, length: int | None = None, name: str = "vector") -> np.ndarray:
    """Validate and return `v` as a finite 1-d float64 array."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name}: expected 1 dimension, got {arr.ndim}")
    if length is not None and arr.shape[0] != length:
        raise ShapeError(f"{name}: expected length {length}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite entries")
    return arr


@dataclass(frozen=True)
class Rank1Factor:
    """Leading singular triple (sigma, u, v) with unit u, v and sigma >= 0."""

    sigma: float
    u: np.ndarray
    v: np.ndarray


def scale_rows_cols(w, g, h) -> np.ndarray:
    """out[i, j] = g[i] * w[i, j] * h[j]."""
    mat = as_matrix(w, "scale_rows_cols matrix")
    row = as_vector(g, mat.shape[0], "row scale")
    col = as_vector(h, mat.shape[1], "column scale")
    return row[:, None] * mat * col[None, :]


def matvec(w, x) -> np.ndarray:
    """Dense product W @ x with ascending-column accumulation per row.

    np.add.accumulate applies addition strictly sequentially, so each output
    entry is the exact left-to-right float64 sum of the per-column products.
    """
    mat = as_matrix(w, "matvec matrix")
    vec = as_vector(x, mat.shape[1], "matvec input")
    return np.add.accumulate(mat * vec[None, :], axis=1)[:, -1]


def rank1_svd(m, tol: float = 1e-13, max_iters: int = 1000) -> Rank1Factor:
    """Leading singular triple via power iteration on the Gram matrix.

    Iterates v <- normalize(Mt M v) until successive right-vector estimates
    differ by less than `tol` in l2 norm, or `max_iters` is reached. The sign
    is normalized so the largest-magnitude entry of u is nonnegative. An
    all-zero matrix returns sigma = 0 with canonical basis vectors (documented
    degenerate return, not an error). For a nonnegative matrix the start
    vector is nonnegative and every iterate stays entrywise nonnegative, so
    the returned u, v are the nonnegative leading pair.
    """
    mat = as_matrix(m, "rank1_svd input")
    if tol <= 0:
        raise ValueError("tol must be positive")
    rows, cols = mat.shape
    if not mat.any():
        u = np.zeros(rows)
        v = np.zeros(cols)
        u[0] = 1.0
        v[0] = 1.0
        return Rank1Factor(0.0, u, v)

    v = _power_iterate(mat, tol, max_iters, restart=0)
    mv = mat @ v
    sigma = float(np.linalg.norm(mv))
    if sigma == 0.0:
        # Nonzero matrix whose range ended up orthogonal to the start vector;
        # one restart with an independently-seeded start escapes it.
        v = _power_iterate(mat, tol, max_iters, restart=1)
        mv = mat @ v
        sigma = float(np.linalg.norm(mv))
        if sigma == 0.0:
            raise ArithmeticError("power iteration could not leave the null space")
    u = mv / sigma

    pivot = int(np.argmax(np.abs(u)))
    if u[pivot] < 0.0:
        u = -u
        v = -v
    return Rank1Factor(sigma, u, v)


def _power_iterate(mat: np.ndarray, tol: float, max_iters: int, restart: int) -> np.ndarray:
    rows, cols = mat.shape
    rng = np.random.default_rng([rows, cols, restart])
    if restart == 0:
        # Strictly positive start: keeps iterates exactly nonnegative on
        # nonnegative matrices and always overlaps their Perron direction.
        v = np.abs(rng.standard_normal(cols)) + 1.0
    else:
        v = rng.standard_normal(cols)
    v /= np.linalg.norm(v)
    for _ in range(max_iters):
        w = mat.T @ (mat @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            break
        w /= norm
        if np.linalg.norm(w - v) < tol:
            return w
        v = w
    return v
