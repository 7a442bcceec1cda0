"""Dual-scale binary weight paths and their sign/magnitude decomposition.

A path approximates a real matrix R as g ⊙ B ⊙ h: a ±1 core B = sign(R) with a
per-output-row scale vector g and a per-input-column scale vector h. A stack of
k paths approximates a matrix as the sum of its paths, each fitted to what the
previous ones left over.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .matrix import ShapeError, as_matrix, as_vector, rank1_svd, scale_rows_cols

__all__ = [
    "BinaryPath",
    "ResidualStack",
    "sign",
    "svid",
    "reconstruct",
    "effective_weight",
]


@dataclass(frozen=True)
class BinaryPath:
    """One dual-scale binary term: core in {-1,+1}, row scales g, column scales h."""

    core: np.ndarray
    g: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        core = as_matrix(self.core, "path core")
        if not np.all(np.abs(core) == 1.0):
            raise ValueError("path core entries must be exactly +1 or -1")
        g = as_vector(self.g, core.shape[0], "path row scale g")
        h = as_vector(self.h, core.shape[1], "path column scale h")
        object.__setattr__(self, "core", core)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "h", h)

    @property
    def rows(self) -> int:
        return self.core.shape[0]

    @property
    def cols(self) -> int:
        return self.core.shape[1]


@dataclass(frozen=True)
class ResidualStack:
    """k binary paths plus the shared full-precision weight while training.

    w_fp is present during training (it anchors the per-step core derivation)
    and absent after freezing.
    """

    paths: tuple[BinaryPath, ...]
    w_fp: np.ndarray | None = None

    def __post_init__(self):
        paths = tuple(self.paths)
        if len(paths) < 1:
            raise ValueError("a stack needs at least one path")
        rows, cols = paths[0].rows, paths[0].cols
        for p in paths[1:]:
            if (p.rows, p.cols) != (rows, cols):
                raise ShapeError("all paths in a stack must share dimensions")
        w_fp = self.w_fp
        if w_fp is not None:
            w_fp = as_matrix(w_fp, "shared full-precision weight")
            if w_fp.shape != (rows, cols):
                raise ShapeError("shared weight dimensions must match the paths")
        object.__setattr__(self, "paths", paths)
        object.__setattr__(self, "w_fp", w_fp)

    @property
    def k(self) -> int:
        return len(self.paths)

    @property
    def rows(self) -> int:
        return self.paths[0].rows

    @property
    def cols(self) -> int:
        return self.paths[0].cols


def sign(m) -> np.ndarray:
    """Entrywise sign with sign(0) := +1 (fixed tie-break for determinism)."""
    mat = as_matrix(m, "sign input")
    return np.where(mat >= 0.0, 1.0, -1.0)


def svid(r) -> BinaryPath:
    """Decompose R into sign core and rank-1 magnitude scales.

    B = sign(R); the scales come from the leading singular triple (sigma, u, v)
    of |R| as g = sqrt(sigma)*u, h = sqrt(sigma)*v. The symmetric square-root
    split balances the two scale vectors; any split reconstructs identically.
    Entries of u, v below zero are numerical noise (|R| is nonnegative, so the
    true leading pair is nonnegative) and are clamped to 0 before scaling.
    """
    mat = as_matrix(r, "svid input")
    core = sign(mat)
    factor = rank1_svd(np.abs(mat))
    u = np.maximum(factor.u, 0.0)
    v = np.maximum(factor.v, 0.0)
    root = math.sqrt(factor.sigma)
    return BinaryPath(core=core, g=root * u, h=root * v)


def reconstruct(path: BinaryPath) -> np.ndarray:
    """Dense weight contributed by one path: g ⊙ B ⊙ h."""
    return scale_rows_cols(path.core, path.g, path.h)


def effective_weight(stack) -> np.ndarray:
    """Sum of all path reconstructions, accumulated in ascending path order.

    Accepts a ResidualStack or any iterable of BinaryPath.
    """
    paths = stack.paths if isinstance(stack, ResidualStack) else tuple(stack)
    if len(paths) < 1:
        raise ValueError("need at least one path")
    total = reconstruct(paths[0])
    for p in paths[1:]:
        total = total + reconstruct(p)
    return total
