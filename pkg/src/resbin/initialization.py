"""Stack initializers: greedy and Gauss-Seidel residual refits, channel
importance preconditioning, and the initialization-quality report.

The greedy initializer fits each path once to the running residual. The
iterative initializer revisits every path for a number of sweeps, refitting it
against what all the other paths currently leave over, which lets the paths
co-adapt. The calibrated pipeline additionally re-weights the matrix by
per-channel importance before decomposing, trading weight-space accuracy for
accuracy on the directions the layer actually sees.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .binarize import BinaryPath, effective_weight, reconstruct, svid
from .losses import mse_distill, mse_distill_grad
from .matrix import as_matrix, as_vector, scale_rows_cols

__all__ = [
    "PROFILE_FLOOR",
    "CalibProfile",
    "InitReport",
    "collect_calib_profile",
    "toy_calib_profile",
    "precondition",
    "unprecondition_scales",
    "greedy_svid_init",
    "iterative_residual_svid",
    "calibrated_init",
    "init_report",
]

PROFILE_FLOOR = 1e-6

INIT_METHODS = ("greedy", "iterative", "iterative_precond")


@dataclass(frozen=True)
class CalibProfile:
    """Per-channel importance statistics with their mixing intensities.

    s_in / s_out are max-abs magnitudes per input/output channel, normalized to
    peak 1 and floored at PROFILE_FLOOR so their negative powers stay finite.
    alpha_in / alpha_out in [0, 1] set how strongly each side is applied.
    """

    s_in: np.ndarray
    s_out: np.ndarray
    alpha_in: float
    alpha_out: float

    def __post_init__(self):
        s_in = as_vector(self.s_in, name="s_in")
        s_out = as_vector(self.s_out, name="s_out")
        for name, s in (("s_in", s_in), ("s_out", s_out)):
            if s.min() <= 0.0:
                raise ValueError(f"{name} entries must be strictly positive")
            if abs(s.max() - 1.0) > 1e-12:
                raise ValueError(f"{name} must be normalized to max 1")
        for name, a in (("alpha_in", self.alpha_in), ("alpha_out", self.alpha_out)):
            if not 0.0 <= float(a) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        object.__setattr__(self, "s_in", s_in)
        object.__setattr__(self, "s_out", s_out)
        object.__setattr__(self, "alpha_in", float(self.alpha_in))
        object.__setattr__(self, "alpha_out", float(self.alpha_out))


@dataclass(frozen=True)
class InitReport:
    """Weight-space error and pre-training task loss of one decomposition."""

    method: str
    avg_mae: float
    avg_mse: float
    initial_task_loss: float

    def __post_init__(self):
        if self.method not in INIT_METHODS:
            raise ValueError(f"method must be one of {INIT_METHODS}")
        for name in ("avg_mae", "avg_mse", "initial_task_loss"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value < 0.0:
                raise ValueError(f"{name} must be finite and nonnegative")
            object.__setattr__(self, name, value)


def _channel_peaks(samples, name: str) -> np.ndarray:
    """Max-abs per channel over a nonempty sample collection.

    Accepts a (d, N) array with one column per sample, or an iterable of 1-d
    sample vectors.
    """
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[1] < 1:
        raise ValueError(f"{name}: need at least one sample vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite entries")
    return np.abs(arr).max(axis=1)


def _normalize_profile_side(peaks: np.ndarray) -> np.ndarray:
    top = peaks.max()
    if top == 0.0:
        # every channel dead: no information, weight them equally
        return np.ones_like(peaks)
    return np.maximum(peaks / top, PROFILE_FLOOR)


def collect_calib_profile(layer_inputs, output_grads, alpha_in: float, alpha_out: float) -> CalibProfile:
    """Profile from observed input activations and output-side gradients.

    s_in[j] = max_n |x_n[j]| and s_out[i] = max_n |d_n[i]|, each normalized by
    its own maximum and floored at PROFILE_FLOOR.
    """
    s_in = _normalize_profile_side(_channel_peaks(layer_inputs, "layer_inputs"))
    s_out = _normalize_profile_side(_channel_peaks(output_grads, "output_grads"))
    return CalibProfile(s_in=s_in, s_out=s_out, alpha_in=alpha_in, alpha_out=alpha_out)


def toy_calib_profile(w, calib_inputs, alpha_in: float, alpha_out: float) -> CalibProfile:
    """Profile for a single linear layer from calibration inputs alone.

    Output-gradient samples are the mse-distillation gradient columns taken at
    a zero student, which exist before any decomposition does; after
    normalization they reduce to per-channel peak magnitudes of the layer's own
    outputs on the calibration batch.
    """
    mat = as_matrix(w, "layer weight")
    x = as_matrix(calib_inputs, "calibration inputs")
    if x.shape[0] != mat.shape[1]:
        raise ValueError("calibration inputs do not match the layer input width")
    y_t = mat @ x
    grads = mse_distill_grad(np.zeros_like(y_t), y_t)
    return collect_calib_profile(x, grads, alpha_in, alpha_out)


def precondition(w, profile: CalibProfile) -> np.ndarray:
    """W'[i, j] = s_out[i]^alpha_out * W[i, j] * s_in[j]^alpha_in."""
    row = profile.s_out ** profile.alpha_out
    col = profile.s_in ** profile.alpha_in
    return scale_rows_cols(w, row, col)


def unprecondition_scales(paths, profile: CalibProfile) -> list[BinaryPath]:
    """Map path scales fitted in the preconditioned domain back to the original."""
    row = profile.s_out ** (-profile.alpha_out)
    col = profile.s_in ** (-profile.alpha_in)
    return [BinaryPath(core=p.core, g=p.g * row, h=p.h * col) for p in paths]


def greedy_svid_init(w, k: int) -> list[BinaryPath]:
    """Fit each path once to the running residual, in order."""
    if k < 1:
        raise ValueError("k must be at least 1")
    residual = as_matrix(w, "weight").copy()
    paths = []
    for _ in range(k):
        path = svid(residual)
        residual = residual - reconstruct(path)
        paths.append(path)
    return paths


def iterative_residual_svid(w, k: int, t_max: int = 20, stop_rtol: float = 1e-10) -> list[BinaryPath]:
    """Gauss-Seidel refinement: refit each path against all the others.

    Sweep t replaces path i with svid of W minus every other path's current
    reconstruction. One sweep from scratch is exactly the greedy pass. Sweeps
    stop early once the residual norm improves by less than stop_rtol relative
    between consecutive sweeps.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if t_max < 1:
        raise ValueError("t_max must be at least 1")
    mat = as_matrix(w, "weight")
    recons = [np.zeros_like(mat) for _ in range(k)]
    paths: list[BinaryPath] = [None] * k  # type: ignore[list-item]
    prev_norm: float | None = None
    for _ in range(t_max):
        for i in range(k):
            # Subtract the other paths one by one in ascending order. On the
            # first sweep the not-yet-fitted paths are zero and x - 0 == x, so
            # each residual here is bit-identical to the greedy pass's.
            residual = mat
            for j in range(k):
                if j != i:
                    residual = residual - recons[j]
            paths[i] = svid(residual)
            recons[i] = reconstruct(paths[i])
        full = mat
        for rec in recons:
            full = full - rec
        norm = float(np.linalg.norm(full))
        if prev_norm is not None and prev_norm - norm < stop_rtol * prev_norm:
            break
        if norm == 0.0:
            break
        prev_norm = norm
    return paths


def calibrated_init(w, k: int, profile: CalibProfile, t_max: int = 20) -> list[BinaryPath]:
    """Precondition, decompose iteratively, map the scales back."""
    w_prime = precondition(w, profile)
    paths_prime = iterative_residual_svid(w_prime, k, t_max)
    return unprecondition_scales(paths_prime, profile)


def init_report(w, paths, probe_inputs, method: str) -> InitReport:
    """Weight MAE/MSE of the decomposition plus its pre-training task loss.

    The task loss is the mse distillation loss of the decomposed layer against
    the full-precision layer on the probe inputs, before any update.
    """
    mat = as_matrix(w, "weight")
    x = as_matrix(probe_inputs, "probe inputs")
    if x.shape[0] != mat.shape[1]:
        raise ValueError("probe inputs do not match the layer input width")
    approx = effective_weight(paths)
    if approx.shape != mat.shape:
        raise ValueError("decomposition shape does not match the weight")
    diff = mat - approx
    loss = mse_distill(approx @ x, mat @ x)
    return InitReport(
        method=method,
        avg_mae=float(np.abs(diff).mean()),
        avg_mse=float((diff * diff).mean()),
        initial_task_loss=loss,
    )
