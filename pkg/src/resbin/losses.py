"""Distillation losses shared by the initializer report and the training loop.

Batches are column-per-sample: Y has shape (d_out, N). Losses are scalars;
the *_grad companions return dL/dY_s with the same shape as Y_s.
"""
from __future__ import annotations

import numpy as np

from .matrix import ShapeError

__all__ = [
    "softmax_columns",
    "mse_distill",
    "mse_distill_grad",
    "kl_distill",
    "kl_distill_grad",
    "total_distill_loss",
    "total_distill_grad",
]


def _check_pair(y_s: np.ndarray, y_t: np.ndarray) -> None:
    if y_s.shape != y_t.shape or y_s.ndim != 2:
        raise ShapeError(f"student/teacher output shapes differ: {y_s.shape} vs {y_t.shape}")


def softmax_columns(y: np.ndarray) -> np.ndarray:
    """Column-wise softmax over the output dimension, temperature 1."""
    shifted = y - y.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def mse_distill(y_s: np.ndarray, y_t: np.ndarray) -> float:
    """||Y_s - Y_t||_F^2 / (N * d_out)."""
    _check_pair(y_s, y_t)
    d_out, n = y_s.shape
    diff = y_s - y_t
    return float(np.sum(diff * diff) / (n * d_out))


def mse_distill_grad(y_s: np.ndarray, y_t: np.ndarray) -> np.ndarray:
    _check_pair(y_s, y_t)
    d_out, n = y_s.shape
    return 2.0 * (y_s - y_t) / (n * d_out)


def kl_distill(y_s: np.ndarray, y_t: np.ndarray) -> float:
    """Mean over samples of KL(softmax(y_t) || softmax(y_s))."""
    _check_pair(y_s, y_t)
    p_t = softmax_columns(y_t)
    p_s = softmax_columns(y_s)
    # p_t > 0 always holds for finite logits, so the log is safe
    per_sample = np.sum(p_t * (np.log(p_t) - np.log(p_s)), axis=0)
    return float(per_sample.mean())


def kl_distill_grad(y_s: np.ndarray, y_t: np.ndarray) -> np.ndarray:
    _check_pair(y_s, y_t)
    n = y_s.shape[1]
    return (softmax_columns(y_s) - softmax_columns(y_t)) / n


def total_distill_loss(y_s: np.ndarray, y_t: np.ndarray, loss: str, gamma: float) -> float:
    """The trained objective: plain mse, or kl plus gamma-weighted mse."""
    if loss == "mse_distill":
        return mse_distill(y_s, y_t)
    if loss == "kl_distill":
        return kl_distill(y_s, y_t) + gamma * mse_distill(y_s, y_t)
    raise ValueError(f"unknown loss {loss!r}")


def total_distill_grad(y_s: np.ndarray, y_t: np.ndarray, loss: str, gamma: float) -> np.ndarray:
    if loss == "mse_distill":
        return mse_distill_grad(y_s, y_t)
    if loss == "kl_distill":
        return kl_distill_grad(y_s, y_t) + gamma * mse_distill_grad(y_s, y_t)
    raise ValueError(f"unknown loss {loss!r}")
