"""Quantization-aware training with a shared full-precision anchor.

The coupled scheme keeps one trainable full-precision matrix per layer and
derives every path's binary core from its running residual on each forward
pass, so later paths always see what earlier paths currently leave over. The
gradients for the per-channel scales are exact; the anchor itself receives the
effective-weight straight-through surrogate (the loss gradient times the input
batch). Four baseline variants reproduce the usual alternatives: independent
per-path latents updated by the same surrogate, a pinned first core, frozen
cores with trainable scales, and frozen scales with derived cores.

Batches are column-per-sample: X is (d_in, N), Y and the loss gradient are
(d_out, N).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .analysis import pearson
from .binarize import BinaryPath, ResidualStack, effective_weight, reconstruct, sign
from .initialization import calibrated_init, toy_calib_profile
from .losses import total_distill_grad, total_distill_loss
from .matrix import ShapeError, as_matrix

__all__ = [
    "VARIANTS",
    "LOSSES",
    "StateError",
    "TrainingDivergedError",
    "FrozenMask",
    "CoupledLayer",
    "StandardLayer",
    "GradientBundle",
    "TrainConfig",
    "TrainTrace",
    "variant_mask",
    "derive_paths",
    "coupled_forward",
    "derive_standard_paths",
    "standard_qat_forward",
    "backward",
    "sgd_step",
    "inner_product_drift",
    "iterative_direction_cosine",
    "trainable_matrix_count",
    "train_toy",
    "freeze",
    "write_trace_csv",
    "read_trace_csv",
]

VARIANTS = ("coupled", "standard_qat", "mbok_frozen_core", "scale_only", "scale_frozen")
LOSSES = ("mse_distill", "kl_distill")


class StateError(RuntimeError):
    """A layer is missing state the requested operation needs."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; training aborts rather than clipping silently."""

    def __init__(self, step: int, variant: str):
        self.step = step
        self.variant = variant
        super().__init__(f"non-finite loss at step {step} (variant {variant})")


@dataclass(frozen=True)
class FrozenMask:
    """Which parameter groups stay fixed: the anchor, each path's scales, and
    whether each path's core is pinned to its stored value instead of being
    derived from the residual chain."""

    w_fp: bool
    g: tuple[bool, ...]
    h: tuple[bool, ...]
    core: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "g", tuple(bool(b) for b in self.g))
        object.__setattr__(self, "h", tuple(bool(b) for b in self.h))
        object.__setattr__(self, "core", tuple(bool(b) for b in self.core))
        object.__setattr__(self, "w_fp", bool(self.w_fp))
        if not len(self.g) == len(self.h) == len(self.core):
            raise ValueError("mask groups disagree on path count")


def variant_mask(variant: str, k: int) -> FrozenMask:
    """The frozen-group configuration of each coupled-family variant.

    The standard variant is not mask-selectable: it trains one latent matrix
    per path and lives in StandardLayer instead.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    none = (False,) * k
    if variant == "coupled":
        return FrozenMask(w_fp=False, g=none, h=none, core=none)
    if variant == "mbok_frozen_core":
        return FrozenMask(w_fp=False, g=none, h=none, core=(True,) + (False,) * (k - 1))
    if variant == "scale_only":
        return FrozenMask(w_fp=True, g=none, h=none, core=(True,) * k)
    if variant == "scale_frozen":
        return FrozenMask(w_fp=False, g=(True,) * k, h=(True,) * k, core=none)
    raise ValueError(f"no mask for variant {variant!r}")


@dataclass(frozen=True)
class CoupledLayer:
    """Trainable layer state for the coupled-family variants."""

    stack: ResidualStack
    mask: FrozenMask

    def __post_init__(self):
        if self.stack.w_fp is None:
            raise StateError("a trainable layer needs the shared full-precision weight")
        if len(self.mask.g) != self.stack.k:
            raise ShapeError("mask path count must match the stack")

    @property
    def k(self) -> int:
        return self.stack.k

    @property
    def rows(self) -> int:
        return self.stack.rows

    @property
    def cols(self) -> int:
        return self.stack.cols


@dataclass(frozen=True)
class StandardLayer:
    """Baseline layer state: one independent latent matrix per path."""

    latents: tuple[np.ndarray, ...]
    gs: tuple[np.ndarray, ...]
    hs: tuple[np.ndarray, ...]

    def __post_init__(self):
        latents = tuple(as_matrix(m, "latent") for m in self.latents)
        if len(latents) < 1:
            raise ValueError("need at least one latent")
        shape = latents[0].shape
        if any(m.shape != shape for m in latents):
            raise ShapeError("latents must share dimensions")
        if not len(self.gs) == len(self.hs) == len(latents):
            raise ShapeError("one scale pair per latent required")
        object.__setattr__(self, "latents", latents)
        object.__setattr__(self, "gs", tuple(np.asarray(g, dtype=np.float64) for g in self.gs))
        object.__setattr__(self, "hs", tuple(np.asarray(h, dtype=np.float64) for h in self.hs))

    @property
    def k(self) -> int:
        return len(self.latents)

    @property
    def rows(self) -> int:
        return self.latents[0].shape[0]

    @property
    def cols(self) -> int:
        return self.latents[0].shape[1]


@dataclass(frozen=True)
class GradientBundle:
    """d_wfp is the shared surrogate; d_g / d_h are the exact scale gradients."""

    d_wfp: np.ndarray
    d_g: tuple[np.ndarray, ...]
    d_h: tuple[np.ndarray, ...]


def derive_paths(layer: CoupledLayer) -> tuple[list[BinaryPath], list[np.ndarray]]:
    """Run the residual chain: each core is the sign of what is left so far.

    Cores are recomputed from the current anchor on every call (never cached
    across steps); paths whose core the mask pins keep their stored core.
    Returns the derived paths and the residual after each one.
    """
    stack = layer.stack
    if stack.w_fp is None:
        raise StateError("core derivation needs the shared full-precision weight")
    residual = stack.w_fp
    derived: list[BinaryPath] = []
    residuals: list[np.ndarray] = []
    for i, stored in enumerate(stack.paths):
        core = stored.core if layer.mask.core[i] else sign(residual)
        path = BinaryPath(core=core, g=stored.g, h=stored.h)
        residual = residual - reconstruct(path)
        derived.append(path)
        residuals.append(residual)
    return derived, residuals


def coupled_forward(layer: CoupledLayer, x) -> tuple[np.ndarray, list[BinaryPath], list[np.ndarray]]:
    """Y = (sum of derived paths) X, plus the derivation for reuse in backward."""
    x = as_matrix(x, "input batch")
    if x.shape[0] != layer.cols:
        raise ShapeError("input batch height must equal the layer input width")
    derived, residuals = derive_paths(layer)
    y = effective_weight(derived) @ x
    return y, derived, residuals


def derive_standard_paths(layer: StandardLayer) -> list[BinaryPath]:
    """Each path's core is the sign of its own latent, independent of the rest."""
    return [
        BinaryPath(core=sign(m), g=g, h=h)
        for m, g, h in zip(layer.latents, layer.gs, layer.hs)
    ]


def standard_qat_forward(layer: StandardLayer, x) -> tuple[np.ndarray, list[BinaryPath]]:
    """Y = (sum of per-latent paths) X."""
    x = as_matrix(x, "input batch")
    if x.shape[0] != layer.cols:
        raise ShapeError("input batch height must equal the layer input width")
    derived = derive_standard_paths(layer)
    y = effective_weight(derived) @ x
    return y, derived


def backward(layer, x, delta, derived) -> GradientBundle:
    """Gradients for one batch.

    d_wfp = delta @ X.T is the effective-weight straight-through surrogate.
    The scale gradients are exact (cores treated as constants):
      d_g_i = sum_n delta_n * (B_i (h_i * x_n))
      d_h_i = sum_n (B_i^T (delta_n * g_i)) * x_n
    """
    x = as_matrix(x, "input batch")
    delta = as_matrix(delta, "output gradient")
    if x.shape[0] != layer.cols or delta.shape[0] != layer.rows:
        raise ShapeError("gradient/batch shapes do not match the layer")
    if x.shape[1] != delta.shape[1]:
        raise ShapeError("batch sizes of X and delta differ")
    d_wfp = delta @ x.T
    d_g = []
    d_h = []
    for path in derived:
        bx = path.core @ (path.h[:, None] * x)
        d_g.append(np.sum(delta * bx, axis=1))
        bt = path.core.T @ (delta * path.g[:, None])
        d_h.append(np.sum(bt * x, axis=1))
    return GradientBundle(d_wfp=d_wfp, d_g=tuple(d_g), d_h=tuple(d_h))


def sgd_step(layer, grads: GradientBundle, lr: float):
    """Plain gradient descent on the unfrozen groups; returns the new layer.

    For the standard variant every latent receives the identical shared
    surrogate d_wfp.
    """
    if lr < 0:
        raise ValueError("lr must be nonnegative")
    if isinstance(layer, StandardLayer):
        return StandardLayer(
            latents=tuple(m - lr * grads.d_wfp for m in layer.latents),
            gs=tuple(g - lr * dg for g, dg in zip(layer.gs, grads.d_g)),
            hs=tuple(h - lr * dh for h, dh in zip(layer.hs, grads.d_h)),
        )
    stack = layer.stack
    mask = layer.mask
    new_wfp = stack.w_fp if mask.w_fp else stack.w_fp - lr * grads.d_wfp
    new_paths = []
    for i, p in enumerate(stack.paths):
        new_paths.append(
            BinaryPath(
                core=p.core,
                g=p.g if mask.g[i] else p.g - lr * grads.d_g[i],
                h=p.h if mask.h[i] else p.h - lr * grads.d_h[i],
            )
        )
    return CoupledLayer(stack=ResidualStack(paths=tuple(new_paths), w_fp=new_wfp), mask=mask)


def inner_product_drift(w1, w2, g, eta: float) -> float:
    """Change of <W1, W2> when both receive the same step -eta*G.

    Returns the closed form -eta(<W1,G> + <W2,G>) + eta^2 ||G||^2 and checks it
    against the direct recomputation (they agree up to float64 rounding).
    """
    w1 = as_matrix(w1, "w1")
    w2 = as_matrix(w2, "w2")
    g = as_matrix(g, "g")
    if not w1.shape == w2.shape == g.shape:
        raise ShapeError("drift operands must share one shape")

    def inner(a, b):
        return float(np.sum(a * b))

    closed = -eta * (inner(w1, g) + inner(w2, g)) + eta * eta * inner(g, g)
    direct = inner(w1 - eta * g, w2 - eta * g) - inner(w1, w2)
    if abs(closed - direct) > 1e-12 * max(1.0, abs(direct)):
        raise ArithmeticError("closed-form drift disagrees with direct recomputation")
    return closed


def iterative_direction_cosine(g) -> float:
    """Cosine between the one-path-at-a-time update direction (0, -G) and the
    joint update direction (-G, -G) in the stacked parameter space.

    Computed generically from the stacked vectors; equals 1/sqrt(2) for every
    nonzero G.
    """
    mat = as_matrix(g, "update direction")
    if not mat.any():
        raise ValueError("cosine undefined for a zero update direction")
    flat = mat.ravel()
    single = np.concatenate([np.zeros_like(flat), -flat])
    joint = np.concatenate([-flat, -flat])
    return float(single @ joint / (np.linalg.norm(single) * np.linalg.norm(joint)))


def trainable_matrix_count(layer) -> int:
    """How many full matrices the optimizer updates (the scale vectors aside)."""
    if isinstance(layer, StandardLayer):
        return layer.k
    return 0 if layer.mask.w_fp else 1


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "coupled"
    lr: float = 1e-3
    steps: int = 200
    batch: int = 32
    loss: str = "mse_distill"
    gamma: float = 100.0
    seed: int = 0
    k: int = 2
    t_max: int = 20
    alpha_in: float = 0.8
    alpha_out: float = 0.65
    calib_batch: int = 256
    probe_batch: int = 256

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.batch < 1 or self.calib_batch < 1 or self.probe_batch < 1:
            raise ValueError("batch sizes must be at least 1")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.k < 1 or self.t_max < 1:
            raise ValueError("k and t_max must be at least 1")
        for name in ("alpha_in", "alpha_out"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


@dataclass(frozen=True)
class TrainTrace:
    """Per-state metrics on a fixed held-out probe batch.

    Row s describes the parameters after s updates, so a run of `steps` updates
    yields steps + 1 rows and steps = 0 leaves exactly the initial loss.
    residual_norms[s, i] is the Frobenius norm of the chain residual after path
    i (for the standard variant, which has no chain, the residual is measured
    against the teacher weight instead).
    """

    variant: str
    steps: np.ndarray
    loss: np.ndarray
    corr: np.ndarray
    residual_norms: np.ndarray
    final_layer: object
    final_effective: np.ndarray


def _forward_any(layer, x):
    if isinstance(layer, StandardLayer):
        y, derived = standard_qat_forward(layer, x)
        return y, derived, None
    return coupled_forward(layer, x)


def _split_path_outputs(derived, x) -> tuple[np.ndarray, np.ndarray]:
    """Path 1's output and the summed output of every later path."""
    y1 = reconstruct(derived[0]) @ x
    if len(derived) == 1:
        return y1, np.zeros_like(y1)
    rest = reconstruct(derived[1])
    for p in derived[2:]:
        rest = rest + reconstruct(p)
    return y1, rest @ x


def _residual_norms(derived, residuals, w_ref) -> list[float]:
    if residuals is not None:
        return [float(np.linalg.norm(r)) for r in residuals]
    acc = np.zeros_like(w_ref)
    norms = []
    for p in derived:
        acc = acc + reconstruct(p)
        norms.append(float(np.linalg.norm(w_ref - acc)))
    return norms


def train_toy(config: TrainConfig, teacher, data_gen=None) -> TrainTrace:
    """Distill a fixed random linear teacher into the selected variant.

    Every variant starts from the identical calibrated decomposition of the
    teacher. data_gen(rng, n) must return an input batch of shape (d_in, n);
    the default draws standard normal columns. The trace logs loss, inter-path
    output correlation, and per-path residual norms on a fixed probe batch at
    every parameter state.
    """
    w_t = as_matrix(teacher, "teacher weight")
    d_out, d_in = w_t.shape
    rng = np.random.default_rng(config.seed)
    if data_gen is None:
        def data_gen(r, n):
            return r.standard_normal((d_in, n))

    x_calib = data_gen(rng, config.calib_batch)
    profile = toy_calib_profile(w_t, x_calib, config.alpha_in, config.alpha_out)
    init_paths = calibrated_init(w_t, config.k, profile, config.t_max)
    x_probe = data_gen(rng, config.probe_batch)
    y_probe_t = w_t @ x_probe

    if config.variant == "standard_qat":
        layer = StandardLayer(
            latents=tuple(reconstruct(p) for p in init_paths),
            gs=tuple(p.g for p in init_paths),
            hs=tuple(p.h for p in init_paths),
        )
    else:
        layer = CoupledLayer(
            stack=ResidualStack(paths=tuple(init_paths), w_fp=w_t.copy()),
            mask=variant_mask(config.variant, config.k),
        )

    steps_log: list[int] = []
    loss_log: list[float] = []
    corr_log: list[float] = []
    res_log: list[list[float]] = []

    def log_state(step: int) -> None:
        y_s, derived, residuals = _forward_any(layer, x_probe)
        loss = total_distill_loss(y_s, y_probe_t, config.loss, config.gamma)
        if not math.isfinite(loss):
            raise TrainingDivergedError(step, config.variant)
        y1, y2 = _split_path_outputs(derived, x_probe)
        steps_log.append(step)
        loss_log.append(loss)
        corr_log.append(pearson(y1.ravel(), y2.ravel()))
        res_log.append(_residual_norms(derived, residuals, w_t))

    log_state(0)
    for step in range(1, config.steps + 1):
        x_batch = data_gen(rng, config.batch)
        y_t = w_t @ x_batch
        y_s, derived, _ = _forward_any(layer, x_batch)
        batch_loss = total_distill_loss(y_s, y_t, config.loss, config.gamma)
        if not math.isfinite(batch_loss):
            raise TrainingDivergedError(step, config.variant)
        delta = total_distill_grad(y_s, y_t, config.loss, config.gamma)
        grads = backward(layer, x_batch, delta, derived)
        layer = sgd_step(layer, grads, config.lr)
        log_state(step)

    _, derived, _ = _forward_any(layer, x_probe)
    return TrainTrace(
        variant=config.variant,
        steps=np.asarray(steps_log, dtype=np.int64),
        loss=np.asarray(loss_log, dtype=np.float64),
        corr=np.asarray(corr_log, dtype=np.float64),
        residual_norms=np.asarray(res_log, dtype=np.float64),
        final_layer=layer,
        final_effective=effective_weight(derived),
    )


def freeze(layer: CoupledLayer):
    """Derive the cores one last time, drop the anchor, and bit-pack the paths."""
    from .kernel import pack_stack

    derived, _ = derive_paths(layer)
    return pack_stack(derived)


def write_trace_csv(trace: TrainTrace, path) -> None:
    k = trace.residual_norms.shape[1]
    # the correlation column name contains a comma, so that cell is quoted
    header = ["step", "loss", '"corr(y1,y2)"'] + [f"residual_norm_{i + 1}" for i in range(k)]
    lines = [",".join(header)]
    for row in range(trace.steps.shape[0]):
        cells = [str(int(trace.steps[row])), repr(float(trace.loss[row])), repr(float(trace.corr[row]))]
        cells += [repr(float(v)) for v in trace.residual_norms[row]]
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trace_csv(path) -> dict[str, np.ndarray]:
    """Columns of a trace CSV as arrays: step, loss, corr, residual_norms."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or rows[0][:3] != ["step", "loss", "corr(y1,y2)"]:
        raise ValueError(f"not a trace CSV: {path}")
    body = rows[1:]
    return {
        "step": np.asarray([int(r[0]) for r in body], dtype=np.int64),
        "loss": np.asarray([float(r[1]) for r in body], dtype=np.float64),
        "corr": np.asarray([float(r[2]) for r in body], dtype=np.float64),
        "residual_norms": np.asarray([[float(v) for v in r[3:]] for r in body], dtype=np.float64),
    }
