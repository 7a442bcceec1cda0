"""Experiment driver exposing every pipeline as a reproducible subcommand.

Each run resolves its full parameter set into a RunSpec, prints it as one JSON
line, writes it to a sidecar JSON next to the outputs, and then produces CSVs
(and SVGs where a figure helps) under the --out directory. Identical RunSpecs
produce byte-identical CSVs.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np

from .analysis import (
    build_toy_mlp,
    decompose_mse,
    layerwise_report,
    verify_reference_rows,
    write_decomposition_csv,
)
from .binarize import ResidualStack, effective_weight, reconstruct
from .container import ContainerPayload, load_container, save_container
from .initialization import (
    calibrated_init,
    greedy_svid_init,
    init_report,
    iterative_residual_svid,
    precondition,
    toy_calib_profile,
    unprecondition_scales,
)
from .kernel import bench, pack_stack, write_bench_csv
from .losses import mse_distill
from .matrix import as_matrix
from .plots import (
    save_correlation_plot,
    save_layerwise_bars,
    save_loss_plot,
    save_sweep_plot,
)
from .qat import (
    StandardLayer,
    TrainConfig,
    derive_paths,
    derive_standard_paths,
    read_trace_csv,
    train_toy,
    write_trace_csv,
)

__all__ = ["RunSpec", "CliError", "main", "build_parser"]

SEED_ENV = "RABIT_SEED"
DEFAULT_BENCH_SHAPES = "4096x4096,11008x4096,5120x5120,13824x5120"
DEFAULT_ALPHA_IN_GRID = "0.75,0.80,0.85,0.90"
DEFAULT_ALPHA_OUT_GRID = "0.55,0.60,0.65,0.70"
DEFAULT_T_MAX_LIST = "1,2,3,5,10,20"
SWEEP_SATURATION_RTOL = 1e-4

VARIANT_NAMES = {
    "coupled": "coupled",
    "standard": "standard_qat",
    "mbok": "mbok_frozen_core",
    "scale-only": "scale_only",
    "scale-frozen": "scale_frozen",
}
LOSS_NAMES = {"mse": "mse_distill", "kl": "kl_distill"}


class CliError(ValueError):
    """User-facing argument or input-data problem."""


@dataclass(frozen=True)
class RunSpec:
    """Fully resolved parameters of one run, the reproducibility contract."""

    subcommand: str
    seed: int
    params: dict

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise CliError("seed must fit in an unsigned 64-bit integer")
        object.__setattr__(self, "seed", int(self.seed))

    def as_dict(self) -> dict:
        out = {"subcommand": self.subcommand, "seed": self.seed}
        out.update(self.params)
        return out

    def announce(self, out_dir: Path, sidecar_name: str) -> None:
        blob = json.dumps(self.as_dict(), sort_keys=True)
        print(f"runspec {blob}")
        with open(out_dir / sidecar_name, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(self.as_dict(), sort_keys=True, indent=2) + "\n")


def _env_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError as exc:
        raise CliError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc


def _resolve_seed(args) -> int:
    return args.seed if args.seed is not None else _env_seed()


def _out_dir(args) -> Path:
    path = Path(args.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _parse_float_list(raw: str, flag: str) -> list[float]:
    try:
        values = [float(tok) for tok in raw.split(",") if tok.strip()]
    except ValueError as exc:
        raise CliError(f"{flag} must be a comma-separated float list, got {raw!r}") from exc
    if not values:
        raise CliError(f"{flag} must contain at least one value")
    return values


def _parse_int_list(raw: str, flag: str) -> list[int]:
    try:
        values = [int(tok) for tok in raw.split(",") if tok.strip()]
    except ValueError as exc:
        raise CliError(f"{flag} must be a comma-separated integer list, got {raw!r}") from exc
    if not values:
        raise CliError(f"{flag} must contain at least one value")
    return values


def _parse_shapes(raw: str) -> list[tuple[int, int]]:
    shapes = []
    for tok in raw.split(","):
        tok = tok.strip()
        if not tok:
            continue
        parts = tok.lower().split("x")
        if len(parts) != 2:
            raise CliError(f"shape {tok!r} must look like ROWSxCOLS")
        try:
            rows, cols = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise CliError(f"shape {tok!r} must use integer dimensions") from exc
        if rows < 1 or cols < 1:
            raise CliError(f"shape {tok!r} must have positive dimensions")
        shapes.append((rows, cols))
    if not shapes:
        raise CliError("--shapes must contain at least one ROWSxCOLS entry")
    return shapes


def _channel_scales(d_in: int, spread: float) -> np.ndarray:
    if spread < 1.0:
        raise CliError("--channel-spread must be at least 1")
    if d_in == 1 or spread == 1.0:
        return np.ones(d_in)
    return spread ** (np.arange(d_in) / (d_in - 1))


def _gen_inputs(rng, d_in: int, n: int, spread: float) -> np.ndarray:
    return _channel_scales(d_in, spread)[:, None] * rng.standard_normal((d_in, n))


def _load_weight_file(path: str) -> np.ndarray:
    if not os.path.exists(path):
        raise CliError(f"weight file not found: {path}")
    try:
        raw = np.load(path)
    except Exception as exc:
        raise CliError(f"could not read weight file {path}: {exc}") from exc
    return as_matrix(raw, "weight file contents")


def _resolve_weight(args, rng) -> tuple[np.ndarray, str]:
    """The working matrix plus a short provenance string for the RunSpec."""
    if getattr(args, "weight_file", None):
        w = _load_weight_file(args.weight_file)
        return w, args.weight_file
    if getattr(args, "random", None):
        d_out, d_in = args.random
        if d_out < 1 or d_in < 1:
            raise CliError("--random dimensions must be positive")
        return rng.standard_normal((d_out, d_in)) / math.sqrt(d_in), f"random:{d_out}x{d_in}"
    raise CliError("provide a weight source: --weight-file or --random D_OUT D_IN")


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------- decompose


def cmd_decompose(args) -> int:
    seed = _resolve_seed(args)
    out = _out_dir(args)
    if args.k < 1:
        raise CliError("--k must be at least 1")
    if args.t_max < 1:
        raise CliError("--t-max must be at least 1")
    rng = np.random.default_rng(seed)
    w, source = _resolve_weight(args, rng)
    d_in = w.shape[1]
    x_calib = _gen_inputs(rng, d_in, args.calib_samples, args.channel_spread)
    x_probe = _gen_inputs(rng, d_in, args.calib_samples, args.channel_spread)

    spec = RunSpec(
        subcommand="decompose",
        seed=seed,
        params={
            "alpha_in": args.alpha_in,
            "alpha_out": args.alpha_out,
            "calib_samples": args.calib_samples,
            "channel_spread": args.channel_spread,
            "container": str(out / "decomposition.rbit"),
            "k": args.k,
            "method": args.method,
            "report": str(out / "init_report.csv"),
            "t_max": args.t_max,
            "weight_source": source,
        },
    )
    spec.announce(out, "runspec_decompose.json")

    calib = None
    if args.method == "greedy":
        paths = greedy_svid_init(w, args.k)
        report_method = "greedy"
    elif args.method == "iterative":
        paths = iterative_residual_svid(w, args.k, t_max=args.t_max)
        report_method = "iterative"
    else:
        calib = toy_calib_profile(w, x_calib, args.alpha_in, args.alpha_out)
        paths = calibrated_init(w, args.k, calib, t_max=args.t_max)
        report_method = "iterative_precond"

    report = init_report(w, paths, x_probe, report_method)
    save_container(
        out / "decomposition.rbit",
        ContainerPayload(packed=pack_stack(paths), w_fp=w.astype(np.float32), calib=calib),
    )
    with open(out / "init_report.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("method,avg_mae,avg_mse,initial_task_loss\n")
        fh.write(
            f"{report.method},{_fmt(report.avg_mae)},{_fmt(report.avg_mse)},"
            f"{_fmt(report.initial_task_loss)}\n"
        )
    print(
        f"avg_mae={_fmt(report.avg_mae)} avg_mse={_fmt(report.avg_mse)} "
        f"initial_task_loss={_fmt(report.initial_task_loss)}"
    )
    return 0


# -------------------------------------------------------------------- train


def cmd_train(args) -> int:
    seed = _resolve_seed(args)
    out = _out_dir(args)
    variant = VARIANT_NAMES[args.variant]
    loss = LOSS_NAMES[args.loss]
    config = TrainConfig(
        variant=variant,
        lr=args.lr,
        steps=args.steps,
        batch=args.batch,
        loss=loss,
        gamma=args.gamma,
        seed=seed,
        k=args.k,
        t_max=args.t_max,
        alpha_in=args.alpha_in,
        alpha_out=args.alpha_out,
        calib_batch=args.calib_samples,
        probe_batch=args.probe_samples,
    )
    trace_path = out / f"trace_{variant}.csv"
    model_path = out / f"model_{variant}.rbit"
    spec = RunSpec(
        subcommand="train",
        seed=seed,
        params={
            "alpha_in": config.alpha_in,
            "alpha_out": config.alpha_out,
            "batch": config.batch,
            "calib_samples": config.calib_batch,
            "container": str(model_path),
            "d_in": args.d_in,
            "d_out": args.d_out,
            "gamma": config.gamma,
            "k": config.k,
            "loss": config.loss,
            "lr": config.lr,
            "probe_samples": config.probe_batch,
            "steps": config.steps,
            "t_max": config.t_max,
            "trace": str(trace_path),
            "variant": variant,
        },
    )
    spec.announce(out, f"runspec_train_{variant}.json")

    if args.d_out < 1 or args.d_in < 1:
        raise CliError("--d-out and --d-in must be positive")
    teacher_rng = np.random.default_rng([seed, args.d_out, args.d_in])
    teacher = teacher_rng.standard_normal((args.d_out, args.d_in)) / math.sqrt(args.d_in)

    trace = train_toy(config, teacher)
    write_trace_csv(trace, trace_path)
    if isinstance(trace.final_layer, StandardLayer):
        derived = derive_standard_paths(trace.final_layer)
        save_container(model_path, pack_stack(derived))
    else:
        derived, _ = derive_paths(trace.final_layer)
        save_container(
            model_path,
            ResidualStack(paths=tuple(derived), w_fp=trace.final_layer.stack.w_fp),
        )
    print(
        f"variant={variant} steps={config.steps} "
        f"final_loss={_fmt(trace.loss[-1])} final_corr={_fmt(trace.corr[-1])}"
    )
    return 0


# ------------------------------------------------------------------ analyze


def _analyze_table1(out: Path) -> bool:
    rows = verify_reference_rows()
    lines = ["layer_id,scheme,cov_err,total_err,ok"]
    for r in rows:
        lines.append(
            f"{r['layer']},{r['scheme']},{_fmt(r['cov_err'])},{_fmt(r['total_err'])},"
            f"{'true' if r['ok'] else 'false'}"
        )
        print(f"table1 {r['layer']} {r['scheme']} ok={'true' if r['ok'] else 'false'}")
    with open(out / "table1_check.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return all(r["ok"] for r in rows)


def _analyze_traces(out: Path, trace_paths: list[str]) -> None:
    loss_curves: dict[str, tuple] = {}
    corr_curves: dict[str, tuple] = {}
    for path in trace_paths:
        if not os.path.exists(path):
            raise CliError(f"trace file not found: {path}")
        data = read_trace_csv(path)
        label = Path(path).stem
        if label in loss_curves:
            label = f"{label}_{len(loss_curves)}"
        loss_curves[label] = (data["step"], data["loss"])
        corr_curves[label] = (data["step"], data["corr"])
    save_loss_plot(out / "loss_curves.svg", loss_curves)
    save_correlation_plot(out / "corr_curves.svg", corr_curves)
    print(f"plotted {len(loss_curves)} trace(s) to loss_curves.svg and corr_curves.svg")


def _analyze_container(out: Path, container_path: str, probe_samples: int, seed: int) -> None:
    if not os.path.exists(container_path):
        raise CliError(f"container not found: {container_path}")
    payload = load_container(container_path)
    stack = payload.to_residual_stack()
    if stack.k < 2:
        raise CliError("inter-path decomposition needs at least two paths")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((stack.cols, probe_samples))
    w_ref = stack.w_fp if stack.w_fp is not None else effective_weight(stack)
    y_t = w_ref @ x
    y1 = reconstruct(stack.paths[0]) @ x
    rest = reconstruct(stack.paths[1])
    for p in stack.paths[2:]:
        rest = rest + reconstruct(p)
    y2 = rest @ x
    layer_id = Path(container_path).stem
    rows = [(layer_id, decompose_mse(y_t, y1, y2))]
    write_decomposition_csv(rows, out / "decomposition.csv")
    d = rows[0][1]
    print(
        f"decomposition {layer_id}: c_prime={_fmt(d.c_prime)} corr={_fmt(d.corr)} "
        f"cov={_fmt(d.covariance)} total={_fmt(d.total)}"
    )


def _analyze_toy_layers(out: Path, args, seed: int) -> None:
    if args.toy_layers < 1:
        raise CliError("--toy-layers must be at least 1")
    rng = np.random.default_rng(seed)
    dims = [args.toy_dim] * (args.toy_layers + 1)
    model = build_toy_mlp(
        rng,
        dims,
        k=args.k,
        alpha_in=args.alpha_in,
        alpha_out=args.alpha_out,
        t_max=args.t_max,
        calib_batch=args.calib_samples,
    )
    probe = rng.standard_normal((args.toy_dim, args.probe_samples))
    rows = layerwise_report(model, probe)
    write_decomposition_csv(rows, out / "layerwise.csv")
    save_layerwise_bars(
        out / "layerwise_bars.svg",
        [layer_id for layer_id, _ in rows],
        [d.c_prime for _, d in rows],
        [d.covariance for _, d in rows],
        [d.total for _, d in rows],
    )
    for layer_id, d in rows:
        print(f"layer {layer_id}: total={_fmt(d.total)} corr={_fmt(d.corr)}")


def cmd_analyze(args) -> int:
    seed = _resolve_seed(args)
    out = _out_dir(args)
    if not (args.verify_table1 or args.trace or args.container or args.toy_layers):
        raise CliError(
            "nothing to analyze: pass --verify-table1, --trace, --container, or --toy-layers"
        )
    spec = RunSpec(
        subcommand="analyze",
        seed=seed,
        params={
            "alpha_in": args.alpha_in,
            "alpha_out": args.alpha_out,
            "calib_samples": args.calib_samples,
            "container": args.container or "",
            "k": args.k,
            "probe_samples": args.probe_samples,
            "t_max": args.t_max,
            "toy_dim": args.toy_dim,
            "toy_layers": args.toy_layers or 0,
            "traces": list(args.trace or []),
            "verify_table1": bool(args.verify_table1),
        },
    )
    spec.announce(out, "runspec_analyze.json")

    ok = True
    if args.verify_table1:
        ok = _analyze_table1(out)
    if args.trace:
        _analyze_traces(out, args.trace)
    if args.container:
        _analyze_container(out, args.container, args.probe_samples, seed)
    if args.toy_layers:
        _analyze_toy_layers(out, args, seed)
    if not ok:
        raise CliError("reference decomposition rows failed the arithmetic check")
    return 0


# --------------------------------------------------------------- gridsearch


def cmd_gridsearch(args) -> int:
    seed = _resolve_seed(args)
    out = _out_dir(args)
    alpha_in_grid = _parse_float_list(args.alpha_in_list, "--alpha-in-list")
    alpha_out_grid = _parse_float_list(args.alpha_out_list, "--alpha-out-list")
    spec = RunSpec(
        subcommand="gridsearch",
        seed=seed,
        params={
            "alpha_in_list": alpha_in_grid,
            "alpha_out_list": alpha_out_grid,
            "calib_samples": args.calib_samples,
            "channel_spread": args.channel_spread,
            "d_in": args.d_in,
            "d_out": args.d_out,
            "grid_csv": str(out / "gridsearch.csv"),
            "k": args.k,
            "metric": args.metric,
            "t_max": args.t_max,
        },
    )
    spec.announce(out, "runspec_gridsearch.json")

    rng = np.random.default_rng(seed)
    if args.d_out < 1 or args.d_in < 1:
        raise CliError("--d-out and --d-in must be positive")
    w = rng.standard_normal((args.d_out, args.d_in)) / math.sqrt(args.d_in)
    x_calib = _gen_inputs(rng, args.d_in, args.calib_samples, args.channel_spread)
    x_probe = _gen_inputs(rng, args.d_in, args.calib_samples, args.channel_spread)

    lines = ["alpha_in,alpha_out,weight_mse,initial_loss"]
    best = None
    for a_in, a_out in product(alpha_in_grid, alpha_out_grid):
        profile = toy_calib_profile(w, x_calib, a_in, a_out)
        paths = calibrated_init(w, args.k, profile, t_max=args.t_max)
        approx = effective_weight(paths)
        weight_mse = float(((w - approx) ** 2).mean())
        initial_loss = mse_distill(approx @ x_probe, w @ x_probe)
        lines.append(f"{_fmt(a_in)},{_fmt(a_out)},{_fmt(weight_mse)},{_fmt(initial_loss)}")
        if best is None or initial_loss < best[2]:
            best = (a_in, a_out, initial_loss)
    with open(out / "gridsearch.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    print(
        f"best alpha_in={_fmt(best[0])} alpha_out={_fmt(best[1])} "
        f"initial_loss={_fmt(best[2])}"
    )
    return 0


# -------------------------------------------------------------------- bench


def cmd_bench(args) -> int:
    seed = _resolve_seed(args)
    out = _out_dir(args)
    shapes = _parse_shapes(args.shapes)
    if args.reps < 1:
        raise CliError("--reps must be at least 1")
    if args.k < 1:
        raise CliError("--k must be at least 1")
    spec = RunSpec(
        subcommand="bench",
        seed=seed,
        params={
            "bench_csv": str(out / "bench.csv"),
            "k": args.k,
            "reps": args.reps,
            "shapes": [f"{r}x{c}" for r, c in shapes],
        },
    )
    spec.announce(out, "runspec_bench.json")

    rows = bench(shapes, k=args.k, repetitions=args.reps, seed=seed)
    write_bench_csv(rows, out / "bench.csv")
    for r in rows:
        print(
            f"bench {r['shape']} k={r['k']} {r['impl']}: median={r['median_us']:.1f}us "
            f"bytes={r['bytes_weights']}"
        )
    return 0


# --------------------------------------------------------------- svid-sweep


def cmd_svid_sweep(args) -> int:
    seed = _resolve_seed(args)
    out = _out_dir(args)
    t_list = _parse_int_list(args.t_max_list, "--t-max-list")
    if any(t < 1 for t in t_list):
        raise CliError("--t-max-list entries must be at least 1")
    if any(b <= a for a, b in zip(t_list, t_list[1:])):
        raise CliError("--t-max-list must be strictly increasing")
    rng = np.random.default_rng(seed)
    if getattr(args, "weight_file", None) or getattr(args, "random", None):
        w, source = _resolve_weight(args, rng)
    else:
        w = rng.standard_normal((64, 64)) / math.sqrt(64)
        source = "random:64x64"
    d_in = w.shape[1]
    spec = RunSpec(
        subcommand="svid-sweep",
        seed=seed,
        params={
            "alpha_in": args.alpha_in,
            "alpha_out": args.alpha_out,
            "calib_samples": args.calib_samples,
            "channel_spread": args.channel_spread,
            "k": args.k,
            "sweep_csv": str(out / "svid_sweep.csv"),
            "t_max_list": t_list,
            "weight_source": source,
        },
    )
    spec.announce(out, "runspec_svid_sweep.json")

    x_calib = _gen_inputs(rng, d_in, args.calib_samples, args.channel_spread)
    x_probe = _gen_inputs(rng, d_in, args.calib_samples, args.channel_spread)
    profile = toy_calib_profile(w, x_calib, args.alpha_in, args.alpha_out)
    w_pre = precondition(w, profile)
    y_probe = w @ x_probe

    lines = ["t_max,residual_precond,initial_loss,saturated"]
    losses = []
    prev_loss = None
    for t in t_list:
        paths_pre = iterative_residual_svid(w_pre, args.k, t_max=t)
        recon_pre = effective_weight(paths_pre)
        residual_pre = float(np.linalg.norm(w_pre - recon_pre))
        paths = unprecondition_scales(paths_pre, profile)
        loss = mse_distill(effective_weight(paths) @ x_probe, y_probe)
        saturated = prev_loss is not None and abs(loss - prev_loss) <= SWEEP_SATURATION_RTOL * abs(prev_loss)
        lines.append(
            f"{t},{_fmt(residual_pre)},{_fmt(loss)},{'true' if saturated else 'false'}"
        )
        losses.append(loss)
        prev_loss = loss
    with open(out / "svid_sweep.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    save_sweep_plot(out / "svid_sweep.svg", t_list, losses)
    print(f"sweep of {len(t_list)} budgets written to svid_sweep.csv")
    return 0


# ------------------------------------------------------------------- parser


def _add_common(sub) -> None:
    sub.add_argument(
        "--seed",
        type=int,
        default=None,
        help=f"RNG seed (default: ${SEED_ENV} if set, else 0)",
    )
    sub.add_argument("--out", default="out", help="output directory (default: out)")


def _add_weight_source(sub) -> None:
    group = sub.add_mutually_exclusive_group()
    group.add_argument("--weight-file", default=None, help="path to a 2-d .npy weight matrix")
    group.add_argument(
        "--random",
        type=int,
        nargs=2,
        metavar=("D_OUT", "D_IN"),
        default=None,
        help="generate a random Gaussian weight of this shape",
    )


def _add_init_params(sub, with_method: bool, with_t_max: bool = True) -> None:
    sub.add_argument("--k", type=int, default=2, help="number of binary paths (default: 2)")
    if with_t_max:
        sub.add_argument("--t-max", type=int, default=20, help="refinement sweep budget (default: 20)")
    sub.add_argument("--alpha-in", type=float, default=0.8, help="input-side exponent (default: 0.8)")
    sub.add_argument("--alpha-out", type=float, default=0.65, help="output-side exponent (default: 0.65)")
    sub.add_argument(
        "--calib-samples", type=int, default=256, help="calibration/probe batch size (default: 256)"
    )
    sub.add_argument(
        "--channel-spread",
        type=float,
        default=1.0,
        help="ratio between the largest and smallest input-channel magnitude (default: 1)",
    )
    if with_method:
        sub.add_argument(
            "--method",
            choices=("greedy", "iterative", "calibrated"),
            default="calibrated",
            help="decomposition method (default: calibrated)",
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="resbin",
        description="Dual-scale residual binarization experiments: decompose, train, analyze.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("decompose", help="decompose a weight matrix into binary paths")
    _add_weight_source(p)
    _add_init_params(p, with_method=True)
    _add_common(p)
    p.set_defaults(func=cmd_decompose)

    p = subs.add_parser("train", help="distill a toy teacher into a chosen variant")
    p.add_argument(
        "--variant",
        choices=tuple(VARIANT_NAMES),
        default="coupled",
        help="training variant (default: coupled)",
    )
    p.add_argument("--steps", type=int, default=200, help="update steps (default: 200)")
    p.add_argument("--lr", type=float, default=1e-3, help="learning rate (default: 1e-3)")
    p.add_argument("--loss", choices=tuple(LOSS_NAMES), default="mse", help="distillation loss")
    p.add_argument("--gamma", type=float, default=100.0, help="auxiliary mse weight for kl runs")
    p.add_argument("--batch", type=int, default=32, help="training batch size (default: 32)")
    p.add_argument("--d-out", type=int, default=64, help="teacher output width (default: 64)")
    p.add_argument("--d-in", type=int, default=64, help="teacher input width (default: 64)")
    p.add_argument("--probe-samples", type=int, default=256, help="held-out probe batch size")
    _add_init_params(p, with_method=False)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("analyze", help="decomposition diagnostics, trace plots, reference checks")
    p.add_argument("--verify-table1", action="store_true", help="recheck the published decomposition rows")
    p.add_argument("--trace", action="append", default=None, help="trace CSV to plot (repeatable)")
    p.add_argument("--container", default=None, help="container to decompose on random probes")
    p.add_argument("--toy-layers", type=int, default=0, help="layer count for the layerwise toy report")
    p.add_argument("--toy-dim", type=int, default=64, help="width of each toy layer (default: 64)")
    p.add_argument("--probe-samples", type=int, default=1024, help="probe batch size (default: 1024)")
    _add_init_params(p, with_method=False)
    _add_common(p)
    p.set_defaults(func=cmd_analyze)

    p = subs.add_parser("gridsearch", help="sweep preconditioning exponents on a random layer")
    p.add_argument("--alpha-in-list", default=DEFAULT_ALPHA_IN_GRID, help="comma list of input exponents")
    p.add_argument("--alpha-out-list", default=DEFAULT_ALPHA_OUT_GRID, help="comma list of output exponents")
    p.add_argument("--metric", choices=("initial-loss",), default="initial-loss", help="selection metric")
    p.add_argument("--d-out", type=int, default=64, help="layer output width (default: 64)")
    p.add_argument("--d-in", type=int, default=64, help="layer input width (default: 64)")
    p.add_argument("--k", type=int, default=2, help="number of binary paths (default: 2)")
    p.add_argument("--t-max", type=int, default=20, help="refinement sweep budget (default: 20)")
    p.add_argument("--calib-samples", type=int, default=256, help="calibration batch size")
    p.add_argument(
        "--channel-spread",
        type=float,
        default=10.0,
        help="input-channel magnitude ratio (default: 10, spread makes the sweep informative)",
    )
    _add_common(p)
    p.set_defaults(func=cmd_gridsearch)

    p = subs.add_parser("bench", help="latency of the packed kernel vs a dense fp32 baseline")
    p.add_argument("--shapes", default=DEFAULT_BENCH_SHAPES, help="comma list of ROWSxCOLS")
    p.add_argument("--k", type=int, default=2, help="paths per stack (default: 2)")
    p.add_argument("--reps", type=int, default=5, help="timed repetitions per case (default: 5)")
    _add_common(p)
    p.set_defaults(func=cmd_bench)

    p = subs.add_parser("svid-sweep", help="initial loss as a function of refinement sweeps")
    p.add_argument("--t-max-list", default=DEFAULT_T_MAX_LIST, help="comma list of sweep budgets")
    _add_weight_source(p)
    _add_init_params(p, with_method=False, with_t_max=False)
    _add_common(p)
    p.set_defaults(func=cmd_svid_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
