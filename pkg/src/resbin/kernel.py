"""Bit-packed ±1 cores and the matmul-free GEMV that consumes them.

Cores are packed 32 columns per little-endian uint32 word, bit b of word w
covering column w*32 + b, with +1 -> 0 and -1 -> 1 and zeroed padding bits.
The GEMV pre-scales the activation by h, then walks each row's words testing
one bit per column: a set bit subtracts the pre-scaled activation, a clear bit
adds it. There is no weight multiply anywhere on that path. Accumulation is
float32 in ascending column order, and per-path results combine in ascending
path order, so outputs are bit-reproducible.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from numba import njit

from .binarize import BinaryPath
from .matrix import ShapeError

__all__ = [
    "PackedPath",
    "PackedStack",
    "pack",
    "unpack",
    "pack_path",
    "pack_stack",
    "unpack_stack",
    "packed_weight_bytes",
    "binary_gemv",
    "stacked_gemv",
    "reference_gemv",
    "bench",
    "write_bench_csv",
]

WORD_BITS = 32


def packed_weight_bytes(rows: int, cols: int) -> int:
    """Bit-plane footprint: rows * ceil(cols/32) 32-bit words."""
    return rows * ((cols + WORD_BITS - 1) // WORD_BITS) * 4


def _padding_clean(bits: np.ndarray, cols: int) -> bool:
    tail = cols % WORD_BITS
    if tail == 0:
        return True
    return bool(np.all(bits[:, -1] >> np.uint32(tail) == 0))


@dataclass(frozen=True)
class PackedPath:
    """One bit-packed path: core words plus float32 scale vectors."""

    rows: int
    cols: int
    bits: np.ndarray
    g: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        rows = int(self.rows)
        cols = int(self.cols)
        if rows < 1 or cols < 1:
            raise ShapeError("packed path needs positive dimensions")
        bits = np.ascontiguousarray(self.bits, dtype=np.uint32)
        words = (cols + WORD_BITS - 1) // WORD_BITS
        if bits.shape != (rows, words):
            raise ShapeError(f"bits must have shape ({rows}, {words}), got {bits.shape}")
        if not _padding_clean(bits, cols):
            raise ValueError("padding bits beyond the last column must be zero")
        g = np.ascontiguousarray(self.g, dtype=np.float32)
        h = np.ascontiguousarray(self.h, dtype=np.float32)
        if g.shape != (rows,) or h.shape != (cols,):
            raise ShapeError("scale vector lengths must match the core")
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(h))):
            raise ValueError("scales must be finite")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "h", h)

    @property
    def words_per_row(self) -> int:
        return self.bits.shape[1]


@dataclass(frozen=True)
class PackedStack:
    """k packed paths of identical dimensions."""

    paths: tuple[PackedPath, ...]

    def __post_init__(self):
        paths = tuple(self.paths)
        if len(paths) < 1:
            raise ValueError("a packed stack needs at least one path")
        dims = (paths[0].rows, paths[0].cols)
        if any((p.rows, p.cols) != dims for p in paths[1:]):
            raise ShapeError("packed paths must share dimensions")
        object.__setattr__(self, "paths", paths)

    @property
    def k(self) -> int:
        return len(self.paths)

    @property
    def rows(self) -> int:
        return self.paths[0].rows

    @property
    def cols(self) -> int:
        return self.paths[0].cols


def pack(core) -> np.ndarray:
    """Pack a ±1 matrix into uint32 words (+1 -> 0 bit, -1 -> 1 bit)."""
    arr = np.asarray(core)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError("pack expects a nonempty 2-d matrix")
    if not np.all(np.abs(arr.astype(np.float64)) == 1.0):
        raise ValueError("pack expects entries that are exactly +1 or -1")
    rows, cols = arr.shape
    padded_cols = ((cols + WORD_BITS - 1) // WORD_BITS) * WORD_BITS
    ones = np.zeros((rows, padded_cols), dtype=np.uint8)
    ones[:, :cols] = arr < 0
    packed_bytes = np.packbits(ones, axis=1, bitorder="little")
    return np.ascontiguousarray(packed_bytes.view("<u4"))


def unpack(path: PackedPath) -> np.ndarray:
    """Exact inverse of pack, returning a float64 ±1 matrix."""
    as_bytes = np.ascontiguousarray(path.bits).view(np.uint8).reshape(path.rows, -1)
    ones = np.unpackbits(as_bytes, axis=1, bitorder="little")[:, : path.cols]
    return np.where(ones == 1, -1.0, 1.0)


def pack_path(path: BinaryPath) -> PackedPath:
    """Pack one dual-scale path, casting its scales to float32."""
    return PackedPath(
        rows=path.rows,
        cols=path.cols,
        bits=pack(path.core),
        g=path.g.astype(np.float32),
        h=path.h.astype(np.float32),
    )


def pack_stack(paths) -> PackedStack:
    return PackedStack(paths=tuple(pack_path(p) for p in paths))


def unpack_stack(stack: PackedStack) -> list[BinaryPath]:
    """Back to dense paths (scales upcast to float64)."""
    return [
        BinaryPath(core=unpack(p), g=p.g.astype(np.float64), h=p.h.astype(np.float64))
        for p in stack.paths
    ]


@njit(cache=True)
def _gemv_bits(bits, g, h, x, cols, out):
    rows = bits.shape[0]
    v = np.empty(cols, dtype=np.float32)
    for j in range(cols):
        v[j] = h[j] * x[j]
    for i in range(rows):
        acc = np.float32(0.0)
        for j in range(cols):
            word = bits[i, j >> 5]
            if (word >> np.uint32(j & 31)) & np.uint32(1):
                acc -= v[j]
            else:
                acc += v[j]
        out[i] = g[i] * acc


@njit(cache=True)
def _gemv_dense_pm1(core, g, h, x, out):
    rows, cols = core.shape
    v = np.empty(cols, dtype=np.float32)
    for j in range(cols):
        v[j] = h[j] * x[j]
    for i in range(rows):
        acc = np.float32(0.0)
        for j in range(cols):
            acc += core[i, j] * v[j]
        out[i] = g[i] * acc


def _as_f32_input(x, cols: int) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float32)
    if arr.shape != (cols,):
        raise ShapeError(f"input must be a vector of length {cols}")
    return arr


def binary_gemv(path: PackedPath, x) -> np.ndarray:
    """y = g * (B (h * x)) by sign-conditional float32 accumulation."""
    v = _as_f32_input(x, path.cols)
    out = np.empty(path.rows, dtype=np.float32)
    _gemv_bits(path.bits, path.g, path.h, v, path.cols, out)
    return out


def stacked_gemv(stack: PackedStack, x) -> np.ndarray:
    """Sum of per-path GEMVs, combined in ascending path order."""
    v = _as_f32_input(x, stack.cols)
    total = binary_gemv(stack.paths[0], v)
    for p in stack.paths[1:]:
        total = total + binary_gemv(p, v)
    return total


def reference_gemv(core, g, h, x) -> np.ndarray:
    """Order-matched dense ±1 reference: same pre-scaling, same ascending-j
    float32 accumulation, but reading a dense ±1 matrix with multiplies.
    Multiplication by ±1 is exact in IEEE arithmetic, so this must agree with
    binary_gemv bit for bit."""
    core32 = np.ascontiguousarray(core, dtype=np.float32)
    if core32.ndim != 2:
        raise ShapeError("reference core must be 2-d")
    rows, cols = core32.shape
    if not np.all(np.abs(core32) == 1.0):
        raise ValueError("reference core entries must be exactly +1 or -1")
    g32 = np.ascontiguousarray(g, dtype=np.float32)
    h32 = np.ascontiguousarray(h, dtype=np.float32)
    if g32.shape != (rows,) or h32.shape != (cols,):
        raise ShapeError("reference scale lengths must match the core")
    v = _as_f32_input(x, cols)
    out = np.empty(rows, dtype=np.float32)
    _gemv_dense_pm1(core32, g32, h32, v, out)
    return out


def _random_packed_stack(rng, rows: int, cols: int, k: int) -> tuple[PackedStack, np.ndarray]:
    """A random stack plus its dense float32 effective weight (bench setup)."""
    dense_total = np.zeros((rows, cols), dtype=np.float32)
    paths = []
    for _ in range(k):
        core = np.where(rng.integers(0, 2, size=(rows, cols)) == 1, 1.0, -1.0)
        g = (0.5 + rng.random(rows)).astype(np.float32)
        h = (0.5 + rng.random(cols)).astype(np.float32)
        paths.append(PackedPath(rows=rows, cols=cols, bits=pack(core), g=g, h=h))
        dense_total += g[:, None] * core.astype(np.float32) * h[None, :]
    return PackedStack(paths=tuple(paths)), dense_total


def bench(shapes, k: int = 2, repetitions: int = 5, seed: int = 0) -> list[dict]:
    """Wall-clock latency of the packed GEMV against a dense float32 GEMV.

    One warm-up call per implementation is excluded from the statistics. The
    dense baseline multiplies the equivalent effective weight with numpy.
    Returns one report row per (shape, implementation).
    """
    if repetitions < 1:
        raise ValueError("repetitions must be at least 1")
    rng = np.random.default_rng(seed)
    rows_out = []
    for rows, cols in shapes:
        stack, dense = _random_packed_stack(rng, int(rows), int(cols), k)
        x = rng.standard_normal(cols).astype(np.float32)

        stacked_gemv(stack, x)
        packed_times = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            stacked_gemv(stack, x)
            packed_times.append((time.perf_counter() - t0) * 1e6)

        dense @ x
        dense_times = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            dense @ x
            dense_times.append((time.perf_counter() - t0) * 1e6)

        packed_bytes = k * packed_weight_bytes(int(rows), int(cols))
        dense_bytes = int(dense.nbytes)
        for impl, times, nbytes in (
            ("packed", packed_times, packed_bytes),
            ("dense_f32", dense_times, dense_bytes),
        ):
            p10, p50, p90 = np.percentile(np.asarray(times), [10, 50, 90])
            rows_out.append(
                {
                    "shape": f"{rows}x{cols}",
                    "k": k,
                    "impl": impl,
                    "median_us": float(p50),
                    "p10_us": float(p10),
                    "p90_us": float(p90),
                    "bytes_weights": nbytes,
                }
            )
    return rows_out


def write_bench_csv(rows, path) -> None:
    lines = ["shape,k,impl,median_us,p10_us,p90_us,bytes_weights"]
    for r in rows:
        lines.append(
            ",".join(
                [
                    r["shape"],
                    str(r["k"]),
                    r["impl"],
                    repr(float(r["median_us"])),
                    repr(float(r["p10_us"])),
                    repr(float(r["p90_us"])),
                    str(r["bytes_weights"]),
                ]
            )
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
