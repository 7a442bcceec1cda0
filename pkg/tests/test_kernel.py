"""Tests for bit packing and the matmul-free binary matrix-vector kernel."""
import csv

import numpy as np
import pytest

from resbin.binarize import BinaryPath, sign
from resbin.initialization import greedy_svid_init
from resbin.kernel import (
    WORD_BITS,
    PackedPath,
    PackedStack,
    bench,
    binary_gemv,
    pack,
    pack_path,
    pack_stack,
    packed_weight_bytes,
    reference_gemv,
    stacked_gemv,
    unpack,
    unpack_stack,
    write_bench_csv,
)


def test_packed_weight_bytes():
    assert WORD_BITS == 32
    assert packed_weight_bytes(1, 1) == 4
    assert packed_weight_bytes(1, 32) == 4
    assert packed_weight_bytes(1, 33) == 8
    assert packed_weight_bytes(4096, 4096) == 4096 * 128 * 4
    # one 4096x4096 bit plane is exactly 2 MiB
    assert packed_weight_bytes(4096, 4096) == 2 * 1024 * 1024


def test_pack_bit_layout_hand_example():
    # +1 maps to bit 0, -1 to bit 1; bit b of word w covers column 32*w + b.
    core = np.ones((1, 3))
    core[0, 1] = -1.0
    bits = pack(core)
    assert bits.dtype == np.dtype("<u4")
    assert bits.shape == (1, 1)
    assert bits[0, 0] == 0b010


def test_pack_ragged_row_pads_with_zero_bits():
    # 35 columns: 3 bits spill into the second word; padding stays zero.
    core = -np.ones((1, 35))
    bits = pack(core)
    assert bits.shape == (1, 2)
    assert bits[0, 0] == 0xFFFFFFFF
    assert bits[0, 1] == 0x00000007


def test_pack_rejects_non_unit_entries():
    with pytest.raises(ValueError):
        pack(np.array([[1.0, 0.0]]))
    with pytest.raises(ValueError):
        pack(np.array([[1.0, 0.5]]))


def test_pack_unpack_round_trip():
    rng = np.random.default_rng(0)
    for cols in (1, 31, 32, 33, 64, 100):
        core = sign(rng.standard_normal((5, cols)))
        path = PackedPath(
            rows=5,
            cols=cols,
            bits=pack(core),
            g=np.ones(5, dtype=np.float32),
            h=np.ones(cols, dtype=np.float32),
        )
        assert np.array_equal(unpack(path), core)


def test_packed_path_rejects_dirty_padding():
    core = np.ones((2, 33))
    bits = pack(core)
    bits = bits.copy()
    bits[0, 1] |= np.uint32(1 << 5)  # flip a bit beyond column 32
    with pytest.raises(ValueError):
        PackedPath(rows=2, cols=33, bits=bits, g=np.ones(2, np.float32), h=np.ones(33, np.float32))


def test_pack_path_and_stack_round_trip():
    rng = np.random.default_rng(1)
    w = rng.standard_normal((6, 40))
    paths = greedy_svid_init(w, 2)
    stack = pack_stack(paths)
    assert stack.k == 2
    assert stack.rows == 6
    assert stack.cols == 40
    back = unpack_stack(stack)
    for orig, rec in zip(paths, back):
        assert np.array_equal(orig.core, rec.core)
        assert np.allclose(rec.g, orig.g.astype(np.float32), atol=0.0)
        assert rec.g.dtype == np.float64  # unpacked for float64 composition


def test_packed_stack_rejects_mixed_shapes():
    a = pack_path(BinaryPath(core=np.ones((2, 3)), g=np.ones(2), h=np.ones(3)))
    b = pack_path(BinaryPath(core=np.ones((2, 4)), g=np.ones(2), h=np.ones(4)))
    with pytest.raises(ValueError):
        PackedStack(paths=(a, b))
    with pytest.raises(ValueError):
        PackedStack(paths=())


def test_binary_gemv_bit_identical_to_ordered_dense_reference():
    rng = np.random.default_rng(2)
    for rows, cols in [(1, 1), (3, 31), (4, 32), (5, 33), (8, 100), (16, 64)]:
        core = sign(rng.standard_normal((rows, cols)))
        g64 = rng.standard_normal(rows)
        h64 = rng.standard_normal(cols)
        path = pack_path(BinaryPath(core=core, g=g64, h=h64))
        x = rng.standard_normal(cols).astype(np.float32)
        y = binary_gemv(path, x)
        y_ref = reference_gemv(core, path.g, path.h, x)
        assert y.dtype == np.float32
        assert np.array_equal(y, y_ref)  # bit-identical, same add order


def test_stacked_gemv_adds_path_outputs_in_order():
    rng = np.random.default_rng(3)
    w = rng.standard_normal((7, 45))
    stack = pack_stack(greedy_svid_init(w, 3))
    x = rng.standard_normal(45).astype(np.float32)
    y = stacked_gemv(stack, x)
    want = binary_gemv(stack.paths[0], x)
    for p in stack.paths[1:]:
        want = want + binary_gemv(p, x)
    assert np.array_equal(y, want)


def test_gemv_against_float64_composition():
    rng = np.random.default_rng(4)
    w = rng.standard_normal((32, 96))
    paths = greedy_svid_init(w, 2)
    stack = pack_stack(paths)
    x64 = rng.standard_normal(96)
    y32 = stacked_gemv(stack, x64.astype(np.float32))
    y64 = sum(
        (p.g[:, None] * p.core * p.h[None, :]) @ x64 for p in paths
    )
    rel = np.linalg.norm(y32.astype(np.float64) - y64) / np.linalg.norm(y64)
    assert rel < 1e-4


def test_gemv_sign_prefix_identity():
    # A +/-1 dot product equals (sum of all terms) - 2*(sum of negative-core
    # terms): check the kernel against that closed form in float64.
    rng = np.random.default_rng(5)
    core = sign(rng.standard_normal((6, 50)))
    g = rng.uniform(0.5, 2.0, 6)
    h = rng.uniform(0.5, 2.0, 50)
    x = rng.standard_normal(50)
    path = pack_path(BinaryPath(core=core, g=g, h=h))
    y = binary_gemv(path, x.astype(np.float32)).astype(np.float64)
    v = path.h.astype(np.float64) * x.astype(np.float32).astype(np.float64)
    for i in range(6):
        neg = core[i] < 0
        want = path.g[i].astype(np.float64) * (v.sum() - 2.0 * v[neg].sum())
        assert y[i] == pytest.approx(want, rel=1e-5, abs=1e-6)


def test_binary_gemv_validates_input_length():
    path = pack_path(BinaryPath(core=np.ones((2, 3)), g=np.ones(2), h=np.ones(3)))
    with pytest.raises(ValueError):
        binary_gemv(path, np.ones(4, dtype=np.float32))


def test_reference_gemv_rejects_non_unit_core():
    with pytest.raises(ValueError):
        reference_gemv(
            np.array([[1.0, 0.5]]),
            np.ones(1, np.float32),
            np.ones(2, np.float32),
            np.ones(2, np.float32),
        )


def test_bench_reports_both_impls_per_shape():
    rows = bench([(8, 64), (4, 32)], k=2, repetitions=3, seed=0)
    assert len(rows) == 4
    impls = {(r["shape"], r["impl"]) for r in rows}
    assert ("8x64", "packed") in impls
    assert ("4x32", "dense_f32") in impls
    for r in rows:
        assert r["median_us"] > 0.0
        assert r["p10_us"] <= r["median_us"] <= r["p90_us"]
        if r["impl"] == "packed":
            d_out, d_in = (int(v) for v in r["shape"].split("x"))
            assert r["bytes_weights"] == 2 * packed_weight_bytes(d_out, d_in)


def test_bench_single_repetition():
    rows = bench([(4, 32)], k=1, repetitions=1, seed=1)
    for r in rows:
        assert r["p10_us"] == r["median_us"] == r["p90_us"]


def test_write_bench_csv(tmp_path):
    rows = bench([(4, 32)], k=1, repetitions=2, seed=2)
    out = tmp_path / "bench.csv"
    write_bench_csv(rows, out)
    with open(out, newline="") as fh:
        parsed = list(csv.reader(fh))
    assert parsed[0] == ["shape", "k", "impl", "median_us", "p10_us", "p90_us", "bytes_weights"]
    assert len(parsed) == 3
    for rec, row in zip(parsed[1:], rows):
        assert float(rec[3]) == row["median_us"]
