"""Binary container for packed stacks, plus a JSON manifest helper.

Layout (all little-endian, no alignment padding):

    header   magic b"RBIT" | version u16 | flags u16 | d_out u32 | d_in u32 | k u8
    paths    k blocks of: g float32[d_out], h float32[d_in], bits uint32[d_out * words]
             where words = ceil(d_in / 32)
    w_fp     float32[d_out * d_in] row-major, present iff flag bit 0
    calib    float32[d_in] s_in, float32[d_out] s_out, float32 alpha_in,
             float32 alpha_out, present iff flag bit 1

Loading is strict: wrong magic, unknown version, short payload, unconsumed
trailing bytes, and nonzero padding bits each raise a distinct error type.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .binarize import BinaryPath, ResidualStack
from .initialization import CalibProfile
from .kernel import WORD_BITS, PackedPath, PackedStack, pack_stack, unpack_stack

__all__ = [
    "MAGIC",
    "VERSION",
    "FLAG_W_FP",
    "FLAG_CALIB",
    "ContainerError",
    "ContainerMagicError",
    "ContainerVersionError",
    "ContainerTruncatedError",
    "ContainerTrailingError",
    "ContainerPaddingError",
    "ContainerPayload",
    "save_container",
    "load_container",
    "save_manifest",
    "load_manifest",
]

MAGIC = b"RBIT"
VERSION = 1
FLAG_W_FP = 1 << 0
FLAG_CALIB = 1 << 1

_HEADER = struct.Struct("<4sHHIIB")


class ContainerError(ValueError):
    """Base class for container parse and serialize failures."""


class ContainerMagicError(ContainerError):
    pass


class ContainerVersionError(ContainerError):
    pass


class ContainerTruncatedError(ContainerError):
    pass


class ContainerTrailingError(ContainerError):
    pass


class ContainerPaddingError(ContainerError):
    pass


@dataclass(frozen=True)
class ContainerPayload:
    """Everything a container holds: the packed stack plus optional extras."""

    packed: PackedStack
    w_fp: np.ndarray | None = None
    calib: CalibProfile | None = None

    def __post_init__(self):
        if self.w_fp is not None:
            w = np.ascontiguousarray(self.w_fp, dtype=np.float32)
            if w.shape != (self.packed.rows, self.packed.cols):
                raise ContainerError(
                    "w_fp shape must match the packed stack, got "
                    f"{w.shape} vs ({self.packed.rows}, {self.packed.cols})"
                )
            object.__setattr__(self, "w_fp", w)
        if self.calib is not None:
            if len(self.calib.s_in) != self.packed.cols or len(self.calib.s_out) != self.packed.rows:
                raise ContainerError("calibration profile dimensions must match the stack")

    def to_residual_stack(self) -> ResidualStack:
        """Upcast to dense float64 paths for analysis or further training."""
        paths = unpack_stack(self.packed)
        w_fp = None if self.w_fp is None else self.w_fp.astype(np.float64)
        return ResidualStack(paths=tuple(paths), w_fp=w_fp)


def _coerce_payload(obj, calib) -> ContainerPayload:
    if isinstance(obj, ContainerPayload):
        if calib is not None:
            return ContainerPayload(packed=obj.packed, w_fp=obj.w_fp, calib=calib)
        return obj
    if isinstance(obj, PackedStack):
        return ContainerPayload(packed=obj, calib=calib)
    if isinstance(obj, ResidualStack):
        return ContainerPayload(
            packed=pack_stack(obj.paths),
            w_fp=None if obj.w_fp is None else obj.w_fp.astype(np.float32),
            calib=calib,
        )
    raise TypeError(f"cannot serialize object of type {type(obj).__name__}")


def _f32_le(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def save_container(path, obj, calib: CalibProfile | None = None) -> ContainerPayload:
    """Serialize a payload, packed stack, or residual stack to disk.

    Returns the payload that was written, which is handy when the caller
    passed a dense stack and wants the packed form back.
    """
    payload = _coerce_payload(obj, calib)
    stack = payload.packed
    flags = 0
    if payload.w_fp is not None:
        flags |= FLAG_W_FP
    if payload.calib is not None:
        flags |= FLAG_CALIB
    chunks = [_HEADER.pack(MAGIC, VERSION, flags, stack.rows, stack.cols, stack.k)]
    for p in stack.paths:
        chunks.append(_f32_le(p.g))
        chunks.append(_f32_le(p.h))
        chunks.append(np.ascontiguousarray(p.bits, dtype="<u4").tobytes())
    if payload.w_fp is not None:
        chunks.append(_f32_le(payload.w_fp))
    if payload.calib is not None:
        chunks.append(_f32_le(payload.calib.s_in))
        chunks.append(_f32_le(payload.calib.s_out))
        chunks.append(struct.pack("<ff", payload.calib.alpha_in, payload.calib.alpha_out))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))
    return payload


class _Cursor:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise ContainerTruncatedError(
                f"file ends inside {what}: need {n} bytes at offset {self.pos}, "
                f"have {len(self.blob) - self.pos}"
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def take_f32(self, count: int, what: str) -> np.ndarray:
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4").copy()

    def take_u32(self, count: int, what: str) -> np.ndarray:
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<u4").copy()


def load_container(path) -> ContainerPayload:
    with open(path, "rb") as fh:
        blob = fh.read()
    cur = _Cursor(blob)
    magic, version, flags, d_out, d_in, k = _HEADER.unpack(cur.take(_HEADER.size, "header"))
    if magic != MAGIC:
        raise ContainerMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ContainerVersionError(f"unsupported version {version}, expected {VERSION}")
    known = FLAG_W_FP | FLAG_CALIB
    if flags & ~known:
        raise ContainerError(f"unknown flag bits 0x{flags & ~known:x}")
    if d_out < 1 or d_in < 1 or k < 1:
        raise ContainerError(f"invalid dimensions d_out={d_out} d_in={d_in} k={k}")
    words = (d_in + WORD_BITS - 1) // WORD_BITS
    paths = []
    for idx in range(k):
        g = cur.take_f32(d_out, f"path {idx} g")
        h = cur.take_f32(d_in, f"path {idx} h")
        bits = cur.take_u32(d_out * words, f"path {idx} bits").reshape(d_out, words)
        tail = d_in % WORD_BITS
        if tail and np.any(bits[:, -1] >> np.uint32(tail)):
            raise ContainerPaddingError(f"path {idx} has nonzero padding bits")
        paths.append(PackedPath(rows=d_out, cols=d_in, bits=bits, g=g, h=h))
    w_fp = None
    if flags & FLAG_W_FP:
        w_fp = cur.take_f32(d_out * d_in, "w_fp").reshape(d_out, d_in)
    calib = None
    if flags & FLAG_CALIB:
        s_in = cur.take_f32(d_in, "calibration s_in").astype(np.float64)
        s_out = cur.take_f32(d_out, "calibration s_out").astype(np.float64)
        a_in, a_out = struct.unpack("<ff", cur.take(8, "calibration exponents"))
        calib = CalibProfile(s_in=s_in, s_out=s_out, alpha_in=a_in, alpha_out=a_out)
    if cur.pos != len(blob):
        raise ContainerTrailingError(f"{len(blob) - cur.pos} unexpected trailing bytes")
    return ContainerPayload(packed=PackedStack(paths=tuple(paths)), w_fp=w_fp, calib=calib)


def save_manifest(path, entries: dict) -> None:
    """Write a JSON manifest with sorted keys and a trailing newline."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(entries, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
