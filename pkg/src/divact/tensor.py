"""Dense tensor container with byte-exact storage formats.

Three storage dtypes are supported:

* ``f32``    - little-endian IEEE single precision, 4 bytes/element
* ``bf16``   - upper half of an f32 bit pattern, 2 bytes/element
* ``packed`` - unsigned Q-bit codes (Q in {1, 2, 4, 8}) written as one
  contiguous little-endian bit stream, padded to a whole byte at the end

Numerics elsewhere in the package operate on plain numpy arrays; ``Tensor``
is the at-rest representation used for caches, checkpoints and DIVT files.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ParameterError, ShapeError

F32 = "f32"
BF16 = "bf16"
PACKED = "packed"

_DTYPE_CODES = {F32: 0, BF16: 1, PACKED: 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}

DIVT_MAGIC = b"DIVT"
DIVT_VERSION = 1

VALID_BITS = (1, 2, 4, 8)


# ---------------------------------------------------------------------------
# bfloat16


def bf16_encode(x) -> np.ndarray:
    """Round f32 values to bf16 bit patterns (round-to-nearest-even).

    Accepts a scalar or array; returns ``uint16`` of the same shape.
    NaN inputs map to a quiet NaN that keeps the sign bit.
    """
    f = np.asarray(x, dtype=np.float32)
    u = f.view(np.uint32).astype(np.uint64)
    lsb = (u >> 16) & 1
    rounded = (u + 0x7FFF + lsb) >> 16
    nan = np.isnan(f)
    if nan.any():
        rounded = np.where(nan, (u >> 16) | 0x0040, rounded)
    return rounded.astype(np.uint16)


def bf16_decode(b) -> np.ndarray:
    """Expand bf16 bit patterns to f32 (low 16 mantissa bits zero)."""
    u = np.asarray(b, dtype=np.uint16).astype(np.uint32) << 16
    return u.view(np.float32)


def bf16_round(x) -> np.ndarray:
    """f32 -> bf16 -> f32, i.e. the value actually kept in bf16 storage."""
    return bf16_decode(bf16_encode(x))


# ---------------------------------------------------------------------------
# norms


def frobenius_norm(t) -> float:
    """sqrt of the sum of squares, accumulated in float64."""
    a = t.to_array() if isinstance(t, Tensor) else np.asarray(t)
    return float(np.sqrt(np.sum(np.square(a, dtype=np.float64))))


# ---------------------------------------------------------------------------
# Tensor


def packed_row_bytes(count: int, bits: int) -> int:
    return (count * bits + 7) // 8


def payload_size(shape, dtype: str, bits: int = 0) -> int:
    n = int(np.prod(shape, dtype=np.int64)) if len(shape) else 1
    if dtype == F32:
        return 4 * n
    if dtype == BF16:
        return 2 * n
    if dtype == PACKED:
        if bits not in VALID_BITS:
            raise ParameterError(f"packed bit-width must be one of {VALID_BITS}, got {bits}")
        return packed_row_bytes(n, bits)
    raise ParameterError(f"unknown dtype {dtype!r}")


@dataclass(frozen=True)
class Tensor:
    shape: tuple
    dtype: str
    payload: bytes
    bits: int = 0

    def __post_init__(self):
        shape = tuple(int(d) for d in self.shape)
        object.__setattr__(self, "shape", shape)
        if any(d < 1 for d in shape):
            raise ShapeError(f"all dimensions must be >= 1, got {shape}")
        expected = payload_size(shape, self.dtype, self.bits)
        if len(self.payload) != expected:
            raise FormatError(
                f"payload is {len(self.payload)} bytes, shape {shape} {self.dtype} needs {expected}"
            )

    @property
    def nbytes(self) -> int:
        return len(self.payload)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    @classmethod
    def f32(cls, a) -> "Tensor":
        a = np.ascontiguousarray(a, dtype="<f4")
        return cls(a.shape, F32, a.tobytes())

    @classmethod
    def bf16(cls, a) -> "Tensor":
        a = np.asarray(a)
        return cls(a.shape, BF16, bf16_encode(a).astype("<u2").tobytes())

    @classmethod
    def packed(cls, codes, bits: int) -> "Tensor":
        from .compress import pack_codes

        codes = np.asarray(codes)
        if codes.ndim == 0:
            raise ShapeError("packed tensors need at least one axis")
        return cls(codes.shape, PACKED, pack_codes(codes.ravel(), bits), bits)

    def to_array(self) -> np.ndarray:
        """Decode to a numpy array: float32 for f32/bf16, uint8 codes for packed."""
        if self.dtype == F32:
            return np.frombuffer(self.payload, dtype="<f4").astype(np.float32).reshape(self.shape)
        if self.dtype == BF16:
            return bf16_decode(np.frombuffer(self.payload, dtype="<u2")).reshape(self.shape)
        from .compress import unpack_codes

        return unpack_codes(self.payload, self.bits, self.size).reshape(self.shape)

    # -- DIVT container -----------------------------------------------------

    def to_divt(self) -> bytes:
        head = DIVT_MAGIC + struct.pack("<BB", DIVT_VERSION, _DTYPE_CODES[self.dtype])
        if self.dtype == PACKED:
            head += struct.pack("<B", self.bits)
        head += struct.pack("<B", len(self.shape))
        head += struct.pack(f"<{len(self.shape)}Q", *self.shape)
        return head + self.payload

    @classmethod
    def from_divt(cls, buf: bytes) -> "Tensor":
        t, used = cls._parse_divt(buf, 0)
        if used != len(buf):
            raise FormatError(f"{len(buf) - used} trailing bytes after DIVT tensor")
        return t

    @classmethod
    def _parse_divt(cls, buf: bytes, pos: int):
        """Parse one DIVT tensor starting at ``pos``; return (tensor, end offset)."""

        def take(n):
            nonlocal pos
            if pos + n > len(buf):
                raise FormatError("truncated DIVT data")
            chunk = buf[pos:pos + n]
            pos += n
            return chunk

        magic = take(4)
        if magic != DIVT_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {DIVT_MAGIC!r}")
        version, code = struct.unpack("<BB", take(2))
        if version != DIVT_VERSION:
            raise FormatError(f"unsupported DIVT version {version}")
        if code not in _CODE_DTYPES:
            raise FormatError(f"unknown dtype code {code}")
        dtype = _CODE_DTYPES[code]
        bits = struct.unpack("<B", take(1))[0] if dtype == PACKED else 0
        if dtype == PACKED and bits not in VALID_BITS:
            raise FormatError(f"invalid packed bit-width {bits}")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        if any(d < 1 for d in shape):
            raise FormatError(f"zero-length dimension in {shape}")
        try:
            size = payload_size(shape, dtype, bits)
        except ShapeError as exc:
            raise FormatError(str(exc)) from exc
        payload = take(size)
        return cls(shape, dtype, payload, bits), pos


# ---------------------------------------------------------------------------
# random source


class Rng:
    """Seeded random stream: numpy PCG64 keyed by ``(seed, *key)``.

    The key is a tuple of non-negative ints naming an independent substream
    (e.g. ``(epoch, batch, layer)``), so caches can be built in any order
    without sharing generator state.
    """

    def __init__(self, seed: int, key=()):
        if not 0 <= seed < 2**64:
            raise ParameterError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in (key if isinstance(key, (tuple, list)) else (key,)))
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def substream(self, *key) -> "Rng":
        return Rng(self.seed, self.key + tuple(key))

    def uniform(self, shape=None) -> np.ndarray:
        return self.gen.random(shape)

    def normal(self, shape=None, scale=1.0) -> np.ndarray:
        return self.gen.normal(0.0, scale, shape)

    def integers(self, low, high=None, shape=None) -> np.ndarray:
        return self.gen.integers(low, high, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def u64(self, n: int) -> np.ndarray:
        return self.gen.integers(0, 2**64, n, dtype=np.uint64, endpoint=False)
