"""Dual-precision activation codec and the lossless per-operator caches.

An activation map of shape ``(M, C, *spatial)`` is split into

* a low-frequency component: non-overlapping average pooling with block
  size ``B``, stored as bf16, and
* a high-frequency residual: the map minus the nearest-upsampled stored
  LFC, quantized to ``Q`` bits with stochastic rounding, one ``(delta,
  offset)`` pair per (sample, channel) group.

Reconstruction is ``upsample(lfc) + delta * codes + offset``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import EncodingError, FormatError, ParameterError, ShapeError
from .tensor import BF16, VALID_BITS, Rng, Tensor, bf16_decode, bf16_encode, packed_row_bytes


def _check_bits(bits: int):
    if bits not in VALID_BITS:
        raise ParameterError(f"bit-width must be one of {VALID_BITS}, got {bits}")


# ---------------------------------------------------------------------------
# bit packing


def pack_codes(codes, bits: int) -> bytes:
    """Pack codes into a little-endian bit stream, padded to a whole byte.

    Element ``e`` lands in byte ``e*bits // 8`` at bit offset
    ``(e % (8//bits)) * bits``.
    """
    _check_bits(bits)
    codes = np.asarray(codes).ravel()
    if codes.size and (codes.min() < 0 or codes.max() >= (1 << bits)):
        raise EncodingError(f"codes must lie in [0, {(1 << bits) - 1}] for {bits}-bit packing")
    per = 8 // bits
    nb = packed_row_bytes(codes.size, bits)
    buf = np.zeros(nb * per, dtype=np.uint8)
    buf[:codes.size] = codes
    shifts = (np.arange(per, dtype=np.uint8) * bits).astype(np.uint8)
    return np.bitwise_or.reduce(buf.reshape(nb, per) << shifts, axis=-1).astype(np.uint8).tobytes()


def unpack_codes(buf: bytes, bits: int, count: int) -> np.ndarray:
    _check_bits(bits)
    nb = packed_row_bytes(count, bits)
    if len(buf) != nb:
        raise FormatError(f"expected {nb} packed bytes for {count} codes, got {len(buf)}")
    per = 8 // bits
    raw = np.frombuffer(bytes(buf), dtype=np.uint8).reshape(nb, 1)
    shifts = (np.arange(per, dtype=np.uint8) * bits).astype(np.uint8)
    codes = (raw >> shifts) & np.uint8((1 << bits) - 1)
    return codes.reshape(-1)[:count].copy()


# ---------------------------------------------------------------------------
# pooling / upsampling


def _spatial(shape):
    if len(shape) < 2:
        raise ShapeError(f"activation maps are (M, C, *spatial), got shape {shape}")
    return tuple(shape[2:])


def pooled_shape(spatial, block: int):
    """Spatial size of the LFC grid: ``N // B`` per axis, or 1 when ``N < B``."""
    return tuple(n // min(block, n) for n in spatial)


def avg_pool_lfc(h, block: int) -> np.ndarray:
    """Mean-pool every spatial axis with kernel = stride = ``min(B, N)``.

    Trailing ``N mod B`` elements fall outside every window.
    """
    if block < 1:
        raise ParameterError("block size must be >= 1")
    h = np.asarray(h)
    spatial = _spatial(h.shape)
    if not spatial:
        raise ShapeError("average pooling needs at least one spatial axis")
    out = h.astype(np.float64)
    for i, n in enumerate(spatial):
        ax = 2 + 2 * i  # each processed axis is split in two
        k = min(block, n)
        L = n // k
        out = np.take(out, np.arange(L * k), axis=ax)
        out = out.reshape(out.shape[:ax] + (L, k) + out.shape[ax + 1:])
    # average all the kernel axes (odd offsets after the split)
    kaxes = tuple(3 + 2 * i for i in range(len(spatial)))
    return out.mean(axis=kaxes).astype(np.float32)


def upsample_nearest(low, target) -> np.ndarray:
    """Nearest interpolation: output index ``i`` reads source ``i*L // N``."""
    low = np.asarray(low)
    target = tuple(int(t) for t in target)
    spatial = _spatial(low.shape)
    if len(target) != len(spatial):
        raise ShapeError(f"target {target} does not match {len(spatial)} spatial axes")
    out = low
    for i, (L, n) in enumerate(zip(spatial, target)):
        if n < L:
            raise ParameterError(f"cannot upsample axis of size {L} to {n}")
        idx = (np.arange(n) * L) // n
        out = np.take(out, idx, axis=2 + i)
    return out


# ---------------------------------------------------------------------------
# quantization


def _bf16_down(x: np.ndarray) -> np.ndarray:
    """Largest bf16 value <= x (x finite, float64)."""
    b = bf16_encode(x.astype(np.float32)).astype(np.int64)
    over = bf16_decode(b.astype(np.uint16)).astype(np.float64) > x
    neg = (b & 0x8000) != 0
    step = np.where(neg, b + 1, np.where(b == 0, 0x8001, b - 1))
    return np.where(over, step, b).astype(np.uint16)


def _bf16_up(x: np.ndarray) -> np.ndarray:
    """Smallest bf16 value >= x for x >= 0."""
    b = bf16_encode(x.astype(np.float32)).astype(np.int64)
    under = bf16_decode(b.astype(np.uint16)).astype(np.float64) < x
    return np.where(under, b + 1, b).astype(np.uint16)


def quantize_groups(g, bits: int, rng: Rng, bf16_params: bool = True):
    """Quantize each row of a 2-D array as one group.

    Returns ``(codes uint8, delta float64, offset float64)``.  With
    ``bf16_params`` the returned step and offset are exactly the bf16 values
    that get stored; offset is rounded down and the step up so the stored
    grid still spans the group, and codes are drawn against those stored
    values.  Otherwise both stay unrounded.
    """
    _check_bits(bits)
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2 or g.shape[1] == 0:
        raise ShapeError("quantize_groups expects a non-empty 2-D array")
    levels = (1 << bits) - 1
    lo = g.min(axis=1)
    hi = g.max(axis=1)
    if bf16_params:
        offset = bf16_decode(_bf16_down(lo)).astype(np.float64)
        span = hi - offset
        delta = bf16_decode(_bf16_up(span / levels)).astype(np.float64)
    else:
        offset = lo
        delta = (hi - lo) / levels
    safe = np.where(delta > 0, delta, 1.0)
    x = np.clip((g - offset[:, None]) / safe[:, None], 0.0, levels)
    codes = np.floor(x + rng.uniform(g.shape))
    codes = np.clip(codes, 0, levels)
    codes[delta == 0] = 0
    return codes.astype(np.uint8), delta, offset


def quantize_group(g, bits: int, rng: Rng, bf16_params: bool = True):
    """Single-group form of :func:`quantize_groups`: ``(codes, delta, offset)``."""
    g = np.asarray(g, dtype=np.float64).reshape(1, -1)
    codes, delta, offset = quantize_groups(g, bits, rng, bf16_params)
    return codes[0], float(delta[0]), float(offset[0])


def dequantize_group(codes, delta, offset) -> np.ndarray:
    return np.asarray(codes, dtype=np.float64) * delta + offset


def dequantize_groups(codes, delta, offset) -> np.ndarray:
    return np.asarray(codes, dtype=np.float64) * np.asarray(delta)[:, None] + np.asarray(offset)[:, None]


@dataclass(frozen=True)
class QuantizedGroups:
    """Q-bit codes plus per-(sample, channel) bf16 step/offset."""

    codes: Tensor  # packed, shape (M, C, S)
    delta: Tensor  # bf16, shape (M, C)
    offset: Tensor  # bf16, shape (M, C)
    shape: tuple

    @property
    def bits(self) -> int:
        return self.codes.bits

    @property
    def nbytes(self) -> int:
        return self.codes.nbytes + self.delta.nbytes + self.offset.nbytes

    def dequantize(self) -> np.ndarray:
        m, c, s = self.codes.shape
        codes = self.codes.to_array().reshape(m * c, s)
        vals = dequantize_groups(codes, self.delta.to_array().ravel(), self.offset.to_array().ravel())
        return vals.reshape(self.shape)


def quantize_activation(x, bits: int, rng: Rng) -> QuantizedGroups:
    """Quantize a whole ``(M, C, *spatial)`` map, one group per (sample, channel)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 3:
        raise ShapeError(f"quantization groups need a spatial axis, got shape {x.shape}")
    m, c = x.shape[:2]
    rows = x.reshape(m * c, -1)
    codes, delta, offset = quantize_groups(rows, bits, rng)
    packed = Tensor.packed(codes.reshape(m, c, -1), bits)
    return QuantizedGroups(packed, Tensor.bf16(delta.reshape(m, c)), Tensor.bf16(offset.reshape(m, c)), x.shape)


# ---------------------------------------------------------------------------
# the dual-precision codec


@dataclass(frozen=True)
class CompressedActivation:
    lfc: Tensor  # bf16
    hfc: Optional[QuantizedGroups]
    original_shape: tuple
    block: int
    bits: int

    @property
    def hfc_bits(self):
        return None if self.hfc is None else self.hfc.codes

    @property
    def delta(self):
        return None if self.hfc is None else self.hfc.delta

    @property
    def offset(self):
        return None if self.hfc is None else self.hfc.offset

    @property
    def nbytes(self) -> int:
        return self.lfc.nbytes + (0 if self.hfc is None else self.hfc.nbytes)

    @property
    def group_count(self) -> int:
        return int(self.original_shape[0] * self.original_shape[1])


def compress(h, block: int, bits: int, rng: Rng) -> CompressedActivation:
    """Split ``h`` into a bf16 LFC and a Q-bit quantized residual."""
    if block < 1:
        raise ParameterError("block size must be >= 1")
    _check_bits(bits)
    h = np.asarray(h, dtype=np.float32)
    if h.ndim < 2:
        raise ShapeError(f"activation maps are (M, C, *spatial), got shape {h.shape}")
    if h.ndim == 2:
        # no spatial axes: the footnote rule collapses the map to itself
        return CompressedActivation(Tensor.bf16(h), None, h.shape, block, bits)
    lfc = Tensor.bf16(avg_pool_lfc(h, block))
    up = upsample_nearest(lfc.to_array(), h.shape[2:]).astype(np.float64)
    residual = h.astype(np.float64) - up
    return CompressedActivation(lfc, quantize_activation(residual, bits, rng), h.shape, block, bits)


def decompress(c: CompressedActivation) -> np.ndarray:
    """Float64 reconstruction; callers cast to their working dtype.

    Rounding to float32 here would add up to an ulp of error, which exceeds
    the step of nearly constant groups (e.g. 1x1 maps).
    """
    low = c.lfc.to_array()
    if c.hfc is None:
        if low.shape != tuple(c.original_shape):
            raise FormatError("LFC-only cache does not match its recorded shape")
        return low.astype(np.float64)
    shape = tuple(c.original_shape)
    expected = (shape[0], shape[1], int(np.prod(shape[2:])))
    if c.hfc.codes.shape != expected or c.lfc.shape[:2] != shape[:2]:
        raise FormatError(f"cache payload {c.hfc.codes.shape} does not match shape {shape}")
    up = upsample_nearest(low, shape[2:]).astype(np.float64)
    return up + c.hfc.dequantize()


_CACHE_MAGIC = b"DIVC"


def serialize_compressed(c: CompressedActivation) -> bytes:
    """Header (magic, B, Q, original shape) followed by three DIVT tensors.

    The tensors are the bf16 LFC, the packed codes and a bf16 ``(M, C, 2)``
    block of (step, offset) pairs.  An LFC-only cache writes just the LFC.
    """
    import struct

    shape = tuple(c.original_shape)
    head = _CACHE_MAGIC + struct.pack("<BIBB", 1, c.block, c.bits, len(shape))
    head += struct.pack(f"<{len(shape)}Q", *shape)
    body = c.lfc.to_divt()
    if c.hfc is not None:
        scales = np.stack([c.hfc.delta.to_array(), c.hfc.offset.to_array()], axis=-1)
        body += c.hfc.codes.to_divt() + Tensor.bf16(scales).to_divt()
    return head + body


def deserialize_compressed(buf: bytes) -> CompressedActivation:
    import struct

    if buf[:4] != _CACHE_MAGIC:
        raise FormatError(f"bad magic {bytes(buf[:4])!r}, expected {_CACHE_MAGIC!r}")
    try:
        _, block, bits, ndim = struct.unpack_from("<BIBB", buf, 4)
        shape = struct.unpack_from(f"<{ndim}Q", buf, 11)
    except struct.error as exc:
        raise FormatError("truncated cache header") from exc
    pos = 11 + 8 * ndim
    lfc, pos = Tensor._parse_divt(buf, pos)
    hfc = None
    if pos < len(buf):
        codes, pos = Tensor._parse_divt(buf, pos)
        scales, pos = Tensor._parse_divt(buf, pos)
        if scales.dtype != BF16:
            raise FormatError("scale tensor must be bf16")
        s = scales.to_array()
        hfc = QuantizedGroups(codes, Tensor.bf16(s[..., 0]), Tensor.bf16(s[..., 1]), tuple(shape))
    if pos != len(buf):
        raise FormatError("trailing bytes after compressed cache")
    return CompressedActivation(lfc, hfc, tuple(shape), block, bits)


# ---------------------------------------------------------------------------
# lossless operator caches


@dataclass(frozen=True)
class OperatorCache:
    kind: str  # relu | maxpool | avgpool | dropout
    shape: tuple  # input shape
    payload: bytes = b""
    packed: bool = True  # 1 bit/element mask vs 1 byte/element
    k: int = 0

    @property
    def nbytes(self) -> int:
        return len(self.payload)

    def mask(self) -> np.ndarray:
        n = int(np.prod(self.shape))
        if self.packed:
            bits = unpack_codes(self.payload, 1, n)
        else:
            bits = np.frombuffer(self.payload, dtype=np.uint8)
        return bits.reshape(self.shape).astype(bool)


def _mask_cache(kind, mask: np.ndarray, packed: bool) -> OperatorCache:
    m = mask.astype(np.uint8)
    payload = pack_codes(m.ravel(), 1) if packed else m.tobytes()
    return OperatorCache(kind, mask.shape, payload, packed)


def relu_cache(h, packed: bool = True):
    h = np.asarray(h)
    mask = h > 0
    return np.where(mask, h, 0).astype(h.dtype), _mask_cache("relu", mask, packed)


def relu_backward(cache: OperatorCache, grad) -> np.ndarray:
    grad = np.asarray(grad)
    return np.where(cache.mask(), grad, 0).astype(grad.dtype)


def dropout_cache(h, p: float, rng: Rng, packed: bool = True):
    """Zero each element with probability ``p``; kept elements are not rescaled."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    h = np.asarray(h)
    keep = rng.uniform(h.shape) >= p
    return np.where(keep, h, 0).astype(h.dtype), _mask_cache("dropout", keep, packed)


def dropout_backward(cache: OperatorCache, grad) -> np.ndarray:
    grad = np.asarray(grad)
    return np.where(cache.mask(), grad, 0).astype(grad.dtype)


def _windows(h: np.ndarray, k: int) -> np.ndarray:
    """View an (M, C, H, W) array as (M, C, H//k, W//k, k*k) windows."""
    m, c, hh, ww = h.shape
    oh, ow = hh // k, ww // k
    if oh == 0 or ow == 0:
        raise ShapeError(f"pooling kernel {k} larger than map {hh}x{ww}")
    x = h[:, :, :oh * k, :ow * k].reshape(m, c, oh, k, ow, k)
    return x.transpose(0, 1, 2, 4, 3, 5).reshape(m, c, oh, ow, k * k)


def _unwindows(win: np.ndarray, k: int, shape) -> np.ndarray:
    m, c, oh, ow, _ = win.shape
    x = win.reshape(m, c, oh, ow, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(m, c, oh * k, ow * k)
    out = np.zeros(shape, dtype=win.dtype)
    out[:, :, :oh * k, :ow * k] = x
    return out


def maxpool_cache(h, k: int):
    """Window-wise max with kernel = stride = k; caches one uint8 argmax per window.

    Ties resolve to the first element in row-major window order.
    """
    if not 1 <= k <= 16:
        raise ParameterError("max-pool kernel must be in [1, 16] to fit a uint8 index")
    h = np.asarray(h)
    win = _windows(h, k)
    idx = win.argmax(axis=-1).astype(np.uint8)
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return out, OperatorCache("maxpool", h.shape, idx.tobytes(), False, k)


def maxpool_backward(cache: OperatorCache, grad) -> np.ndarray:
    grad = np.asarray(grad)
    k = cache.k
    idx = np.frombuffer(cache.payload, dtype=np.uint8).reshape(grad.shape).astype(np.intp)
    win = np.zeros(grad.shape + (k * k,), dtype=grad.dtype)
    np.put_along_axis(win, idx[..., None], grad[..., None], axis=-1)
    return _unwindows(win, k, cache.shape)


def avgpool_forward(h, k: int) -> np.ndarray:
    h = np.asarray(h)
    return _windows(h, k).mean(axis=-1).astype(h.dtype)


def avgpool_backward(k: int, grad, input_shape=None) -> np.ndarray:
    """Spread each window's gradient evenly: ``k**-2`` per input position."""
    grad = np.asarray(grad)
    m, c, oh, ow = grad.shape
    if input_shape is None:
        input_shape = (m, c, oh * k, ow * k)
    win = np.repeat((grad / (k * k))[..., None], k * k, axis=-1)
    return _unwindows(win, k, input_shape)
