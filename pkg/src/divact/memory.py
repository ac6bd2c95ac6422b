"""Activation-cache byte accounting and closed-form compression rates.

The accountant predicts, from shapes alone, exactly the payload bytes that
:func:`divact.nn.forward` holds after a training-mode forward pass:

* exact: linear/conv/batch-norm inputs at 4 bytes/element, ReLU masks at
  1 byte/element
* division: bf16 LFC (2 bytes per pooled element), Q/8 bytes per residual
  element, 4 bytes per (sample, channel) group for the bf16 step/offset,
  ReLU masks at 1 bit/element
* max-pool keeps one uint8 index per window, dropout a mask like ReLU
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .compress import pooled_shape
from .errors import ParameterError
from .nn import CacheStrategy, Network
from .tensor import VALID_BITS, packed_row_bytes


def _groups_and_spatial(shape):
    """(M, C, spatial) view used by the codecs; flat features are (M, 1, F)."""
    if len(shape) == 2:
        return shape[0], 1, (shape[1],)
    return shape[0], shape[1], tuple(shape[2:])


def activation_bytes(shape, strategy: CacheStrategy) -> int:
    """Bytes kept for one linear/conv/BN input of the given full shape."""
    n = int(np.prod(shape))
    if strategy.variant == "exact":
        return 4 * n
    m, c, spatial = _groups_and_spatial(tuple(shape))
    groups = m * c
    lfc = 2 * groups * int(np.prod(pooled_shape(spatial, strategy.block))) if strategy.block else 0
    hfc = packed_row_bytes(n, strategy.bits) + 4 * groups if strategy.bits else 0
    if strategy.variant == "division":
        return lfc + hfc
    if strategy.variant == "lfc_only":
        return lfc
    return hfc  # fixed_quant, hfc_only


def mask_bytes(count: int, strategy: CacheStrategy) -> int:
    return (count + 7) // 8 if strategy.packed_masks else count


@dataclass(frozen=True)
class MemoryEntry:
    layer: int
    kind: str
    strategy: str
    bytes: int
    exact_bytes: int


@dataclass
class MemoryReport:
    strategy: str
    entries: list = field(default_factory=list)

    @property
    def total_bytes(self) -> int:
        return sum(e.bytes for e in self.entries)

    @property
    def exact_bytes(self) -> int:
        return sum(e.exact_bytes for e in self.entries)

    @property
    def rate(self) -> float:
        """Compression rate R = exact bytes / strategy bytes."""
        return self.exact_bytes / self.total_bytes if self.total_bytes else 1.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "kind", "strategy", "bytes", "exact_bytes"])
        for e in self.entries:
            w.writerow([e.layer, e.kind, e.strategy, e.bytes, e.exact_bytes])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(
            {
                "strategy": self.strategy,
                "total_bytes": self.total_bytes,
                "exact_bytes": self.exact_bytes,
                "compression_rate": self.rate,
                "layers": [e.__dict__ for e in self.entries],
            },
            indent=2,
            sort_keys=True,
        )


def account(net: Network, batch_size: int, strategy: CacheStrategy) -> MemoryReport:
    """Per-layer cache bytes after a forward pass on ``batch_size`` samples."""
    if batch_size < 1:
        raise ParameterError("batch size must be positive")
    exact = CacheStrategy.exact()
    report = MemoryReport(strategy.name)
    for i, layer in enumerate(net.layers):
        in_shape = (batch_size,) + layer.in_shape
        out_count = batch_size * int(np.prod(layer.out_shape))
        kind = layer.spec.kind
        got = ref = 0
        if kind in ("linear", "conv2d", "batchnorm2d"):
            got, ref = activation_bytes(in_shape, strategy), activation_bytes(in_shape, exact)
            if layer.spec.act == "relu":
                got += mask_bytes(out_count, strategy)
                ref += mask_bytes(out_count, exact)
        elif kind in ("relu", "dropout"):
            count = int(np.prod(in_shape))
            got, ref = mask_bytes(count, strategy), mask_bytes(count, exact)
        elif kind == "maxpool":
            got = ref = out_count
        report.entries.append(MemoryEntry(i, kind, strategy.name, got, ref))
    return report


def _check_rate_args(n, block, bits):
    if n < 1 or block < 1:
        raise ParameterError("N and B must be >= 1")
    if bits not in VALID_BITS:
        raise ParameterError(f"Q must be one of {VALID_BITS}")


def rate_conv_block(n: int, block: int, bits: int) -> float:
    """R = 9 / (4/min(B^2, N^2) + Q/4 + 8/N^2 + 1/8) for a conv-BN-ReLU block."""
    _check_rate_args(n, block, bits)
    return 9.0 / (4.0 / min(block * block, n * n) + bits / 4.0 + 8.0 / (n * n) + 1.0 / 8.0)


def rate_linear_block(n: int, block: int, bits: int) -> float:
    """R = 5 / (2/min(B, N) + Q/8 + 4/N + 1/8) for a linear-ReLU block."""
    _check_rate_args(n, block, bits)
    return 5.0 / (2.0 / min(block, n) + bits / 8.0 + 4.0 / n + 1.0 / 8.0)


def conv_block_network(n: int, channels: int = 8) -> Network:
    """A single conv(3x3, same padding)-BN-ReLU block on an N x N map."""
    from .nn import LayerSpec

    specs = [LayerSpec("conv2d", out=channels, kernel=3, padding=1), LayerSpec("batchnorm2d"), LayerSpec("relu")]
    return Network(specs, (channels, n, n))


def linear_block_network(n: int, out: int = 0) -> Network:
    """A single linear-ReLU block on N features; ``out`` defaults to N."""
    from .nn import LayerSpec

    return Network([LayerSpec("linear", out=out or n, act="relu")], (n,))


def rate_grid(ns, blocks, bits_list, channels: int = 8):
    """Rows of (N, B, Q, formula_R, accounted_R, divergent) for conv blocks, minibatch 1."""
    rows = []
    for n in ns:
        net = conv_block_network(n, channels)
        for b in blocks:
            for q in bits_list:
                formula = rate_conv_block(n, b, q)
                accounted = account(net, 1, CacheStrategy.division(b, q)).rate
                divergent = abs(accounted - formula) > 1e-9 * formula
                rows.append((n, b, q, formula, accounted, divergent))
    return rows
