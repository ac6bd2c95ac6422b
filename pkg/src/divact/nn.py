"""Layers, activation-cache strategies and the SGD training loop.

The forward pass always runs on exact activations.  Only what is *kept for
the backward pass* depends on the :class:`CacheStrategy`: inputs of linear,
conv and batch-norm layers go through the strategy's codec, while ReLU,
max-pool and dropout keep their lossless operator caches.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import compress as cz
from .errors import DivergenceError, ParameterError, ShapeError, StateError
from .tensor import VALID_BITS, Rng, Tensor

ACTIVATIONS = ("identity", "relu", "sigmoid", "tanh", "softplus")
LAYER_KINDS = ("linear", "conv2d", "batchnorm2d", "relu", "maxpool", "avgpool", "dropout", "flatten")


# ---------------------------------------------------------------------------
# cache strategies


@dataclass(frozen=True)
class ActivationCache:
    variant: str
    shape: tuple
    dtype: np.dtype
    payload: object
    nbytes: int


@dataclass(frozen=True)
class CacheStrategy:
    """How a layer input is kept between the forward and the backward pass.

    ``exact``        raw array
    ``division``     bf16 average-pool LFC + Q-bit residual
    ``fixed_quant``  Q-bit quantization of the whole map
    ``lfc_only``     bf16 LFC alone, reconstructed by upsampling
    ``hfc_only``     Q-bit residual alone, LFC contribution dropped
    """

    variant: str = "exact"
    block: int = 8
    bits: int = 2

    def __post_init__(self):
        if self.variant not in ("exact", "division", "fixed_quant", "lfc_only", "hfc_only"):
            raise ParameterError(f"unknown cache strategy {self.variant!r}")
        if self.variant in ("division", "lfc_only", "hfc_only") and self.block < 1:
            raise ParameterError("block size must be >= 1")
        if self.variant in ("division", "fixed_quant", "hfc_only") and self.bits not in VALID_BITS:
            raise ParameterError(f"bit-width must be one of {VALID_BITS}")

    @classmethod
    def exact(cls):
        return cls("exact")

    @classmethod
    def division(cls, block=8, bits=2):
        return cls("division", block, bits)

    @classmethod
    def fixed_quant(cls, bits=2):
        return cls("fixed_quant", 0, bits)

    @classmethod
    def lfc_only(cls, block=8):
        return cls("lfc_only", block, 0)

    @classmethod
    def hfc_only(cls, bits=2, block=8):
        return cls("hfc_only", block, bits)

    @property
    def name(self) -> str:
        if self.variant == "exact":
            return "exact"
        if self.variant == "division":
            return f"division(B={self.block},Q={self.bits})"
        if self.variant == "fixed_quant":
            return f"fixed_quant(Q={self.bits})"
        if self.variant == "lfc_only":
            return f"lfc_only(B={self.block})"
        return f"hfc_only(B={self.block},Q={self.bits})"

    @property
    def packed_masks(self) -> bool:
        """ReLU/dropout masks: 1 byte/element for exact, 1 bit otherwise."""
        return self.variant != "exact"

    def encode(self, x: np.ndarray, rng: Rng) -> ActivationCache:
        if self.variant == "exact":
            return ActivationCache("exact", x.shape, x.dtype, x, x.nbytes)
        h = x.reshape(x.shape[0], 1, -1) if x.ndim == 2 else x
        if self.variant == "division":
            payload = cz.compress(h, self.block, self.bits, rng)
        elif self.variant == "fixed_quant":
            payload = cz.quantize_activation(h, self.bits, rng)
        elif self.variant == "lfc_only":
            payload = cz.Tensor.bf16(cz.avg_pool_lfc(h, self.block))
        else:
            low = cz.Tensor.bf16(cz.avg_pool_lfc(h, self.block)).to_array()
            residual = h.astype(np.float64) - cz.upsample_nearest(low, h.shape[2:])
            payload = cz.quantize_activation(residual, self.bits, rng)
        return ActivationCache(self.variant, x.shape, x.dtype, (h.shape, payload), payload.nbytes)

    def decode(self, c: ActivationCache) -> np.ndarray:
        if c.variant == "exact":
            return c.payload
        hshape, payload = c.payload
        if c.variant == "division":
            out = cz.decompress(payload)
        elif c.variant in ("fixed_quant", "hfc_only"):
            out = payload.dequantize()
        else:
            out = cz.upsample_nearest(payload.to_array(), hshape[2:])
        return np.asarray(out).reshape(c.shape).astype(c.dtype)


def parse_strategy(text: str, block: int = 8, bits: int = 2) -> CacheStrategy:
    key = text.strip().lower().replace("-", "_")
    table = {
        "exact": lambda: CacheStrategy.exact(),
        "division": lambda: CacheStrategy.division(block, bits),
        "fixed_quant": lambda: CacheStrategy.fixed_quant(bits),
        "lfc_only": lambda: CacheStrategy.lfc_only(block),
        "hfc_only": lambda: CacheStrategy.hfc_only(bits, block),
    }
    if key not in table:
        raise ParameterError(f"unknown strategy {text!r}; choose from {sorted(table)}")
    return table[key]()


# ---------------------------------------------------------------------------
# layer specs


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out: int = 0  # linear features / conv output channels
    kernel: int = 0  # conv kernel or pooling window
    padding: int = 0
    act: str = "identity"
    p: float = 0.0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ParameterError(f"unknown layer kind {self.kind!r}")
        if self.act not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.act!r}")

    def text(self) -> str:
        if self.kind == "linear":
            return f"linear:{self.out}" + (f":{self.act}" if self.act != "identity" else "")
        if self.kind == "conv2d":
            s = f"conv2d:{self.out}:{self.kernel}:{self.padding}"
            return s + (f":{self.act}" if self.act != "identity" else "")
        if self.kind in ("maxpool", "avgpool"):
            return f"{self.kind}:{self.kernel}"
        if self.kind == "dropout":
            return f"dropout:{self.p!r}"
        return self.kind


def parse_layers(text: str) -> list:
    """Parse ``"conv2d:8:3:1, relu, maxpool:2, flatten, linear:4"``.

    Forms: ``conv2d:OUT:K[:PAD][:ACT]``, ``linear:OUT[:ACT]``,
    ``maxpool:K``, ``avgpool:K``, ``dropout:P``, ``relu``, ``flatten``,
    ``batchnorm2d``.
    """
    specs = []
    for item in (t.strip() for t in text.split(",")):
        if not item:
            continue
        parts = item.split(":")
        kind = parts[0].strip().lower()
        try:
            if kind == "linear":
                act = parts[2] if len(parts) > 2 else "identity"
                specs.append(LayerSpec("linear", out=int(parts[1]), act=act))
            elif kind == "conv2d":
                pad = int(parts[3]) if len(parts) > 3 else 0
                act = parts[4] if len(parts) > 4 else "identity"
                specs.append(LayerSpec("conv2d", out=int(parts[1]), kernel=int(parts[2]), padding=pad, act=act))
            elif kind in ("maxpool", "avgpool"):
                specs.append(LayerSpec(kind, kernel=int(parts[1])))
            elif kind == "dropout":
                specs.append(LayerSpec("dropout", p=float(parts[1])))
            else:
                if len(parts) != 1:
                    raise ParameterError(f"layer {kind!r} takes no arguments")
                specs.append(LayerSpec(kind))
        except (IndexError, ValueError) as exc:
            if isinstance(exc, ParameterError):
                raise
            raise ParameterError(f"malformed layer spec {item!r}") from exc
    if not specs:
        raise ParameterError("empty layer list")
    return specs


# ---------------------------------------------------------------------------
# functional kernels


def conv2d_forward(x, w, b, padding=0):
    """Stride-1 cross-correlation, looping over kernel taps."""
    m, cin, hh, ww = x.shape
    cout, cin2, k, k2 = w.shape
    if cin != cin2 or k != k2:
        raise ShapeError(f"input {x.shape} incompatible with kernel {w.shape}")
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    ho, wo = hh + 2 * padding - k + 1, ww + 2 * padding - k + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {k} too large for {hh}x{ww} input with padding {padding}")
    acc = np.zeros((m, ho, wo, cout), dtype=np.result_type(x, w))
    for i in range(k):
        for j in range(k):
            acc += np.tensordot(xp[:, :, i:i + ho, j:j + wo], w[:, :, i, j], axes=([1], [1]))
    out = acc.transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b[None, :, None, None]
    return np.ascontiguousarray(out)


def conv2d_backward(x, w, g, padding=0):
    """Return ``(dx, dw, db)`` for :func:`conv2d_forward`."""
    k = w.shape[2]
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    ho, wo = g.shape[2], g.shape[3]
    dw = np.zeros_like(w)
    dxp = np.zeros(xp.shape, dtype=np.result_type(g, w))
    for i in range(k):
        for j in range(k):
            dw[:, :, i, j] = np.tensordot(g, xp[:, :, i:i + ho, j:j + wo], axes=([0, 2, 3], [0, 2, 3]))
            dxp[:, :, i:i + ho, j:j + wo] += np.tensordot(g, w[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
    dx = dxp[:, :, padding:padding + x.shape[2], padding:padding + x.shape[3]] if padding else dxp
    return dx, dw, g.sum(axis=(0, 2, 3))


def activate(z, act):
    if act == "identity":
        return z
    if act == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if act == "tanh":
        return np.tanh(z)
    if act == "softplus":
        return np.logaddexp(0, z).astype(z.dtype)
    if act == "relu":
        return np.maximum(z, 0)
    raise ParameterError(f"unknown activation {act!r}")


def activation_grad_from_output(y, act):
    """sigma'(z) written in terms of the output y = sigma(z)."""
    if act == "sigmoid":
        return y * (1 - y)
    if act == "tanh":
        return 1 - y * y
    if act == "softplus":
        return -np.expm1(-y)
    raise ParameterError(f"no output-form derivative for {act!r}")


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    m = logits.shape[0]
    loss = -logp[np.arange(m), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(m), labels] -= 1
    return float(loss), (grad / m).astype(logits.dtype)


# ---------------------------------------------------------------------------
# layers


class Layer:
    def __init__(self, spec: LayerSpec):
        self.spec = spec
        self.params: dict = {}
        self.in_shape = None
        self.out_shape = None

    def build(self, in_shape, rng: Rng, dtype):
        self.in_shape = tuple(in_shape)
        self.out_shape = self.in_shape
        return self.out_shape

    def forward(self, x, strategy, rng, train):
        return x, None

    def backward(self, record, g):
        return g, {}


class _Affine(Layer):
    """Shared plumbing for linear and conv: cached input plus fused activation."""

    def _pre_activation(self, x):
        raise NotImplementedError

    def _cache_act(self, z, strategy):
        # smooth activations need no cache: sigma'(Z^) is recomputed from the
        # reconstructed input in backward
        if self.spec.act == "relu":
            return cz.relu_cache(z, strategy.packed_masks)[1]
        return None

    def _act_backward(self, cache, g, x):
        act = self.spec.act
        if act == "identity":
            return g
        if act == "relu":
            return cz.relu_backward(cache, g)
        y = activate(self._pre_activation(x), act)
        return (g * activation_grad_from_output(y, act)).astype(g.dtype)


class Linear(_Affine):
    def build(self, in_shape, rng, dtype):
        if len(in_shape) != 1:
            raise ShapeError(f"linear layer expects flat features, got {in_shape}")
        fan_in = in_shape[0]
        gain = 2.0 if self.spec.act == "relu" else 1.0
        self.params = {
            "weight": (rng.normal((fan_in, self.spec.out)) * math.sqrt(gain / fan_in)).astype(dtype),
            "bias": np.zeros(self.spec.out, dtype=dtype),
        }
        self.in_shape, self.out_shape = tuple(in_shape), (self.spec.out,)
        return self.out_shape

    def forward(self, x, strategy, rng, train):
        z = x @ self.params["weight"] + self.params["bias"]
        y = activate(z, self.spec.act)
        if not train:
            return y, None
        return y, {"input": strategy.encode(x, rng), "act": self._cache_act(z, strategy)}

    def _pre_activation(self, x):
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, record, g, strategy):
        x = strategy.decode(record["input"])
        g = self._act_backward(record["act"], g, x)
        grads = {"weight": x.T @ g, "bias": g.sum(axis=0)}
        return g @ self.params["weight"].T, grads


class Conv2d(_Affine):
    def build(self, in_shape, rng, dtype):
        if len(in_shape) != 3:
            raise ShapeError(f"conv2d expects (C, H, W) inputs, got {in_shape}")
        c, h, w = in_shape
        k, p = self.spec.kernel, self.spec.padding
        fan_in = c * k * k
        gain = 2.0 if self.spec.act == "relu" else 1.0
        self.params = {
            "weight": (rng.normal((self.spec.out, c, k, k)) * math.sqrt(gain / fan_in)).astype(dtype),
            "bias": np.zeros(self.spec.out, dtype=dtype),
        }
        ho, wo = h + 2 * p - k + 1, w + 2 * p - k + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv2d kernel {k} does not fit a {h}x{w} input")
        self.in_shape, self.out_shape = tuple(in_shape), (self.spec.out, ho, wo)
        return self.out_shape

    def forward(self, x, strategy, rng, train):
        z = conv2d_forward(x, self.params["weight"], self.params["bias"], self.spec.padding)
        y = activate(z, self.spec.act)
        if not train:
            return y, None
        return y, {"input": strategy.encode(x, rng), "act": self._cache_act(z, strategy)}

    def _pre_activation(self, x):
        return conv2d_forward(x, self.params["weight"], self.params["bias"], self.spec.padding)

    def backward(self, record, g, strategy):
        x = strategy.decode(record["input"])
        g = self._act_backward(record["act"], g, x)
        dx, dw, db = conv2d_backward(x, self.params["weight"], g, self.spec.padding)
        return dx, {"weight": dw, "bias": db}


class BatchNorm2d(Layer):
    eps = 1e-5
    momentum = 0.1

    def build(self, in_shape, rng, dtype):
        if len(in_shape) != 3:
            raise ShapeError(f"batchnorm2d expects (C, H, W) inputs, got {in_shape}")
        c = in_shape[0]
        self.params = {"weight": np.ones(c, dtype=dtype), "bias": np.zeros(c, dtype=dtype)}
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)
        self.in_shape = self.out_shape = tuple(in_shape)
        return self.out_shape

    def forward(self, x, strategy, rng, train):
        gamma, beta = self.params["weight"], self.params["bias"]
        if not train:
            xhat = (x - self.running_mean[None, :, None, None]) / np.sqrt(self.running_var[None, :, None, None] + self.eps)
            return (gamma[None, :, None, None] * xhat + beta[None, :, None, None]).astype(x.dtype), None
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        inv_std = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype)
        n = x.shape[0] * x.shape[2] * x.shape[3]
        self.running_mean = ((1 - self.momentum) * self.running_mean + self.momentum * mean).astype(x.dtype)
        self.running_var = ((1 - self.momentum) * self.running_var + self.momentum * var * n / max(n - 1, 1)).astype(x.dtype)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        y = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
        # mean / inv_std are per-channel statistics, not part of the activation payload
        return y.astype(x.dtype), {"input": strategy.encode(x, rng), "mean": mean, "inv_std": inv_std}

    def backward(self, record, g, strategy):
        x = strategy.decode(record["input"])
        mean, inv_std = record["mean"], record["inv_std"]
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        n = x.shape[0] * x.shape[2] * x.shape[3]
        dbeta = g.sum(axis=(0, 2, 3))
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        gamma = self.params["weight"]
        dx = (gamma * inv_std)[None, :, None, None] / n * (
            n * g - dbeta[None, :, None, None] - xhat * dgamma[None, :, None, None]
        )
        return dx.astype(g.dtype), {"weight": dgamma, "bias": dbeta}


class ReLU(Layer):
    def forward(self, x, strategy, rng, train):
        if not train:
            return np.maximum(x, 0), None
        y, cache = cz.relu_cache(x, strategy.packed_masks)
        return y, {"op": cache}

    def backward(self, record, g, strategy):
        return cz.relu_backward(record["op"], g), {}


class MaxPool(Layer):
    def build(self, in_shape, rng, dtype):
        c, h, w = in_shape
        k = self.spec.kernel
        if h // k < 1 or w // k < 1:
            raise ShapeError(f"pool window {k} larger than {h}x{w}")
        self.in_shape, self.out_shape = tuple(in_shape), (c, h // k, w // k)
        return self.out_shape

    def forward(self, x, strategy, rng, train):
        y, cache = cz.maxpool_cache(x, self.spec.kernel)
        return y, ({"op": cache} if train else None)

    def backward(self, record, g, strategy):
        return cz.maxpool_backward(record["op"], g), {}


class AvgPool(MaxPool):
    def forward(self, x, strategy, rng, train):
        y = cz.avgpool_forward(x, self.spec.kernel)
        return y, ({"shape": x.shape} if train else None)

    def backward(self, record, g, strategy):
        return cz.avgpool_backward(self.spec.kernel, g, record["shape"]), {}


class Dropout(Layer):
    def forward(self, x, strategy, rng, train):
        if not train:
            return x, None
        y, cache = cz.dropout_cache(x, self.spec.p, rng, strategy.packed_masks)
        return y, {"op": cache}

    def backward(self, record, g, strategy):
        return cz.dropout_backward(record["op"], g), {}


class Flatten(Layer):
    def build(self, in_shape, rng, dtype):
        self.in_shape = tuple(in_shape)
        self.out_shape = (int(np.prod(in_shape)),)
        return self.out_shape

    def forward(self, x, strategy, rng, train):
        return x.reshape(x.shape[0], -1), ({"shape": x.shape} if train else None)

    def backward(self, record, g, strategy):
        return g.reshape(record["shape"]), {}


_LAYER_TYPES = {
    "linear": Linear,
    "conv2d": Conv2d,
    "batchnorm2d": BatchNorm2d,
    "relu": ReLU,
    "maxpool": MaxPool,
    "avgpool": AvgPool,
    "dropout": Dropout,
    "flatten": Flatten,
}


def record_nbytes(record) -> int:
    """Bytes of activation payload held by one layer's cache record."""
    if not record:
        return 0
    total = 0
    for key in ("input", "act", "op"):
        item = record.get(key)
        if item is not None:
            total += item.nbytes
    return total


# ---------------------------------------------------------------------------
# network


class Network:
    def __init__(self, specs, input_shape, seed: int = 0, dtype=np.float32):
        self.specs = list(specs)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.dtype = np.dtype(dtype)
        self.seed = seed
        self.layers = []
        shape = self.input_shape
        init = Rng(seed, (7,))
        for i, spec in enumerate(self.specs):
            layer = _LAYER_TYPES[spec.kind](spec)
            shape = layer.build(shape, init.substream(i), self.dtype)
            self.layers.append(layer)
        self.output_shape = shape
        self.velocity = {}

    def named_parameters(self):
        for i, layer in enumerate(self.layers):
            for name, p in layer.params.items():
                yield f"{i}.{name}", p

    def set_parameter(self, name, value):
        i, key = name.split(".", 1)
        self.layers[int(i)].params[key] = value

    def buffers(self):
        for i, layer in enumerate(self.layers):
            if isinstance(layer, BatchNorm2d):
                yield f"{i}.running_mean", layer.running_mean
                yield f"{i}.running_var", layer.running_var

    def predict(self, x, batch_size: int = 512) -> np.ndarray:
        outs = []
        for s in range(0, len(x), batch_size):
            h = np.asarray(x[s:s + batch_size], dtype=self.dtype)
            for layer in self.layers:
                h, _ = layer.forward(h, None, None, False)
            outs.append(h)
        return np.concatenate(outs, axis=0)


def forward(net: Network, batch, strategy: CacheStrategy, rng: Rng):
    """Training-mode forward; returns ``(logits, caches)``."""
    x = np.asarray(batch, dtype=net.dtype)
    if x.shape[1:] != net.input_shape:
        raise ShapeError(f"batch shape {x.shape[1:]} does not match network input {net.input_shape}")
    caches = []
    for i, layer in enumerate(net.layers):
        x, record = layer.forward(x, strategy, rng.substream(i), True)
        caches.append(record)
    return x, caches


def cache_nbytes(caches) -> int:
    return sum(record_nbytes(r) for r in caches if r is not None)


def backward(net: Network, caches: list, grad_logits, strategy: CacheStrategy) -> dict:
    """Backward pass; each layer's cache is released right after use."""
    if len(caches) != len(net.layers):
        raise StateError("cache list does not match the network")
    grads = {}
    g = np.asarray(grad_logits, dtype=net.dtype)
    for i in range(len(net.layers) - 1, -1, -1):
        record = caches[i]
        if record is None:
            raise StateError(f"missing cache for layer {i}")
        g, layer_grads = net.layers[i].backward(record, g, strategy)
        caches[i] = None
        for name, value in layer_grads.items():
            grads[f"{i}.{name}"] = np.asarray(value, dtype=net.dtype)
    return grads


# ---------------------------------------------------------------------------
# optimisation


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    lr: float = 0.1
    schedule: str = "cosine"  # cosine | step | constant
    weight_decay: float = 5e-4
    momentum: float = 0.9
    seed: int = 0
    step_size: int = 30
    gamma: float = 0.1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ParameterError("epochs and batch_size must be positive")
        if self.lr < 0 or self.weight_decay < 0 or not 0 <= self.momentum < 1:
            raise ParameterError("lr, weight_decay must be >= 0 and momentum in [0, 1)")
        if self.schedule not in ("cosine", "step", "constant"):
            raise ParameterError(f"unknown LR schedule {self.schedule!r}")


def learning_rate(config: TrainConfig, epoch: int) -> float:
    if config.schedule == "cosine":
        return config.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / config.epochs))
    if config.schedule == "step":
        return config.lr * config.gamma ** (epoch // config.step_size)
    return config.lr


def sgd_step(net: Network, grads: dict, config: TrainConfig, epoch: int) -> Network:
    """``v <- mu v + g + wd W``; ``W <- W - lr v``."""
    lr = learning_rate(config, epoch)
    for name, w in list(net.named_parameters()):
        g = grads[name]
        if g.shape != w.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {w.shape}")
        v = net.velocity.get(name)
        step = g + config.weight_decay * w
        v = step if v is None else config.momentum * v + step
        net.velocity[name] = v
        net.set_parameter(name, (w - lr * v).astype(net.dtype))
    return net


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    accuracy: float
    peak_cache_bytes: int


@dataclass
class TrainResult:
    net: Network
    history: list = field(default_factory=list)


def evaluate(net: Network, dataset) -> float:
    if len(dataset.labels) == 0:
        raise ParameterError("cannot evaluate on an empty dataset")
    pred = net.predict(dataset.features).argmax(axis=1)
    return float(np.mean(pred == dataset.labels))


def train(
    net: Network,
    train_set,
    strategy: CacheStrategy,
    config: TrainConfig,
    eval_set=None,
    on_epoch: Optional[Callable] = None,
) -> TrainResult:
    """Mini-batch SGD.  ``on_epoch(epoch, net, metrics)`` runs after each epoch.

    Raises :class:`DivergenceError` (carrying the partial history) on a
    non-finite loss.
    """
    eval_set = train_set if eval_set is None else eval_set
    result = TrainResult(net)
    n = len(train_set.labels)
    for epoch in range(config.epochs):
        order = Rng(config.seed, (2, epoch)).permutation(n)
        total, seen, peak = 0.0, 0, 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            rng = Rng(config.seed, (3, epoch, b))
            logits, caches = forward(net, train_set.features[idx], strategy, rng)
            loss, dlogits = softmax_cross_entropy(logits, train_set.labels[idx])
            if not math.isfinite(loss):
                err = DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}")
                err.history = result.history
                raise err
            after_forward = cache_nbytes(caches)
            grads = backward(net, caches, dlogits, strategy)
            peak = max(peak, after_forward - cache_nbytes(caches))
            sgd_step(net, grads, config, epoch)
            total += loss * len(idx)
            seen += len(idx)
        metrics = EpochMetrics(epoch, total / seen, evaluate(net, eval_set), peak)
        result.history.append(metrics)
        if on_epoch is not None:
            on_epoch(epoch, net, metrics)
    return result


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(net: Network, path) -> None:
    """Directory of DIVT f32 tensors plus ``manifest.json``."""
    os.makedirs(path, exist_ok=True)
    entries = []
    for kind, items in (("param", net.named_parameters()), ("buffer", net.buffers())):
        for name, value in items:
            fname = f"{name}.divt"
            with open(os.path.join(path, fname), "wb") as fh:
                fh.write(Tensor.f32(value).to_divt())
            entries.append({"name": name, "kind": kind, "shape": list(value.shape), "file": fname})
    manifest = {
        "layers": [s.text() for s in net.specs],
        "input_shape": list(net.input_shape),
        "tensors": entries,
    }
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_checkpoint(path) -> Network:
    from .errors import FormatError

    try:
        with open(os.path.join(path, "manifest.json")) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read checkpoint manifest in {path}: {exc}") from exc
    net = Network(parse_layers(",".join(manifest["layers"])), manifest["input_shape"])
    for entry in manifest["tensors"]:
        with open(os.path.join(path, entry["file"]), "rb") as fh:
            t = Tensor.from_divt(fh.read())
        if list(t.shape) != entry["shape"]:
            raise FormatError(f"{entry['file']}: shape {t.shape} does not match manifest {entry['shape']}")
        value = t.to_array()
        if entry["kind"] == "param":
            net.set_parameter(entry["name"], value)
        else:
            i, key = entry["name"].split(".", 1)
            setattr(net.layers[int(i)], key, value)
    return net
