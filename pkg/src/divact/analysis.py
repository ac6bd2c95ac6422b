"""Frequency-domain instruments for studying cached activations.

* ``lambda_pair``: energy of an activation below / above a DCT cutoff
* gradient-error bounds (GEB) for conv stacks with smooth activations,
  plus a checker that compares them with the actual gradient error when
  every cached layer input is replaced by its low- or high-frequency part
* the box-filter frequency response versus its continuous envelope
* the full-convolution norm inequality

Everything here runs in float64.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d

from .dct import cutoff_for, dct, low_pass_mask, split_frequency
from .errors import ParameterError, ShapeError, UnsupportedActivationError
from .nn import Conv2d, Linear, Network, activate, activation_grad_from_output, conv2d_backward, conv2d_forward
from .tensor import frobenius_norm

SMOOTH_ACTIVATIONS = ("sigmoid", "tanh", "softplus", "identity")


# ---------------------------------------------------------------------------
# spectral split


def lambda_pair(h, w_frac: float, ndim: int = 2):
    """``(lambda_L, lambda_H)``: Frobenius norms of the masked DCT spectrum.

    The trailing ``ndim`` axes are transformed; cutoff ``W = max(1, floor(w_frac * N))``.
    """
    h = np.asarray(h, dtype=np.float64)
    n = h.shape[-1]
    m = low_pass_mask(ndim, n, cutoff_for(n, w_frac)).array
    spec = dct(h, ndim)
    return frobenius_norm(spec * m), frobenius_norm(spec * (1.0 - m))


def _low_high(h, w_frac, ndim=2):
    n = h.shape[-1]
    return split_frequency(h, low_pass_mask(ndim, n, cutoff_for(n, w_frac)))


@dataclass(frozen=True)
class LambdaRecord:
    epoch: int
    layer: int
    w_frac: float
    lambda_low: float
    lambda_high: float

    @property
    def ratio(self) -> float:
        return self.lambda_low / self.lambda_high if self.lambda_high > 0 else math.inf


def lambda_records(net: Network, x, w_fracs, epoch: int = 0) -> list:
    """Measure conv2d and hidden linear outputs (after activation) on the probe batch ``x``.

    Conv maps use the 2-D DCT over their spatial axes, linear features the
    1-D DCT over the feature axis.  The logits layer is not monitored.
    """
    h = np.asarray(x, dtype=net.dtype)
    out = []
    last = len(net.layers) - 1
    for i, layer in enumerate(net.layers):
        h, _ = layer.forward(h, None, None, False)
        monitored = isinstance(layer, Conv2d) or (isinstance(layer, Linear) and i != last)
        if monitored:
            for wf in w_fracs:
                lo, hi = lambda_pair(h, wf, ndim=2 if h.ndim == 4 else 1)
                out.append(LambdaRecord(epoch, i, float(wf), lo, hi))
    return out


def lambda_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "layer", "w_frac", "lambda_low", "lambda_high", "ratio"])
    for r in records:
        w.writerow([r.epoch, r.layer, repr(r.w_frac), repr(r.lambda_low), repr(r.lambda_high), repr(r.ratio)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# gradient error bounds


def _conv_stack(net: Network):
    layers = []
    for layer in net.layers:
        if layer.spec.kind != "conv2d":
            raise ParameterError(f"GEB analysis supports conv2d stacks only, found {layer.spec.kind}")
        if layer.spec.act == "relu":
            raise UnsupportedActivationError(
                "ReLU's derivative is not Lipschitz; the bound needs a smooth activation"
            )
        if layer.spec.act not in SMOOTH_ACTIVATIONS:
            raise UnsupportedActivationError(f"unsupported activation {layer.spec.act!r}")
        layers.append(layer)
    if not layers:
        raise ParameterError("empty network")
    return layers


def _dact(z, act):
    return np.ones_like(z) if act == "identity" else activation_grad_from_output(activate(z, act), act)


def _forward_exact(layers, x):
    hs, zs = [x], []
    for layer in layers:
        z = conv2d_forward(hs[-1], layer.params["weight"], layer.params["bias"], layer.spec.padding)
        zs.append(z)
        hs.append(activate(z, layer.spec.act))
    return hs, zs


def _backward(layers, cached, grad_z_last):
    """Backward with layer inputs ``cached[l]``; sigma' is re-evaluated on Z^ = W * H^ + b.

    Returns per-layer weight gradients and pre-activation gradients.
    """
    n = len(layers)
    gw, gz = [None] * n, [None] * n
    gz[n - 1] = grad_z_last
    for l in range(n - 1, -1, -1):
        layer = layers[l]
        dx, dw, _ = conv2d_backward(cached[l], layer.params["weight"], gz[l], layer.spec.padding)
        gw[l] = dw
        if l > 0:
            prev = layers[l - 1]
            z_hat = conv2d_forward(cached[l - 1], prev.params["weight"], prev.params["bias"], prev.spec.padding)
            gz[l - 1] = dx * _dact(z_hat, prev.spec.act)
    return gw, gz


def _terminal_grad(layers, hs, zs, target):
    """Quadratic loss 0.5 * ||H_L - T||^2, differentiated on the exact forward."""
    return (hs[-1] - target) * _dact(zs[-1], layers[-1].spec.act)


@dataclass
class GebProfile:
    lambda_low: list  # per layer, measured on the layer input H_{l-1}
    lambda_high: list
    alpha: list  # alpha[l][i]
    beta: list
    gamma: list
    input_norms: list  # ||H_{l-1}||_F
    geb_low: list = field(default_factory=list)
    geb_high: list = field(default_factory=list)

    @property
    def gap(self) -> list:
        return [a - b for a, b in zip(self.geb_low, self.geb_high)]

    def to_dict(self) -> dict:
        return {
            "lambda_low": self.lambda_low,
            "lambda_high": self.lambda_high,
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "input_norms": self.input_norms,
            "geb_low": self.geb_low,
            "geb_high": self.geb_high,
            "gap": self.gap,
        }


def _extent(layer) -> int:
    """``K_l + N_l - 1`` with N_l the output map size."""
    return layer.spec.kernel + layer.out_shape[-1] - 1


def _coefficients(layers, gz_norms, sigma_norms):
    n = len(layers)
    c = [_extent(layer) for layer in layers]
    wn = [frobenius_norm(layer.params["weight"]) for layer in layers]
    # eta_i feeds the input perturbation of layer i into the error of grad Z_i;
    # the last layer's grad Z comes straight from the exact forward, so eta = 0
    eta = [c[i] ** 2 * gz_norms[i + 1] * wn[i + 1] * wn[i] if i < n - 1 else 0.0 for i in range(n)]
    alpha = [[c[l] * eta[i] if i >= l else 0.0 for i in range(n)] for l in range(n)]
    beta = [c[l] * gz_norms[l] for l in range(n)]
    gamma = [c[l] * wn[l + 1] * sigma_norms[l] if l < n - 1 else 0.0 for l in range(n)]
    return alpha, beta, gamma


def geb_bounds(alpha, beta, gamma, input_norms, perturbations) -> list:
    """Bound on ``||grad^_W_l - grad_W_l||`` given per-layer input perturbation norms."""
    n = len(beta)
    out = []
    for l in range(n):
        total = (alpha[l][l] * input_norms[l] + beta[l]) * perturbations[l]
        prod = 1.0
        for i in range(l + 1, n):
            prod *= gamma[i - 1]
            total += input_norms[l] * alpha[l][i] * perturbations[i] * prod
        out.append(total)
    return out


def geb_coefficients(net: Network, x, target, w_frac: float = 0.1) -> GebProfile:
    """Coefficients and both bounds from an exact forward/backward on one sample."""
    layers = _conv_stack(net)
    x = np.asarray(x, dtype=np.float64)[None]
    hs, zs = _forward_exact(layers, x)
    _, gz = _backward(layers, hs[:-1], _terminal_grad(layers, hs, zs, target))
    sig = [frobenius_norm(_dact(z, layer.spec.act)) for z, layer in zip(zs, layers)]
    alpha, beta, gamma = _coefficients(layers, [frobenius_norm(g) for g in gz], sig)
    lam = [lambda_pair(h, w_frac) for h in hs[:-1]]
    lo = [a for a, _ in lam]
    hi = [b for _, b in lam]
    norms = [frobenius_norm(h) for h in hs[:-1]]
    prof = GebProfile(lo, hi, alpha, beta, gamma, norms)
    prof.geb_low = geb_bounds(alpha, beta, gamma, norms, hi)
    prof.geb_high = geb_bounds(alpha, beta, gamma, norms, lo)
    return prof


@dataclass(frozen=True)
class GebCheck:
    mode: str
    observed: list  # per-layer ||grad^_W - grad_W||_F
    bound: list
    holds: bool


def verify_geb_bound(net: Network, x, target, mode: str, w_frac: float, rtol: float = 1e-9) -> GebCheck:
    """Replace every cached input by its LFC (``mode='lfc'``) or HFC and compare.

    The coefficients use the norms of the perturbed backward pass, which is
    what the bound's derivation needs.  ``rtol`` (plus 1e-12 absolute)
    absorbs float64 rounding only.
    """
    if mode not in ("lfc", "hfc"):
        raise ParameterError(f"mode must be 'lfc' or 'hfc', got {mode!r}")
    layers = _conv_stack(net)
    x = np.asarray(x, dtype=np.float64)[None]
    hs, zs = _forward_exact(layers, x)
    g_last = _terminal_grad(layers, hs, zs, target)
    exact_gw, _ = _backward(layers, hs[:-1], g_last)
    parts = [_low_high(h, w_frac) for h in hs[:-1]]
    cached = [lo if mode == "lfc" else hi for lo, hi in parts]
    hat_gw, hat_gz = _backward(layers, cached, g_last)
    sig = [frobenius_norm(_dact(z, layer.spec.act)) for z, layer in zip(zs, layers)]
    alpha, beta, gamma = _coefficients(layers, [frobenius_norm(g) for g in hat_gz], sig)
    pert = [frobenius_norm(h - c) for h, c in zip(hs[:-1], cached)]
    bound = geb_bounds(alpha, beta, gamma, [frobenius_norm(h) for h in hs[:-1]], pert)
    observed = [frobenius_norm(a - b) for a, b in zip(hat_gw, exact_gw)]
    holds = all(o <= b * (1 + rtol) + 1e-12 for o, b in zip(observed, bound))
    return GebCheck(mode, observed, bound, holds)


def random_geb_trial(seed: int):
    """A seeded single-channel 2-layer sigmoid conv net, input, target and cutoff."""
    from .nn import LayerSpec
    from .tensor import Rng

    rng = Rng(seed, (31,))
    n = int(rng.integers(6, 13))
    k1, k2 = int(rng.integers(2, 4)), int(rng.integers(2, 4))
    specs = [LayerSpec("conv2d", out=1, kernel=k1, act="sigmoid"), LayerSpec("conv2d", out=1, kernel=k2, act="sigmoid")]
    net = Network(specs, (1, n, n), seed=int(rng.integers(0, 2**31)), dtype=np.float64)
    for name, p in list(net.named_parameters()):
        net.set_parameter(name, rng.normal(p.shape) * (1.5 if name.endswith("weight") else 0.5))
    x = rng.uniform((1, n, n)) + 0.3 * rng.normal((1, n, n))
    target = rng.uniform((1,) + net.output_shape)
    w_frac = float(rng.uniform() * 0.6 + 0.05)
    return net, x, target, w_frac


# ---------------------------------------------------------------------------
# box filter and norm inequality


def box_filter_response(b_samples: int, n: int) -> float:
    """Max |DFT magnitude of a length-``b_samples`` mean filter - |sin(wB)/(wB)||.

    ``B = b_samples / 2`` and ``w = 2 pi k / n`` over bins ``k < n / 8``.
    """
    if b_samples < 1 or n < 8 * 1 or n < b_samples:
        raise ParameterError("need 1 <= b_samples <= n and n >= 8")
    k = np.arange(n // 8)
    discrete = np.abs(np.fft.rfft(np.full(b_samples, 1.0 / b_samples), n)[: len(k)])
    wb = 2 * np.pi * k / n * (b_samples / 2)
    envelope = np.abs(np.sinc(wb / np.pi))
    return float(np.max(np.abs(discrete - envelope)))


def box_filter_curve(b_samples: int = 8, n: int = 4096, doublings: int = 4) -> list:
    """Deviation as the sampling resolution doubles at a fixed physical window.

    Each step doubles both the samples per window and the transform length.
    Returns ``(b_samples, n, deviation)`` rows.
    """
    return [
        (b_samples * 2**j, n * 2**j, box_filter_response(b_samples * 2**j, n * 2**j))
        for j in range(doublings + 1)
    ]


def conv_norm_inequality(w, h):
    """``(lhs, rhs, holds)`` for ``||W * H||_F <= (K + N - 1) ||W||_F ||H||_F`` (full convolution)."""
    w = np.asarray(w, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if w.ndim != 2 or h.ndim != 2 or w.shape[0] != w.shape[1] or h.shape[0] != h.shape[1]:
        raise ShapeError("kernel and map must both be square matrices")
    lhs = frobenius_norm(convolve2d(w, h, mode="full"))
    rhs = (w.shape[0] + h.shape[0] - 1) * frobenius_norm(w) * frobenius_norm(h)
    return lhs, rhs, lhs <= rhs * (1 + 1e-12)
