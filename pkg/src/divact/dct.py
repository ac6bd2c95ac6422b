"""Orthonormal type-II DCT / type-III inverse in 1, 2 or 3 dimensions.

The transform is applied to the trailing ``ndim`` axes; any leading axes
(minibatch, channel) are carried along untouched.  Evaluation is the
direct separable matrix product, O(N^2) per axis.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ParameterError, ShapeError


@lru_cache(maxsize=64)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis ``C`` with ``C[k, m] = s_k cos(pi (m + 1/2) k / n)``.

    ``s_0 = sqrt(1/n)``, ``s_k = sqrt(2/n)`` otherwise, so ``C @ C.T = I``.
    """
    m = np.arange(n)
    k = m[:, None]
    c = np.cos(np.pi * (m[None, :] + 0.5) * k / n)
    scale = np.full(n, np.sqrt(2.0 / n))
    scale[0] = np.sqrt(1.0 / n)
    c = c * scale[:, None]
    c.setflags(write=False)
    return c


def _check(h: np.ndarray, ndim: int) -> int:
    if ndim not in (1, 2, 3):
        raise ParameterError(f"ndim must be 1, 2 or 3, got {ndim}")
    if h.ndim < ndim:
        raise ShapeError(f"need at least {ndim} axes, got shape {h.shape}")
    sizes = h.shape[h.ndim - ndim:]
    if len(set(sizes)) != 1:
        raise ShapeError(f"trailing axes must be equal-sized, got {sizes}")
    return sizes[0]


def _apply(h: np.ndarray, mat: np.ndarray, ndim: int) -> np.ndarray:
    out = h
    for ax in range(h.ndim - ndim, h.ndim):
        out = np.moveaxis(np.tensordot(out, mat, axes=([ax], [1])), -1, ax)
    return out


def dct(h, ndim: int = 2) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    n = _check(h, ndim)
    return _apply(h, dct_matrix(n), ndim)


def idct(ht, ndim: int = 2) -> np.ndarray:
    ht = np.asarray(ht, dtype=np.float64)
    n = _check(ht, ndim)
    return _apply(ht, dct_matrix(n).T, ndim)


@dataclass(frozen=True)
class LowPassMask:
    ndim: int
    n: int
    w: int

    @property
    def array(self) -> np.ndarray:
        keep = np.arange(self.n) < self.w
        out = keep
        for _ in range(self.ndim - 1):
            out = np.logical_and.outer(out, keep)
        return out.astype(np.float64)

    @property
    def high(self) -> np.ndarray:
        return 1.0 - self.array


def low_pass_mask(ndim: int, n: int, w: int) -> LowPassMask:
    if ndim not in (1, 2, 3):
        raise ParameterError(f"ndim must be 1, 2 or 3, got {ndim}")
    if not 1 <= w <= n:
        raise ParameterError(f"cutoff must satisfy 1 <= w <= n, got w={w}, n={n}")
    return LowPassMask(ndim, n, w)


def cutoff_for(n: int, w_frac: float) -> int:
    """Cutoff width for a fractional ratio ``W/N``: ``max(1, floor(w_frac * n))``."""
    if not 0.0 < w_frac <= 1.0:
        raise ParameterError(f"w_frac must be in (0, 1], got {w_frac}")
    return max(1, int(np.floor(w_frac * n + 1e-9)))


def split_frequency(h, mask: LowPassMask):
    """Return ``(lfc, hfc)`` with ``lfc + hfc == h`` up to rounding."""
    h = np.asarray(h, dtype=np.float64)
    n = _check(h, mask.ndim)
    if n != mask.n:
        raise ShapeError(f"mask is for N={mask.n}, input trailing size is {n}")
    spec = dct(h, mask.ndim)
    m = mask.array
    return idct(spec * m, mask.ndim), idct(spec * (1.0 - m), mask.ndim)
