"""Walk one activation map through the low/high-frequency codec.

Run: python demos/codec_walkthrough.py
"""
import numpy as np

from divact import compress, dct
from divact.analysis import lambda_pair
from divact.tensor import Rng


def smooth_map(rng, n=32):
    # a slow ramp plus a little texture, like an early conv feature map
    yy, xx = np.mgrid[0:n, 0:n] / n
    return (np.sin(2 * xx + yy) + 0.1 * rng.normal((n, n))).astype(np.float32)


def main():
    rng = Rng(0)
    h = np.stack([smooth_map(rng.substream(c)) for c in range(4)])[None]
    print(f"activation shape {h.shape}, {h.nbytes} bytes as float32")

    lo, hi = lambda_pair(h, 0.1)
    print(f"DCT energy split at w_frac=0.1: lambda_L={lo:.2f}, lambda_H={hi:.2f}")

    for block, bits in ((8, 2), (8, 4), (16, 2)):
        cache = compress.compress(h, block, bits, Rng(1))
        back = compress.decompress(cache)
        err = np.abs(back - h).max()
        print(
            f"B={block:2d} Q={bits}: {cache.nbytes:5d} bytes "
            f"(rate {h.nbytes / cache.nbytes:5.1f}x), max error {err:.4f}, "
            f"max step {cache.delta.to_array().max():.4f}"
        )

    # the pooled part behaves like a DCT low-pass: most energy survives
    cache = compress.compress(h, 8, 2, Rng(1))
    low = compress.upsample_nearest(cache.lfc.to_array(), h.shape[2:])
    kept = np.sum(low**2) / np.sum(h.astype(np.float64) ** 2)
    spectrum = dct.dct(h[0, 0])
    print(f"upsampled LFC keeps {100 * kept:.1f}% of the energy")
    print(f"top-left 4x4 DCT block holds {100 * np.sum(spectrum[:4, :4] ** 2) / np.sum(spectrum ** 2):.1f}%")

    buf = compress.serialize_compressed(cache)
    same = np.array_equal(compress.decompress(compress.deserialize_compressed(buf)), compress.decompress(cache))
    print(f"serialized cache: {len(buf)} bytes, round trip identical: {same}")


if __name__ == "__main__":
    main()
