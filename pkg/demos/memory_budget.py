"""Compare cache bytes of every strategy on a small CNN, then check the
closed-form compression rates against the byte accountant.

Run: python demos/memory_budget.py
"""
from divact import memory, nn
from divact.nn import CacheStrategy

LAYERS = "conv2d:16:3:1,batchnorm2d,relu,maxpool:2,conv2d:32:3:1,batchnorm2d,relu,maxpool:2,flatten,linear:10"


def main():
    net = nn.Network(nn.parse_layers(LAYERS), (3, 32, 32))
    strategies = [
        CacheStrategy.exact(),
        CacheStrategy.division(8, 2),
        CacheStrategy.division(4, 4),
        CacheStrategy.lfc_only(8),
        CacheStrategy.hfc_only(2, 8),
        CacheStrategy.fixed_quant(2),
    ]
    print(f"{'strategy':24s} {'bytes/batch of 128':>20s} {'rate':>6s}")
    for s in strategies:
        rep = memory.account(net, 128, s)
        print(f"{s.name:24s} {rep.total_bytes:20,d} {rep.rate:6.2f}")

    print("\nper-layer breakdown for division(B=8,Q=2):")
    for e in memory.account(net, 128, CacheStrategy.division(8, 2)).entries:
        if e.bytes:
            print(f"  layer {e.layer:2d} {e.kind:12s} {e.bytes:10,d} of {e.exact_bytes:10,d}")

    print("\nconv-BN-ReLU block: formula vs accountant (minibatch 1)")
    for n, b, q, formula, accounted, divergent in memory.rate_grid([7, 8, 12, 16, 32], [8], [2]):
        note = "  <- B does not tile N" if divergent else ""
        print(f"  N={n:2d} B={b} Q={q}: formula {formula:7.3f}, accountant {accounted:7.3f}{note}")


if __name__ == "__main__":
    main()
