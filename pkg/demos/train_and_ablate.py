"""Train the textured-image CNN with exact and compressed caches, then
drop either half of the codec to see which one the gradients need.

Run: python demos/train_and_ablate.py   (about a minute)
"""
import time

from divact import memory, nn
from divact.data import gen_textured_images
from divact.nn import CacheStrategy, TrainConfig

LAYERS = "conv2d:8:3:1:sigmoid,maxpool:2,conv2d:16:3:1:sigmoid,maxpool:2,flatten,linear:4"


def main():
    train_set, eval_set = gen_textured_images(4, 16, 500, seed=0).split(0.2, seed=0)
    config = TrainConfig(epochs=15, batch_size=64, lr=0.1, seed=0)
    for strategy in (
        CacheStrategy.exact(),
        CacheStrategy.division(8, 2),
        CacheStrategy.lfc_only(8),
        CacheStrategy.hfc_only(2, 8),
    ):
        net = nn.Network(nn.parse_layers(LAYERS), train_set.sample_shape, seed=0)
        start = time.perf_counter()
        result = nn.train(net, train_set, strategy, config, eval_set)
        last = result.history[-1]
        rate = memory.account(net, config.batch_size, strategy).rate
        print(
            f"{strategy.name:22s} accuracy {100 * last.accuracy:5.1f}%  "
            f"peak cache {last.peak_cache_bytes:8,d} B  rate {rate:5.2f}  "
            f"({time.perf_counter() - start:.0f}s)"
        )


if __name__ == "__main__":
    main()
