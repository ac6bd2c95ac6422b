"""Activation-compressed training with a dual-precision activation codec.

Modules: ``tensor`` (storage formats, RNG), ``dct`` (frequency split),
``compress`` (codec and operator caches), ``nn`` (layers and training),
``memory`` (byte accounting), ``analysis`` (spectral and bound tools),
``data`` (datasets) and ``cli``.
"""
from .nn import CacheStrategy, Network, TrainConfig, train
from .tensor import Rng, Tensor

__all__ = ["CacheStrategy", "Network", "Rng", "Tensor", "TrainConfig", "train"]
__version__ = "0.1.0"
