"""Minimal deterministic neural-network engine (float64, numpy)."""

from lora_advsec.nn.layers import Conv2D, Dense, Dropout, Flatten
from lora_advsec.nn.network import (
    MultiTaskNetwork,
    Network,
    cross_entropy,
    gradient_arrays,
    one_hot,
    softmax,
)
from lora_advsec.nn.optim import Adam
from lora_advsec.nn.io import load_network, save_network

__all__ = [
    "Adam",
    "Conv2D",
    "Dense",
    "Dropout",
    "Flatten",
    "MultiTaskNetwork",
    "Network",
    "cross_entropy",
    "gradient_arrays",
    "load_network",
    "one_hot",
    "save_network",
    "softmax",
]
