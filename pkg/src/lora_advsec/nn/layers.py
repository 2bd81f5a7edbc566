"""Layer kernels for the network engine.

Each layer spec is an immutable dataclass. Parameters live outside the spec
(in the owning network) so one spec can drive many parameter sets. Forward
passes return ``(output, cache)``; backward passes take the upstream gradient
plus the cache and return ``(input_gradient, parameter_gradients)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from lora_advsec.errors import ConfigError

_ACTIVATIONS = ("relu", "softmax", None)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    """Uniform(-limit, limit) with limit = sqrt(6 / (fan_in + fan_out))."""
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _check_activation(activation, *, allow_softmax: bool = True) -> None:
    if activation not in _ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}")
    if activation == "softmax" and not allow_softmax:
        raise ConfigError("softmax is only valid on the final dense layer")


@dataclass(frozen=True)
class Dense:
    """Fully connected layer; multi-axis inputs are flattened per sample.

    The softmax activation is a marker only: the layer itself always emits
    logits and the owning network applies the softmax, which keeps the
    cross-entropy gradient seed exact.
    """

    units: int
    activation: str | None = None

    def __post_init__(self):
        if self.units < 1:
            raise ConfigError("Dense units must be >= 1")
        _check_activation(self.activation)

    def out_shape(self, in_shape):
        return (self.units,)

    def init_params(self, in_shape, rng):
        fan_in = int(np.prod(in_shape))
        w = glorot_uniform(rng, fan_in, self.units, (fan_in, self.units))
        return {"W": w, "b": np.zeros(self.units)}

    def forward(self, x, params, train, rng):
        flat = x.reshape(x.shape[0], -1)
        z = flat @ params["W"] + params["b"]
        out = np.maximum(z, 0.0) if self.activation == "relu" else z
        return out, (x.shape, flat, z)

    def backward(self, grad, cache, params):
        in_shape, flat, z = cache
        if self.activation == "relu":
            grad = grad * (z > 0.0)
        gw = flat.T @ grad
        gb = grad.sum(axis=0)
        gx = (grad @ params["W"].T).reshape(in_shape)
        return gx, {"W": gw, "b": gb}


@dataclass(frozen=True)
class Conv2D:
    """2-D cross-correlation over (height, width[, channels]) inputs.

    ``padding`` acts along the width (sample-time) axis only: "full" pads
    kernel_w - 1 zeros on each side, "valid" pads nothing. The height axis
    (the I/Q rows) is never padded, so a (1, 3) full kernel maps a (2, 32)
    record to (2, 34, filters).
    """

    filters: int
    kernel: tuple[int, int] = (1, 3)
    activation: str | None = "relu"
    padding: str = "full"

    def __post_init__(self):
        if self.filters < 1:
            raise ConfigError("Conv2D filters must be >= 1")
        if len(self.kernel) != 2 or min(self.kernel) < 1:
            raise ConfigError(f"bad kernel {self.kernel!r}")
        if self.padding not in ("full", "valid"):
            raise ConfigError(f"unknown padding {self.padding!r}")
        _check_activation(self.activation, allow_softmax=False)

    def _in_chw(self, in_shape):
        if len(in_shape) == 2:
            return (*in_shape, 1)
        if len(in_shape) == 3:
            return tuple(in_shape)
        raise ConfigError(f"Conv2D expects 2-D or 3-D samples, got shape {in_shape}")

    def _pad(self):
        return self.kernel[1] - 1 if self.padding == "full" else 0

    def out_shape(self, in_shape):
        h, w, _ = self._in_chw(in_shape)
        kh, kw = self.kernel
        oh = h - kh + 1
        ow = w + 2 * self._pad() - kw + 1
        if oh < 1 or ow < 1:
            raise ConfigError(f"kernel {self.kernel} larger than input {in_shape}")
        return (oh, ow, self.filters)

    def init_params(self, in_shape, rng):
        _, _, c = self._in_chw(in_shape)
        kh, kw = self.kernel
        receptive = kh * kw
        w = glorot_uniform(rng, c * receptive, self.filters * receptive, (kh, kw, c, self.filters))
        return {"W": w, "b": np.zeros(self.filters)}

    def forward(self, x, params, train, rng):
        orig_shape = x.shape
        if x.ndim == 3:
            x = x[..., None]
        kh, kw = self.kernel
        pad = self._pad()
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (0, 0))) if pad else x
        # windows: (batch, oh, ow, channels, kh, kw)
        win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
        b, oh, ow = win.shape[:3]
        c = win.shape[3]
        cols = np.ascontiguousarray(win).reshape(b * oh * ow, c * kh * kw)
        kmat = params["W"].transpose(2, 0, 1, 3).reshape(c * kh * kw, self.filters)
        z = (cols @ kmat).reshape(b, oh, ow, self.filters) + params["b"]
        out = np.maximum(z, 0.0) if self.activation == "relu" else z
        return out, (orig_shape, xp, cols, z)

    def backward(self, grad, cache, params):
        orig_shape, xp, cols, z = cache
        if self.activation == "relu":
            grad = grad * (z > 0.0)
        kh, kw = self.kernel
        b, oh, ow, f = grad.shape
        c = xp.shape[3]
        gb = grad.sum(axis=(0, 1, 2))
        flat = grad.reshape(b * oh * ow, f)
        gw = (cols.T @ flat).reshape(c, kh, kw, f).transpose(1, 2, 0, 3)
        gxp = np.zeros_like(xp)
        for k in range(kh):
            for l in range(kw):
                gxp[:, k:k + oh, l:l + ow, :] += np.tensordot(grad, params["W"][k, l], axes=([3], [1]))
        pad = self._pad()
        gx = gxp[:, :, pad:xp.shape[2] - pad, :] if pad else gxp
        return gx.reshape(orig_shape), {"W": gw, "b": gb}


@dataclass(frozen=True)
class Flatten:
    """Collapse every non-batch axis."""

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def init_params(self, in_shape, rng):
        return None

    def forward(self, x, params, train, rng):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad, cache, params):
        return grad.reshape(cache), None


@dataclass(frozen=True)
class Dropout:
    """Inverted dropout: kept units are scaled by 1/(1-rate) in train mode,
    eval mode is the identity. The train-mode mask is cached so backward
    reuses exactly the mask that shaped the forward pass."""

    rate: float

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ConfigError("Dropout rate must lie in [0, 1)")

    def out_shape(self, in_shape):
        return tuple(in_shape)

    def init_params(self, in_shape, rng):
        return None

    def forward(self, x, params, train, rng):
        if not train or self.rate == 0.0:
            return x, None
        if rng is None:
            raise ConfigError("train-mode dropout requires an rng")
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * mask, mask

    def backward(self, grad, cache, params):
        if cache is None:
            return grad, None
        return grad * cache, None


def layer_to_dict(layer) -> dict:
    if isinstance(layer, Dense):
        return {"kind": "dense", "units": layer.units, "activation": layer.activation}
    if isinstance(layer, Conv2D):
        return {
            "kind": "conv2d",
            "filters": layer.filters,
            "kernel": list(layer.kernel),
            "activation": layer.activation,
            "padding": layer.padding,
        }
    if isinstance(layer, Flatten):
        return {"kind": "flatten"}
    if isinstance(layer, Dropout):
        return {"kind": "dropout", "rate": layer.rate}
    raise ConfigError(f"unknown layer type {type(layer).__name__}")


def layer_from_dict(spec: dict):
    kind = spec.get("kind")
    if kind == "dense":
        return Dense(spec["units"], spec.get("activation"))
    if kind == "conv2d":
        return Conv2D(
            spec["filters"],
            tuple(spec.get("kernel", (1, 3))),
            spec.get("activation"),
            spec.get("padding", "full"),
        )
    if kind == "flatten":
        return Flatten()
    if kind == "dropout":
        return Dropout(spec["rate"])
    raise ConfigError(f"unknown layer kind {kind!r}")
