"""Sequential network and the shared-trunk two-head variant.

All math is float64. Gradients are exact reverse-mode derivatives of the
categorical cross-entropy. ``input_gradient`` differentiates each sample's
own (unaveraged) loss, which is the quantity gradient-sign attacks consume;
it always runs in eval mode so dropout is the identity.
"""

from __future__ import annotations

import numpy as np

from lora_advsec.errors import ConfigError
from lora_advsec.nn.layers import Dense, Dropout
from lora_advsec.rng import make_rng

LOG_CLAMP = 1e-12
_MODES = ("train", "eval")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shifted by the row max for overflow safety."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def one_hot(labels: np.ndarray, n_classes: int = 2) -> np.ndarray:
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean categorical cross-entropy.

    ``labels`` may be an integer class vector or a one-hot matrix. The
    probability fed to the log is clamped below at 1e-12.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    logp = np.log(np.clip(probs, LOG_CLAMP, 1.0))
    if labels.ndim == 2:
        return float(-(labels * logp).sum(axis=1).mean())
    return float(-logp[np.arange(len(labels)), labels.astype(int)].mean())


def _check_mode(mode: str) -> bool:
    if mode not in _MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    return mode == "train"


def _validate_finite(x: np.ndarray) -> None:
    if not np.isfinite(x).all():
        raise ValueError("non-finite values in input batch")


def _walk_shapes(layers, input_shape):
    shape = tuple(input_shape)
    shapes = []
    for layer in layers:
        shapes.append(shape)
        shape = tuple(layer.out_shape(shape))
    return shapes, shape


def _validate_stack(layers, input_shape, *, terminal_softmax):
    if not layers:
        raise ConfigError("a network needs at least one layer")
    for i, layer in enumerate(layers):
        act = getattr(layer, "activation", None)
        last = i == len(layers) - 1
        if act == "softmax" and not (last and terminal_softmax):
            raise ConfigError("softmax is only valid on the final dense layer")
    if terminal_softmax:
        tail = layers[-1]
        if not (isinstance(tail, Dense) and tail.activation == "softmax"):
            raise ConfigError("classification stacks must end with Dense(..., activation='softmax')")
    _walk_shapes(layers, input_shape)


def _init_stack(layers, input_shape, rng):
    shapes, _ = _walk_shapes(layers, input_shape)
    return [layer.init_params(shape, rng) for layer, shape in zip(layers, shapes)]


def _forward_stack(layers, params, x, train, rng):
    caches = []
    out = x
    for layer, p in zip(layers, params):
        out, cache = layer.forward(out, p, train, rng)
        caches.append(cache)
    return out, caches


def _backward_stack(layers, params, caches, grad):
    grads = [None] * len(layers)
    for i in reversed(range(len(layers))):
        grad, grads[i] = layers[i].backward(grad, caches[i], params[i])
    return grad, grads


def _stack_arrays(params):
    out = []
    for p in params:
        if p is not None:
            out.extend(p.values())
    return out


def gradient_arrays(grads) -> list:
    """Flatten a per-layer gradient structure into the parameter-array order."""
    if isinstance(grads, dict):
        out = []
        for key in ("shared", "head1", "head2"):
            out.extend(_stack_arrays(grads[key]))
        return out
    return _stack_arrays(grads)


class Network:
    """Sequential classifier ending in a softmax dense layer.

    Parameters are initialized Glorot-uniform with zero biases from a PCG64
    stream seeded by ``seed``, so two constructions from the same spec and
    seed are bit-identical.
    """

    def __init__(self, layers, input_shape=(2, 32), seed: int = 0):
        _validate_stack(layers, input_shape, terminal_softmax=True)
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.seed = int(seed)
        self.params = _init_stack(self.layers, self.input_shape, make_rng(self.seed))

    @classmethod
    def _from_parts(cls, layers, input_shape, params, seed):
        net = cls.__new__(cls)
        net.layers = list(layers)
        net.input_shape = tuple(input_shape)
        net.seed = int(seed)
        net.params = list(params)
        return net

    def _batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape == self.input_shape:
            return x[None, ...], True
        if x.ndim == len(self.input_shape) + 1 and x.shape[1:] == self.input_shape:
            return x, False
        raise ConfigError(f"expected input shape {self.input_shape} or a batch of it, got {x.shape}")

    def forward(self, x, mode: str = "eval", rng=None) -> np.ndarray:
        """Class probabilities, one row per sample."""
        train = _check_mode(mode)
        xb, single = self._batch(x)
        _validate_finite(xb)
        logits, _ = _forward_stack(self.layers, self.params, xb, train, rng)
        probs = softmax(logits)
        return probs[0] if single else probs

    def loss(self, x, y, mode: str = "eval", rng=None) -> float:
        return cross_entropy(self.forward(x, mode, rng), y)

    def loss_and_gradients(self, x, y, mode: str = "eval", rng=None):
        """Mean cross-entropy over the batch and exact per-layer parameter grads."""
        train = _check_mode(mode)
        xb, _ = self._batch(x)
        _validate_finite(xb)
        y = np.asarray(y, dtype=np.int64)
        logits, caches = _forward_stack(self.layers, self.params, xb, train, rng)
        probs = softmax(logits)
        loss = cross_entropy(probs, y)
        dlogits = (probs - one_hot(y, probs.shape[1])) / len(y)
        _, grads = _backward_stack(self.layers, self.params, caches, dlogits)
        return loss, grads

    def input_gradient(self, x, y) -> np.ndarray:
        """Gradient of each sample's own cross-entropy w.r.t. its input values."""
        xb, single = self._batch(x)
        _validate_finite(xb)
        y = np.asarray(y, dtype=np.int64)
        logits, caches = _forward_stack(self.layers, self.params, xb, False, None)
        probs = softmax(logits)
        dlogits = probs - one_hot(y, probs.shape[1])
        gx, _ = _backward_stack(self.layers, self.params, caches, dlogits)
        return gx[0] if single else gx

    def count_parameters(self) -> int:
        return sum(arr.size for arr in self.parameter_arrays())

    def parameter_arrays(self) -> list:
        """Live references in layer order, weights before biases."""
        return _stack_arrays(self.params)

    def copy_parameters(self):
        return [None if p is None else {k: v.copy() for k, v in p.items()} for p in self.params]

    def set_parameters(self, params) -> None:
        for mine, theirs in zip(self.params, params):
            if mine is None:
                continue
            for key in mine:
                mine[key][...] = theirs[key]

    def flat_parameters(self) -> np.ndarray:
        arrays = self.parameter_arrays()
        if not arrays:
            return np.zeros(0)
        return np.concatenate([a.ravel() for a in arrays])

    def set_flat_parameters(self, vec) -> None:
        vec = np.asarray(vec, dtype=np.float64).ravel()
        if vec.size != self.count_parameters():
            raise ConfigError(f"expected {self.count_parameters()} parameters, got {vec.size}")
        offset = 0
        for arr in self.parameter_arrays():
            arr[...] = vec[offset:offset + arr.size].reshape(arr.shape)
            offset += arr.size


class MultiTaskNetwork:
    """One shared trunk feeding two independent classification heads.

    The joint training loss is w1*CE(head1) + w2*CE(head2); the shared trunk
    accumulates both weighted gradients, each head sees only its own.
    """

    def __init__(self, shared_layers, head1_layers, head2_layers, input_shape=(2, 32), seed: int = 0):
        _validate_stack(shared_layers, input_shape, terminal_softmax=False)
        _, trunk_shape = _walk_shapes(shared_layers, input_shape)
        _validate_stack(head1_layers, trunk_shape, terminal_softmax=True)
        _validate_stack(head2_layers, trunk_shape, terminal_softmax=True)
        self.shared_layers = list(shared_layers)
        self.head_layers = (list(head1_layers), list(head2_layers))
        self.input_shape = tuple(input_shape)
        self.trunk_shape = trunk_shape
        self.seed = int(seed)
        rng = make_rng(self.seed)
        self.shared_params = _init_stack(self.shared_layers, self.input_shape, rng)
        self.head_params = (
            _init_stack(self.head_layers[0], trunk_shape, rng),
            _init_stack(self.head_layers[1], trunk_shape, rng),
        )

    def _batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape == self.input_shape:
            return x[None, ...], True
        if x.ndim == len(self.input_shape) + 1 and x.shape[1:] == self.input_shape:
            return x, False
        raise ConfigError(f"expected input shape {self.input_shape} or a batch of it, got {x.shape}")

    def forward(self, x, mode: str = "eval", rng=None):
        """Per-task class probabilities ``(probs_task1, probs_task2)``."""
        train = _check_mode(mode)
        xb, single = self._batch(x)
        _validate_finite(xb)
        trunk, _ = _forward_stack(self.shared_layers, self.shared_params, xb, train, rng)
        out = []
        for layers, params in zip(self.head_layers, self.head_params):
            logits, _ = _forward_stack(layers, params, trunk, train, rng)
            probs = softmax(logits)
            out.append(probs[0] if single else probs)
        return tuple(out)

    def _run(self, xb, train, rng):
        trunk, c0 = _forward_stack(self.shared_layers, self.shared_params, xb, train, rng)
        logits1, c1 = _forward_stack(self.head_layers[0], self.head_params[0], trunk, train, rng)
        logits2, c2 = _forward_stack(self.head_layers[1], self.head_params[1], trunk, train, rng)
        return softmax(logits1), softmax(logits2), (c0, c1, c2)

    def _backprop(self, d1, d2, caches):
        c0, c1, c2 = caches
        g1, grads1 = _backward_stack(self.head_layers[0], self.head_params[0], c1, d1)
        g2, grads2 = _backward_stack(self.head_layers[1], self.head_params[1], c2, d2)
        gx, grads0 = _backward_stack(self.shared_layers, self.shared_params, c0, g1 + g2)
        return gx, {"shared": grads0, "head1": grads1, "head2": grads2}

    def losses_and_gradients(self, x, y1, y2, weights=(0.5, 0.5), mode: str = "eval", rng=None):
        """Joint loss, the two head losses, and exact parameter gradients."""
        train = _check_mode(mode)
        xb, _ = self._batch(x)
        _validate_finite(xb)
        y1 = np.asarray(y1, dtype=np.int64)
        y2 = np.asarray(y2, dtype=np.int64)
        w1, w2 = float(weights[0]), float(weights[1])
        p1, p2, caches = self._run(xb, train, rng)
        l1 = cross_entropy(p1, y1)
        l2 = cross_entropy(p2, y2)
        n = len(y1)
        d1 = w1 * (p1 - one_hot(y1, p1.shape[1])) / n
        d2 = w2 * (p2 - one_hot(y2, p2.shape[1])) / n
        _, grads = self._backprop(d1, d2, caches)
        return w1 * l1 + w2 * l2, (l1, l2), grads

    def input_gradient(self, x, y1, y2, gamma=(0.5, 0.5)) -> np.ndarray:
        """Gradient of the gamma-weighted per-sample losses w.r.t. the input."""
        xb, single = self._batch(x)
        _validate_finite(xb)
        y1 = np.asarray(y1, dtype=np.int64)
        y2 = np.asarray(y2, dtype=np.int64)
        g1, g2 = float(gamma[0]), float(gamma[1])
        p1, p2, caches = self._run(xb, False, None)
        d1 = g1 * (p1 - one_hot(y1, p1.shape[1]))
        d2 = g2 * (p2 - one_hot(y2, p2.shape[1]))
        gx, _ = self._backprop(d1, d2, caches)
        return gx[0] if single else gx

    def head_network(self, task_index: int) -> Network:
        """The trunk plus one head as a standalone network sharing parameters."""
        if task_index not in (0, 1):
            raise ConfigError("task_index must be 0 or 1")
        return Network._from_parts(
            self.shared_layers + self.head_layers[task_index],
            self.input_shape,
            self.shared_params + self.head_params[task_index],
            self.seed,
        )

    def count_parameters(self) -> int:
        return sum(arr.size for arr in self.parameter_arrays())

    def parameter_arrays(self) -> list:
        out = _stack_arrays(self.shared_params)
        out.extend(_stack_arrays(self.head_params[0]))
        out.extend(_stack_arrays(self.head_params[1]))
        return out

    def copy_parameters(self):
        def dup(params):
            return [None if p is None else {k: v.copy() for k, v in p.items()} for p in params]

        return {
            "shared": dup(self.shared_params),
            "head1": dup(self.head_params[0]),
            "head2": dup(self.head_params[1]),
        }

    def set_parameters(self, params) -> None:
        def put(mine, theirs):
            for m, t in zip(mine, theirs):
                if m is None:
                    continue
                for key in m:
                    m[key][...] = t[key]

        put(self.shared_params, params["shared"])
        put(self.head_params[0], params["head1"])
        put(self.head_params[1], params["head2"])

    def flat_parameters(self) -> np.ndarray:
        arrays = self.parameter_arrays()
        return np.concatenate([a.ravel() for a in arrays])

    def set_flat_parameters(self, vec) -> None:
        vec = np.asarray(vec, dtype=np.float64).ravel()
        if vec.size != self.count_parameters():
            raise ConfigError(f"expected {self.count_parameters()} parameters, got {vec.size}")
        offset = 0
        for arr in self.parameter_arrays():
            arr[...] = vec[offset:offset + arr.size].reshape(arr.shape)
            offset += arr.size
