"""Device-identification and authenticity classifiers.

Two reference architectures operate on (2, 32) I/Q frames: a convolution
stack ("cnn", 70,074 parameters) and a dense stack ("fnn", 6,522). Each
also exists in a two-head form that shares its first layer between the
device task and the legitimate-vs-rogue task (140,020 / 8,884 parameters).

Training is plain mini-batch Adam on mean cross-entropy. A stratified
slice of the training data is held out and the parameters with the best
held-out accuracy over the epochs are the ones kept; for the two-head
model the selection metric is the task-weighted mean of the two held-out
accuracies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from lora_advsec.errors import ConfigError, FormatError
from lora_advsec.nn import (
    Adam,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    MultiTaskNetwork,
    Network,
    gradient_arrays,
    load_network,
    save_network,
)
from lora_advsec.rng import derive_rng, derive_seed
from lora_advsec.validation import check_iq_array, check_label_array

ARCHITECTURES = ("cnn", "fnn")
TASKS = ("device", "authenticity")

# column of each task's labels in a (n, 2) label matrix
TASK_COLUMN = {"device": 0, "authenticity": 1}


def architecture_layers(arch: str) -> list:
    """Full layer stack of the named architecture, ending in a 2-way softmax."""
    if arch == "cnn":
        return [
            Conv2D(32, (1, 3), activation="relu", padding="full"),
            Flatten(),
            Dense(32, "relu"),
            Dropout(0.1),
            Dense(8, "relu"),
            Dropout(0.1),
            Dense(2, "softmax"),
        ]
    if arch == "fnn":
        return [
            Dense(64, "relu"),
            Dropout(0.1),
            Dense(32, "relu"),
            Dropout(0.1),
            Dense(8, "relu"),
            Dropout(0.1),
            Dense(2, "softmax"),
        ]
    raise ConfigError(f"unknown architecture {arch!r}, expected one of {ARCHITECTURES}")


def shared_and_head_layers(arch: str):
    """Split an architecture into its shared trunk and one head template.

    The trunk is the first parameterized layer (plus the flatten for the
    conv stack, so both heads consume the same flat activation); the head
    is everything after it. Both heads of a two-head model use the same
    template but receive independent parameters.
    """
    layers = architecture_layers(arch)
    cut = 2 if arch == "cnn" else 1
    return layers[:cut], layers[cut:]


@dataclass(frozen=True)
class Metrics:
    """Overall and per-class conditional accuracies on one evaluation set.

    ``per_class[c]`` is Pr(pred = c | true = c); a class absent from the
    set gets conditional accuracy 0.0 with support 0, leaving the
    support-weighted identity with ``overall`` intact.
    """

    overall: float
    per_class: tuple
    support: tuple

    @property
    def n(self) -> int:
        return int(sum(self.support))


def compute_metrics(y_true, y_pred, n_classes: int = 2) -> Metrics:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ConfigError("label vectors must be 1-d and of equal length")
    if y_true.size == 0:
        raise ConfigError("cannot compute metrics on an empty set")
    per_class, support = [], []
    for cls in range(n_classes):
        mask = y_true == cls
        count = int(mask.sum())
        support.append(count)
        per_class.append(float(np.mean(y_pred[mask] == cls)) if count else 0.0)
    return Metrics(
        overall=float(np.mean(y_pred == y_true)),
        per_class=tuple(per_class),
        support=tuple(support),
    )


def _check_train_config(epochs, batch_size, learning_rate, validation_fraction):
    if not (isinstance(epochs, int) and epochs >= 1):
        raise ConfigError(f"epochs must be a positive integer, got {epochs!r}")
    if not (isinstance(batch_size, int) and batch_size >= 1):
        raise ConfigError(f"batch_size must be a positive integer, got {batch_size!r}")
    if not learning_rate > 0:
        raise ConfigError(f"learning_rate must be positive, got {learning_rate!r}")
    if not 0.0 <= validation_fraction < 1.0:
        raise ConfigError(
            f"validation_fraction must lie in [0, 1), got {validation_fraction!r}")


def _stratified_holdout(key, fraction, rng):
    """Split indices into (train, holdout) with per-class proportions kept.

    ``key`` is the stratification label per sample. fraction 0 yields an
    empty holdout.
    """
    held = []
    for cls in np.unique(key):
        members = np.flatnonzero(key == cls)
        members = members[rng.permutation(members.size)]
        held.append(members[: int(round(fraction * members.size))])
    held = np.sort(np.concatenate(held)) if held else np.empty(0, dtype=np.int64)
    mask = np.ones(key.shape[0], dtype=bool)
    mask[held] = False
    return np.flatnonzero(mask), held


def _require_both_classes(y, what):
    if np.unique(y).size < 2:
        raise ConfigError(f"{what} labels must contain both classes")


class SingleTaskClassifier(ClassifierMixin, BaseEstimator):
    """Binary classifier for one task over (n, 2, 32) I/Q arrays.

    ``task`` names which labels the model is meant for ("device" or
    "authenticity"); it selects nothing at fit time beyond the derived
    initialization stream, but is recorded in checkpoints so a saved model
    cannot be silently evaluated against the wrong label column.
    """

    def __init__(self, arch: str = "cnn", task: str = "device", epochs: int = 50,
                 batch_size: int = 64, learning_rate: float = 1e-3,
                 validation_fraction: float = 0.1, seed: int = 0):
        self.arch = arch
        self.task = task
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.validation_fraction = validation_fraction
        self.seed = seed

    def _check_config(self):
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.arch!r}")
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}, expected one of {TASKS}")
        _check_train_config(self.epochs, self.batch_size, self.learning_rate,
                            self.validation_fraction)

    def build(self) -> Network:
        """Fresh untrained network for the configured architecture."""
        self._check_config()
        init_seed = derive_seed(self.seed, "init", self.arch, self.task)
        return Network(architecture_layers(self.arch), seed=init_seed)

    def fit(self, X, y, augment=None):
        """Train on labeled frames; returns self.

        ``augment``, when given, is called once per mini-batch as
        ``augment(net, idx, xb, yb) -> (extra_x, extra_y)`` with ``idx``
        the batch's row indices into ``X``; the returned samples join that
        batch's gradient step (adversarial training plugs in here).
        Gradient evaluation inside the hook must not consume the dropout
        stream; eval-mode calls satisfy this.
        """
        X = check_iq_array(X)
        y = check_label_array(y, X.shape[0])
        _require_both_classes(y, "training")
        net = self.build()

        train_idx, val_idx = _stratified_holdout(
            y, self.validation_fraction, derive_rng(self.seed, "holdout"))
        shuffle_rng = derive_rng(self.seed, "shuffle")
        dropout_rng = derive_rng(self.seed, "dropout")
        optimizer = Adam(learning_rate=self.learning_rate)

        losses, val_accuracies = [], []
        best_accuracy, best_params = -1.0, None
        for _ in range(self.epochs):
            order = train_idx[shuffle_rng.permutation(train_idx.size)]
            seen, loss_sum = 0, 0.0
            for start in range(0, order.size, self.batch_size):
                idx = order[start:start + self.batch_size]
                xb, yb = X[idx], y[idx]
                if augment is not None:
                    extra_x, extra_y = augment(net, idx, xb, yb)
                    xb = np.concatenate([xb, extra_x])
                    yb = np.concatenate([yb, extra_y])
                loss, grads = net.loss_and_gradients(xb, yb, mode="train", rng=dropout_rng)
                optimizer.step(net.parameter_arrays(), gradient_arrays(grads))
                loss_sum += loss * xb.shape[0]
                seen += xb.shape[0]
            losses.append(loss_sum / seen)
            if val_idx.size:
                predicted = np.argmax(net.forward(X[val_idx]), axis=1)
                accuracy = float(np.mean(predicted == y[val_idx]))
                val_accuracies.append(accuracy)
                if accuracy > best_accuracy:
                    best_accuracy, best_params = accuracy, net.copy_parameters()
        if best_params is not None:
            net.set_parameters(best_params)

        self.net_ = net
        self.history_ = {"loss": losses, "val_accuracy": val_accuracies}
        self.classes_ = np.array([0, 1], dtype=np.int64)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "net_")
        return self.net_.forward(check_iq_array(X))

    def predict(self, X) -> np.ndarray:
        # np.argmax breaks ties toward the lower class index
        return np.argmax(self.predict_proba(X), axis=1)

    def input_gradient(self, X, y) -> np.ndarray:
        """Per-sample gradient of the loss w.r.t. the input components."""
        check_is_fitted(self, "net_")
        X = check_iq_array(X)
        return self.net_.input_gradient(X, check_label_array(y, X.shape[0]))

    def save(self, path) -> None:
        check_is_fitted(self, "net_")
        save_network(self.net_, path, extra={"kind": "single", "params": self.get_params()})

    @classmethod
    def load(cls, path) -> "SingleTaskClassifier":
        """Rebuild a fitted classifier from a checkpoint (history not kept)."""
        net, header = load_network(path)
        extra = header.get("extra", {})
        if extra.get("kind") != "single" or not isinstance(net, Network):
            raise FormatError(f"{path}: not a single-task classifier checkpoint")
        model = cls(**extra["params"])
        model._check_config()
        model.net_ = net
        model.classes_ = np.array([0, 1], dtype=np.int64)
        model.n_features_in_ = int(np.prod(net.input_shape))
        return model


class MultiTaskClassifier(BaseEstimator):
    """Two-head classifier trained jointly on device and authenticity labels.

    ``fit`` takes a label matrix of shape (n, 2) with the device column
    first. The joint loss is ``w1 * L_device + w2 * L_authenticity``; the
    logged joint loss per epoch is recomputed from the logged per-task
    means with the same weights, so the linear relation holds exactly in
    the history.
    """

    def __init__(self, arch: str = "cnn", epochs: int = 50, batch_size: int = 64,
                 learning_rate: float = 1e-3, validation_fraction: float = 0.1,
                 task_weights=(0.5, 0.5), seed: int = 0):
        self.arch = arch
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.validation_fraction = validation_fraction
        self.task_weights = task_weights
        self.seed = seed

    def _check_config(self):
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.arch!r}")
        _check_train_config(self.epochs, self.batch_size, self.learning_rate,
                            self.validation_fraction)
        w = tuple(float(v) for v in self.task_weights)
        if len(w) != 2 or min(w) < 0.0 or not math.isclose(sum(w), 1.0, rel_tol=0, abs_tol=1e-12):
            raise ConfigError(
                f"task_weights must be two values in [0, 1] summing to 1, got {self.task_weights!r}")
        return w

    def build(self) -> MultiTaskNetwork:
        """Fresh untrained two-head network for the configured architecture."""
        self._check_config()
        shared, head = shared_and_head_layers(self.arch)
        init_seed = derive_seed(self.seed, "init", self.arch, "multitask")
        return MultiTaskNetwork(shared, head, head, seed=init_seed)

    @staticmethod
    def _check_labels(X, Y):
        Y = np.asarray(Y)
        if Y.ndim != 2 or Y.shape[1] != 2:
            raise ConfigError(
                f"expected a label matrix of shape (n, 2), got {Y.shape}")
        y1 = check_label_array(Y[:, 0], X.shape[0])
        y2 = check_label_array(Y[:, 1], X.shape[0])
        _require_both_classes(y1, "device")
        _require_both_classes(y2, "authenticity")
        return y1, y2

    def fit(self, X, Y, augment=None):
        """Train both heads jointly; ``augment`` as in SingleTaskClassifier
        except that the label argument and return value are (n, 2) matrices."""
        X = check_iq_array(X)
        y1, y2 = self._check_labels(X, Y)
        weights = self._check_config()
        net = self.build()

        # stratify the holdout on the (device, authenticity) cell
        cell = y1 * 2 + y2
        train_idx, val_idx = _stratified_holdout(
            cell, self.validation_fraction, derive_rng(self.seed, "holdout"))
        shuffle_rng = derive_rng(self.seed, "shuffle")
        dropout_rng = derive_rng(self.seed, "dropout")
        optimizer = Adam(learning_rate=self.learning_rate)

        losses, task_losses, val_accuracies = [], ([], []), []
        best_score, best_params = -1.0, None
        for _ in range(self.epochs):
            order = train_idx[shuffle_rng.permutation(train_idx.size)]
            seen, sums = 0, [0.0, 0.0]
            for start in range(0, order.size, self.batch_size):
                idx = order[start:start + self.batch_size]
                xb, y1b, y2b = X[idx], y1[idx], y2[idx]
                if augment is not None:
                    extra_x, extra_y = augment(net, idx, xb, np.stack([y1b, y2b], axis=1))
                    xb = np.concatenate([xb, extra_x])
                    y1b = np.concatenate([y1b, extra_y[:, 0]])
                    y2b = np.concatenate([y2b, extra_y[:, 1]])
                _, (loss1, loss2), grads = net.losses_and_gradients(
                    xb, y1b, y2b, weights=weights, mode="train", rng=dropout_rng)
                optimizer.step(net.parameter_arrays(), gradient_arrays(grads))
                sums[0] += loss1 * xb.shape[0]
                sums[1] += loss2 * xb.shape[0]
                seen += xb.shape[0]
            epoch_means = (sums[0] / seen, sums[1] / seen)
            task_losses[0].append(epoch_means[0])
            task_losses[1].append(epoch_means[1])
            losses.append(weights[0] * epoch_means[0] + weights[1] * epoch_means[1])
            if val_idx.size:
                probs1, probs2 = net.forward(X[val_idx])
                acc1 = float(np.mean(np.argmax(probs1, axis=1) == y1[val_idx]))
                acc2 = float(np.mean(np.argmax(probs2, axis=1) == y2[val_idx]))
                score = weights[0] * acc1 + weights[1] * acc2
                val_accuracies.append(score)
                if score > best_score:
                    best_score, best_params = score, net.copy_parameters()
        if best_params is not None:
            net.set_parameters(best_params)

        self.net_ = net
        self.history_ = {
            "loss": losses,
            "task_losses": {"device": task_losses[0], "authenticity": task_losses[1]},
            "val_accuracy": val_accuracies,
        }
        self.classes_ = np.array([0, 1], dtype=np.int64)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def predict_proba(self, X):
        """Pair of probability matrices, one per task."""
        check_is_fitted(self, "net_")
        return self.net_.forward(check_iq_array(X))

    def predict(self, X) -> np.ndarray:
        """(n, 2) label matrix: device column then authenticity column."""
        probs1, probs2 = self.predict_proba(X)
        return np.stack([np.argmax(probs1, axis=1), np.argmax(probs2, axis=1)], axis=1)

    def input_gradient(self, X, y_device, y_authenticity, gamma=(0.5, 0.5)) -> np.ndarray:
        """Per-sample input gradient of the gamma-weighted joint loss."""
        check_is_fitted(self, "net_")
        X = check_iq_array(X)
        n = X.shape[0]
        return self.net_.input_gradient(
            X, check_label_array(y_device, n), check_label_array(y_authenticity, n), gamma)

    def head(self, task: str) -> Network:
        """Single-task view of one head, sharing this model's parameters."""
        check_is_fitted(self, "net_")
        if task not in TASKS:
            raise ConfigError(f"unknown task {task!r}, expected one of {TASKS}")
        return self.net_.head_network(TASK_COLUMN[task])

    def save(self, path) -> None:
        check_is_fitted(self, "net_")
        params = self.get_params()
        params["task_weights"] = [float(v) for v in params["task_weights"]]
        save_network(self.net_, path, extra={"kind": "multitask", "params": params})

    @classmethod
    def load(cls, path) -> "MultiTaskClassifier":
        net, header = load_network(path)
        extra = header.get("extra", {})
        if extra.get("kind") != "multitask" or not isinstance(net, MultiTaskNetwork):
            raise FormatError(f"{path}: not a multi-task classifier checkpoint")
        params = dict(extra["params"])
        params["task_weights"] = tuple(params["task_weights"])
        model = cls(**params)
        model._check_config()
        model.net_ = net
        model.classes_ = np.array([0, 1], dtype=np.int64)
        model.n_features_in_ = int(np.prod(net.input_shape))
        return model


def evaluate(model, X, y) -> Metrics:
    """Metrics of a single-task model (or head view) on labeled frames."""
    X = check_iq_array(X)
    y = check_label_array(y, X.shape[0])
    return compute_metrics(y, model.predict(X))


def evaluate_multitask(model, X, Y):
    """Per-task metrics of a two-head model; returns (device, authenticity)."""
    X = check_iq_array(X)
    Y = np.asarray(Y)
    predicted = model.predict(X)
    return (
        compute_metrics(check_label_array(Y[:, 0], X.shape[0]), predicted[:, 0]),
        compute_metrics(check_label_array(Y[:, 1], X.shape[0]), predicted[:, 1]),
    )


def evaluate_subset(model, X, y, mask) -> Metrics:
    """Metrics restricted to the samples selected by a boolean mask."""
    X = check_iq_array(X)
    y = check_label_array(y, X.shape[0])
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (X.shape[0],):
        raise ConfigError("mask must be a boolean vector matching the sample count")
    if not mask.any():
        raise ConfigError("subset filter left no samples to evaluate")
    return compute_metrics(y[mask], model.predict(X[mask]))
