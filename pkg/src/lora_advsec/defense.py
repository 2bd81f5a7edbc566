"""Adversarial-training defense and before/after reporting.

The defense clones an estimator and refits it with every mini-batch
augmented by FGSM-perturbed copies of its own samples (true labels kept),
crafted white-box against the network being trained; perturbations
targeting a different scope are crafted against fixed partner models
passed in by the caller. Retraining hyperparameters come from the cloned
estimator itself, so the robust model restarts from the baseline's
initialization stream.

Reports compare attack success before and after the defense at a single
PSR, regenerating perturbations against whichever model is under
evaluation, and record the robust model's clean accuracy.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np
from sklearn.base import clone

from lora_advsec.attacks import (
    _SCOPE_TASKS,
    _task_predictions,
    AttackSpec,
    apply_and_clamp,
    craft_perturbation,
    evaluate_asp,
    psr_to_epsilon,
)
from lora_advsec.data import mean_signal_power
from lora_advsec.errors import ConfigError
from lora_advsec.models import MultiTaskClassifier
from lora_advsec.validation import check_iq_array, check_label_array

DEFENSE_CSV_COLUMNS = ("scope", "asp_before", "asp_after", "clean_accuracy")


@dataclass(frozen=True)
class DefenseConfig:
    """Augmentation settings: which attack to train against and how much.

    ``ratio`` is the number of adversarial copies per clean sample in each
    batch (1.0 doubles the batch). A PSR of -inf degenerates to epsilon 0,
    i.e. ordinary training with duplicated clean samples.
    """

    attack: AttackSpec
    ratio: float = 1.0

    def __post_init__(self):
        if not isinstance(self.attack, AttackSpec):
            raise ConfigError("attack must be an AttackSpec")
        if math.isnan(self.ratio) or not self.ratio > 0:
            raise ConfigError(f"augmentation ratio must be positive, got {self.ratio!r}")


@dataclass(frozen=True)
class DefenseRow:
    """One report line: an attack scope's ASP before/after plus clean accuracy."""

    scope: str
    asp_before: float
    asp_after: float
    clean_accuracy: float


def adversarial_training(model, X, y_device, y_authenticity, config: DefenseConfig,
                         *, mean_power=None, partner_models=None):
    """Clone ``model`` and refit it with adversarial batch augmentation.

    ``y_device`` / ``y_authenticity`` are the training label columns; a
    single-task model consumes its own column and the other may be None
    unless the augmentation scope needs it. ``partner_models`` supplies
    fitted classifiers for scopes the trained model does not cover itself
    (a mismatched or hybrid augmentation); the trained model's own role is
    always crafted against live. Returns the fitted robust estimator; the
    input model is left untouched.
    """
    if not isinstance(config, DefenseConfig):
        raise ConfigError("config must be a DefenseConfig")
    attack = config.attack
    if attack.clamp_bound is None:
        raise ConfigError("augmentation attack needs a clamp_bound")
    X = check_iq_array(X)
    n = X.shape[0]
    labels = {
        "device": check_label_array(y_device, n) if y_device is not None else None,
        "authenticity": (check_label_array(y_authenticity, n)
                         if y_authenticity is not None else None),
    }
    own_role = "multitask" if isinstance(model, MultiTaskClassifier) \
        else getattr(model, "task", None)
    if own_role not in ("device", "authenticity", "multitask"):
        raise ConfigError(f"cannot infer the trained model's role from {type(model).__name__}")
    if attack.kind == "untargeted":
        for task in _SCOPE_TASKS[attack.scope]:
            if labels[task] is None:
                raise ConfigError(f"augmentation scope {attack.scope!r} needs {task} labels")
    if mean_power is None:
        mean_power = mean_signal_power(X)
    epsilon = psr_to_epsilon(attack.psr_db, mean_power)

    def augment(net, idx, xb, yb):
        copies = int(round(config.ratio * xb.shape[0]))
        sel = np.arange(copies) % xb.shape[0]
        xs, ys = xb[sel], yb[sel]
        if copies == 0 or epsilon == 0.0:
            return xs, ys
        crafting = dict(partner_models) if partner_models else {}
        crafting[own_role] = net
        sub = idx[sel]
        delta = craft_perturbation(
            attack, crafting, xs,
            labels["device"][sub] if labels["device"] is not None else None,
            labels["authenticity"][sub] if labels["authenticity"] is not None else None,
            epsilon)
        return apply_and_clamp(xs, delta, attack.clamp_bound), ys

    robust = clone(model)
    if own_role == "multitask":
        if labels["device"] is None or labels["authenticity"] is None:
            raise ConfigError("a multi-task model needs both label columns")
        robust.fit(X, np.stack([labels["device"], labels["authenticity"]], axis=1),
                   augment=augment)
    else:
        if labels[own_role] is None:
            raise ConfigError(f"a {own_role} model needs {own_role} labels")
        robust.fit(X, labels[own_role], augment=augment)
    return robust


def evaluate_defense(robust_models, baseline_models, X, y_device, y_authenticity,
                     attack: AttackSpec, *, mean_power=None) -> list:
    """Before/after report rows at ``attack.psr_db``, white-box throughout.

    Perturbations are regenerated against each model set, never replayed,
    so identical model sets yield asp_after equal to asp_before exactly.
    Scopes scored on both tasks emit one row per task, the scope label
    suffixed with the task name.
    """
    X = check_iq_array(X)
    n = X.shape[0]
    grid = [attack.psr_db]
    before = evaluate_asp(baseline_models, X, y_device, y_authenticity, attack,
                          psr_grid_db=grid, mean_power=mean_power)
    after = evaluate_asp(robust_models, X, y_device, y_authenticity, attack,
                         psr_grid_db=grid, mean_power=mean_power)
    clean_predictions = _task_predictions(robust_models, attack.scope, X)
    labels = {"device": y_device, "authenticity": y_authenticity}
    tasks = _SCOPE_TASKS[attack.scope]
    rows = []
    for point_before, point_after in zip(before, after):
        task = point_before.task
        truth = check_label_array(labels[task], n)
        clean = float(np.mean(clean_predictions[task] == truth))
        label = attack.scope if len(tasks) == 1 else f"{attack.scope}-{task}"
        rows.append(DefenseRow(label, point_before.asp, point_after.asp, clean))
    return rows


def write_defense_csv(rows, path, append: bool = False) -> None:
    fresh = not append or not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a" if append else "w", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(DEFENSE_CSV_COLUMNS)
        for row in rows:
            writer.writerow([row.scope, row.asp_before, row.asp_after, row.clean_accuracy])


def read_defense_csv(path) -> list:
    with open(path, newline="") as fh:
        parsed = list(csv.reader(fh))
    if not parsed or tuple(parsed[0]) != DEFENSE_CSV_COLUMNS:
        raise ConfigError(f"{path}: expected header {','.join(DEFENSE_CSV_COLUMNS)}")
    return [DefenseRow(r[0], float(r[1]), float(r[2]), float(r[3])) for r in parsed[1:]]
