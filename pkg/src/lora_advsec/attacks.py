"""FGSM perturbation constructions and attack-success evaluation.

Five sign-gradient constructions are provided: untargeted and targeted
steps against one classifier, a hybrid step combining the input gradients
of the device and authenticity classifiers, and untargeted and targeted
steps against the two-head model. All of them scale the component-wise
sign of a loss gradient by a magnitude ``epsilon`` derived from a
perturbation-to-signal ratio (PSR) budget, so every component of a crafted
perturbation lies in {-epsilon, 0, +epsilon}.

Attack success probability (ASP) conventions:
  * untargeted: fraction of all evaluated samples whose perturbed
    prediction differs from the true label;
  * targeted: fraction of samples not already carrying the target label
    that are predicted as the target after perturbation.

Adversarial inputs are clamped component-wise to an admissible amplitude
(the maximum absolute component seen in training) before evaluation; at
``epsilon == 0`` the input is passed through untouched, which makes the
untargeted ASP equal the clean error rate exactly.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from lora_advsec.data import mean_signal_power
from lora_advsec.errors import ConfigError
from lora_advsec.models import TASK_COLUMN, TASKS
from lora_advsec.rng import derive_rng
from lora_advsec.validation import check_iq_array, check_label_array

KINDS = ("untargeted", "targeted")
SCOPES = ("device", "authenticity", "hybrid", "multitask")

# 1 dB steps from -20 dB up to the full signal-power budget
DEFAULT_PSR_GRID_DB = tuple(float(v) for v in range(-20, 1))

ASP_CSV_COLUMNS = ("psr_db", "scope", "kind", "task", "asp", "baseline")

# tasks whose predictions an attack of a given scope is scored on, and the
# models it needs; hybrid and multitask perturbations are common to both tasks
_SCOPE_TASKS = {
    "device": ("device",),
    "authenticity": ("authenticity",),
    "hybrid": ("device", "authenticity"),
    "multitask": ("device", "authenticity"),
}
_SCOPE_MODELS = {
    "device": ("device",),
    "authenticity": ("authenticity",),
    "hybrid": ("device", "authenticity"),
    "multitask": ("multitask",),
}


@dataclass(frozen=True)
class AttackSpec:
    """One attack configuration, fixed across a PSR sweep.

    ``targets`` is a (device, authenticity) label pair and is required for
    (and only for) targeted attacks; single-task scopes use the entry of
    their own task. ``clamp_bound`` is the admissible amplitude applied to
    perturbed inputs and must be set before evaluation; callers derive it
    from their training split. ``psr_db`` is the single budget used where
    no explicit grid applies (defense augmentation, one-point CLI runs).
    """

    kind: str = "untargeted"
    scope: str = "device"
    gamma: tuple = (0.5, 0.5)
    psr_db: float = -3.0
    targets: tuple = None
    clamp_bound: float = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown attack kind {self.kind!r}, expected one of {KINDS}")
        if self.scope not in SCOPES:
            raise ConfigError(f"unknown attack scope {self.scope!r}, expected one of {SCOPES}")
        if math.isnan(self.psr_db):
            raise ConfigError("psr_db must be a number")
        gamma = tuple(float(v) for v in self.gamma)
        if len(gamma) != 2 or min(gamma) < 0.0 or \
                not math.isclose(sum(gamma), 1.0, rel_tol=0, abs_tol=1e-12):
            raise ConfigError(
                f"gamma must be two weights in [0, 1] summing to 1, got {self.gamma!r}")
        object.__setattr__(self, "gamma", gamma)
        if self.kind == "targeted":
            if self.targets is None:
                raise ConfigError("targeted attacks require a (device, authenticity) target pair")
            targets = tuple(int(v) for v in self.targets)
            if len(targets) != 2 or any(t not in (0, 1) for t in targets):
                raise ConfigError(f"targets must be two binary labels, got {self.targets!r}")
            object.__setattr__(self, "targets", targets)
        elif self.targets is not None:
            raise ConfigError("untargeted attacks take no targets")
        if self.clamp_bound is not None and not self.clamp_bound > 0:
            raise ConfigError(f"clamp_bound must be positive, got {self.clamp_bound!r}")


@dataclass(frozen=True)
class AspPoint:
    """One measured curve point: ASP of one task at one PSR."""

    psr_db: float
    scope: str
    kind: str
    task: str
    asp: float
    baseline: str


def psr_to_epsilon(psr_db: float, mean_power: float) -> float:
    """Perturbation magnitude realizing a PSR against a mean signal power.

    With every perturbed component at magnitude epsilon, the per-component
    perturbation power is epsilon**2, so the ratio to the mean
    per-component signal power equals the requested PSR exactly.
    """
    if not mean_power > 0:
        raise ConfigError(f"mean signal power must be positive, got {mean_power!r}")
    return math.sqrt(mean_power * 10.0 ** (psr_db / 10.0))


def _check_epsilon(epsilon):
    if not epsilon >= 0:
        raise ConfigError(f"epsilon must be non-negative, got {epsilon!r}")
    return float(epsilon)


def _target_labels(target, n: int) -> np.ndarray:
    return check_label_array(np.full(n, target) if np.ndim(target) == 0 else target, n)


def fgsm_untargeted(model, X, y, epsilon: float) -> np.ndarray:
    """delta = epsilon * sign(grad_x L(x, y)); sign(0) stays 0."""
    epsilon = _check_epsilon(epsilon)
    X = check_iq_array(X)
    y = check_label_array(y, X.shape[0])
    return epsilon * np.sign(model.input_gradient(X, y))


def fgsm_targeted(model, X, y_target, epsilon: float) -> np.ndarray:
    """Step toward the target label: minus the untargeted step taken at it."""
    X = check_iq_array(X)
    return -fgsm_untargeted(model, X, _target_labels(y_target, X.shape[0]), epsilon)


def fgsm_hybrid(model_device, model_authenticity, X, y_device, y_authenticity,
                gamma=(0.5, 0.5), epsilon: float = 0.0) -> np.ndarray:
    """Common perturbation from the gamma-weighted sum of both input gradients."""
    epsilon = _check_epsilon(epsilon)
    X = check_iq_array(X)
    n = X.shape[0]
    combined = (gamma[0] * model_device.input_gradient(X, check_label_array(y_device, n))
                + gamma[1] * model_authenticity.input_gradient(
                    X, check_label_array(y_authenticity, n)))
    return epsilon * np.sign(combined)


def fgsm_hybrid_targeted(model_device, model_authenticity, X, targets,
                         gamma=(0.5, 0.5), epsilon: float = 0.0) -> np.ndarray:
    """Targeted counterpart of the hybrid step, evaluated at the target pair."""
    X = check_iq_array(X)
    n = X.shape[0]
    return -fgsm_hybrid(model_device, model_authenticity, X,
                        _target_labels(targets[0], n), _target_labels(targets[1], n),
                        gamma, epsilon)


def fgsm_multitask_untargeted(model, X, y_device, y_authenticity,
                              gamma=(0.5, 0.5), epsilon: float = 0.0) -> np.ndarray:
    """Sign step on the gamma-weighted joint loss of the two-head model."""
    epsilon = _check_epsilon(epsilon)
    X = check_iq_array(X)
    n = X.shape[0]
    grad = model.input_gradient(X, check_label_array(y_device, n),
                                check_label_array(y_authenticity, n), gamma)
    return epsilon * np.sign(grad)


def fgsm_multitask_targeted(model, X, targets, gamma=(0.5, 0.5),
                            epsilon: float = 0.0) -> np.ndarray:
    X = check_iq_array(X)
    n = X.shape[0]
    return -fgsm_multitask_untargeted(
        model, X, _target_labels(targets[0], n), _target_labels(targets[1], n),
        gamma, epsilon)


def gaussian_baseline(shape, epsilon: float, rng) -> np.ndarray:
    """I.i.d. zero-mean noise with per-component standard deviation epsilon.

    Matches the FGSM per-component power epsilon**2 in expectation, which
    makes it the equal-budget jamming comparison.
    """
    epsilon = _check_epsilon(epsilon)
    return rng.normal(0.0, epsilon, size=shape)


def apply_and_clamp(X, delta, bound: float) -> np.ndarray:
    """x_adv = clamp(x + delta) to the admissible amplitude range."""
    if bound is None or not bound > 0:
        raise ConfigError(f"clamp bound must be positive, got {bound!r}")
    return np.clip(X + delta, -bound, bound)


def _model_for(models, key: str):
    model = models.get(key) if hasattr(models, "get") else None
    if model is None:
        raise ConfigError(f"attack requires a {key!r} model")
    return model


def craft_perturbation(spec: AttackSpec, models, X, y_device, y_authenticity,
                       epsilon: float) -> np.ndarray:
    """Dispatch the construction selected by ``spec.kind`` and ``spec.scope``.

    ``models`` maps "device" / "authenticity" / "multitask" to fitted
    classifiers; only the entries the scope needs must be present.
    """
    for key in _SCOPE_MODELS[spec.scope]:
        _model_for(models, key)
    if spec.kind == "untargeted":
        if spec.scope == "device":
            return fgsm_untargeted(models["device"], X, y_device, epsilon)
        if spec.scope == "authenticity":
            return fgsm_untargeted(models["authenticity"], X, y_authenticity, epsilon)
        if spec.scope == "hybrid":
            return fgsm_hybrid(models["device"], models["authenticity"], X,
                               y_device, y_authenticity, spec.gamma, epsilon)
        return fgsm_multitask_untargeted(models["multitask"], X, y_device,
                                         y_authenticity, spec.gamma, epsilon)
    if spec.scope == "device":
        return fgsm_targeted(models["device"], X, spec.targets[0], epsilon)
    if spec.scope == "authenticity":
        return fgsm_targeted(models["authenticity"], X, spec.targets[1], epsilon)
    if spec.scope == "hybrid":
        return fgsm_hybrid_targeted(models["device"], models["authenticity"], X,
                                    spec.targets, spec.gamma, epsilon)
    return fgsm_multitask_targeted(models["multitask"], X, spec.targets,
                                   spec.gamma, epsilon)


def _success_fraction(predicted, y_true, kind: str, target) -> float:
    if kind == "untargeted":
        return float(np.mean(predicted != y_true))
    eligible = y_true != target
    if not eligible.any():
        raise ConfigError(
            "targeted ASP undefined: every sample already carries the target label")
    return float(np.mean(predicted[eligible] == target))


def _task_predictions(models, scope: str, X_adv):
    if scope == "multitask":
        matrix = _model_for(models, "multitask").predict(X_adv)
        return {task: matrix[:, TASK_COLUMN[task]] for task in TASKS}
    return {task: _model_for(models, task).predict(X_adv)
            for task in _SCOPE_TASKS[scope]}


def evaluate_asp(models, X, y_device, y_authenticity, spec: AttackSpec,
                 psr_grid_db=DEFAULT_PSR_GRID_DB, *, mean_power=None,
                 include_gaussian: bool = False, seed: int = 0,
                 threads=None) -> list:
    """Sweep one attack over a PSR grid; returns AspPoint rows in grid order.

    ``mean_power`` defaults to the mean per-component power of ``X``
    itself, the set whose perturbation budget the PSR describes. With
    ``include_gaussian`` every grid point also gets equal-budget noise
    rows drawn from a stream derived per (seed, scope, kind, psr), so the
    result is independent of evaluation order and thread count.
    """
    X = check_iq_array(X)
    n = X.shape[0]
    labels = {
        "device": check_label_array(y_device, n) if y_device is not None else None,
        "authenticity": (check_label_array(y_authenticity, n)
                         if y_authenticity is not None else None),
    }
    tasks = _SCOPE_TASKS[spec.scope]
    for task in tasks:
        if labels[task] is None:
            raise ConfigError(f"scope {spec.scope!r} needs {task} labels")
    if spec.clamp_bound is None:
        raise ConfigError("spec.clamp_bound must be set before evaluation")
    if mean_power is None:
        mean_power = mean_signal_power(X)
    targets = {task: spec.targets[TASK_COLUMN[task]] for task in tasks} \
        if spec.kind == "targeted" else {task: None for task in tasks}

    def perturbed(epsilon, baseline):
        if epsilon == 0.0:
            return X
        if baseline == "gaussian":
            rng = derive_rng(seed, "gaussian", spec.scope, spec.kind, f"{epsilon:.17g}")
            delta = gaussian_baseline(X.shape, epsilon, rng)
        else:
            delta = craft_perturbation(spec, models, X, labels["device"],
                                       labels["authenticity"], epsilon)
        return apply_and_clamp(X, delta, spec.clamp_bound)

    def at_psr(psr_db):
        epsilon = psr_to_epsilon(psr_db, mean_power)
        points = []
        for baseline in ("fgsm", "gaussian") if include_gaussian else ("fgsm",):
            predictions = _task_predictions(models, spec.scope, perturbed(epsilon, baseline))
            for task in tasks:
                asp = _success_fraction(predictions[task], labels[task],
                                        spec.kind, targets[task])
                points.append(AspPoint(float(psr_db), spec.scope, spec.kind,
                                       task, asp, baseline))
        return points

    grid = list(psr_grid_db)
    if threads is not None and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_psr = list(pool.map(at_psr, grid))
    else:
        per_psr = [at_psr(psr) for psr in grid]
    return [point for points in per_psr for point in points]


def default_threads() -> int:
    """Worker count for PSR sweeps, overridable via LORA_ADVSEC_THREADS."""
    raw = os.environ.get("LORA_ADVSEC_THREADS", "")
    if raw:
        try:
            threads = int(raw)
        except ValueError as exc:
            raise ConfigError(f"LORA_ADVSEC_THREADS must be an integer, got {raw!r}") from exc
        if threads < 1:
            raise ConfigError(f"LORA_ADVSEC_THREADS must be >= 1, got {threads}")
        return threads
    return 1


def write_asp_csv(points, path, append: bool = False) -> None:
    """Write curve points as CSV; ``append`` adds rows without a new header."""
    fresh = not append or not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a" if append else "w", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(ASP_CSV_COLUMNS)
        for p in points:
            writer.writerow([p.psr_db, p.scope, p.kind, p.task, p.asp, p.baseline])


def read_asp_csv(path) -> list:
    """Parse a curve CSV back into AspPoint rows."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != ASP_CSV_COLUMNS:
        raise ConfigError(f"{path}: expected header {','.join(ASP_CSV_COLUMNS)}")
    return [AspPoint(float(r[0]), r[1], r[2], r[3], float(r[4]), r[5])
            for r in rows[1:]]
