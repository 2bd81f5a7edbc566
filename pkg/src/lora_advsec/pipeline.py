"""Experiment orchestration: config handling, pipeline stages, manifest.

A run executes gen-data, spoof, train, attack, defend, report in order
inside one output directory. Every stage reads its inputs back from disk,
so a stage re-run from the command line reproduces exactly what the full
pipeline would have produced, and the manifest records content hashes of
everything read and written. One seed governs all stages through derived,
label-keyed substreams; two runs with the same resolved config produce
byte-identical artifacts.

Artifacts: legit.iq, dataset.iq, spoof.json, model_*.lann, asp_curves.csv,
defended_*.lann, defense.csv, accuracy.csv, manifest.json.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import json
from pathlib import Path

import jsonschema
import numpy as np

from lora_advsec import __version__
from lora_advsec.attacks import (
    _SCOPE_MODELS,
    _task_predictions,
    KINDS,
    SCOPES,
    AttackSpec,
    default_threads,
    evaluate_asp,
    write_asp_csv,
)
from lora_advsec.data import (
    DEFAULT_DEVICE_PROFILES,
    DEFAULT_ROGUE_TRANSFORMS,
    Dataset,
    DeviceProfile,
    generate_legitimate,
    generate_rogue,
    load_dataset,
    mean_signal_power,
    save_dataset,
    split,
)
from lora_advsec.defense import (
    DefenseConfig,
    adversarial_training,
    evaluate_defense,
    write_defense_csv,
)
from lora_advsec.errors import ConfigError
from lora_advsec.models import (
    MultiTaskClassifier,
    SingleTaskClassifier,
    compute_metrics,
)
from lora_advsec.rng import derive_rng
from lora_advsec.spoof import GaussianKde, RogueTransform, jsd

STAGES = ("gen-data", "spoof", "train", "attack", "defend", "report")

ACCURACY_CSV_COLUMNS = ("arch", "mode", "task", "subset", "overall",
                        "acc_class0", "acc_class1", "n_class0", "n_class1")

DEFAULT_CONFIG = {
    "seed": 0,
    "arch": "cnn",
    "mode": "single",
    "dataset": {
        "path": None,
        "n_total": 5000,
        "train_fraction": 0.8,
        "kde_bandwidth": 1e-3,
        "profiles": [dataclasses.asdict(p) for p in DEFAULT_DEVICE_PROFILES],
        "rogue_transforms": [dataclasses.asdict(t) for t in DEFAULT_ROGUE_TRANSFORMS],
    },
    "train": {
        "epochs": 50,
        "batch_size": 64,
        "learning_rate": 1e-3,
        "validation_fraction": 0.1,
        "task_weights": [0.5, 0.5],
    },
    "attack": {
        "kinds": ["untargeted", "targeted"],
        "scopes": None,
        "gamma": [0.5, 0.5],
        "targets": [0, 0],
        "psr_grid_db": [float(v) for v in range(-20, 1)],
        "include_gaussian": True,
    },
    "defense": {
        "enabled": True,
        "psr_db": -3.0,
        "ratio": 1.0,
        "scopes": None,
    },
}

_WEIGHT_PAIR = {
    "type": "array", "minItems": 2, "maxItems": 2,
    "items": {"type": "number", "minimum": 0, "maximum": 1},
}

CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "required": ["seed", "arch", "mode", "dataset", "train", "attack", "defense"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "arch": {"enum": ["cnn", "fnn"]},
        "mode": {"enum": ["single", "multitask"]},
        "dataset": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "path": {"type": ["string", "null"]},
                "n_total": {"type": "integer", "minimum": 4},
                "train_fraction": {"type": "number",
                                   "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "kde_bandwidth": {"type": "number", "exclusiveMinimum": 0},
                "profiles": {
                    "type": "array", "minItems": 2, "maxItems": 2,
                    "items": {
                        "type": "object", "additionalProperties": False,
                        "required": ["gain_db", "phase_offset_rad", "cfo_norm"],
                        "properties": {
                            "gain_db": {"type": "number"},
                            "phase_offset_rad": {"type": "number"},
                            "cfo_norm": {"type": "number"},
                            "iq_gain_imbalance": {"type": "number", "exclusiveMinimum": 0},
                            "snr_db": {"type": ["number", "null"]},
                        },
                    },
                },
                "rogue_transforms": {
                    "type": "array", "minItems": 2, "maxItems": 2,
                    "items": {
                        "type": "object", "additionalProperties": False,
                        "required": ["gain_offset_db", "phase_max_rad"],
                        "properties": {
                            "gain_offset_db": {"type": "number"},
                            "phase_max_rad": {"type": "number", "minimum": 0},
                        },
                    },
                },
            },
        },
        "train": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "epochs": {"type": "integer", "minimum": 1},
                "batch_size": {"type": "integer", "minimum": 1},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "validation_fraction": {"type": "number", "minimum": 0,
                                        "exclusiveMaximum": 1},
                "task_weights": _WEIGHT_PAIR,
            },
        },
        "attack": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "kinds": {"type": "array", "minItems": 1, "uniqueItems": True,
                          "items": {"enum": list(KINDS)}},
                "scopes": {"type": ["array", "null"], "uniqueItems": True,
                           "items": {"enum": list(SCOPES)}},
                "gamma": _WEIGHT_PAIR,
                "targets": {"type": "array", "minItems": 2, "maxItems": 2,
                            "items": {"enum": [0, 1]}},
                "psr_grid_db": {"type": "array", "minItems": 1,
                                "items": {"type": "number"}},
                "include_gaussian": {"type": "boolean"},
            },
        },
        "defense": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "psr_db": {"type": "number"},
                "ratio": {"type": "number", "exclusiveMinimum": 0},
                "scopes": {"type": ["array", "null"], "uniqueItems": True,
                           "items": {"enum": list(SCOPES)}},
            },
        },
    },
}


class StageError(RuntimeError):
    """A pipeline stage failed; the original exception is chained as cause."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


def default_config() -> dict:
    return copy.deepcopy(DEFAULT_CONFIG)


def _deep_merge(base, override):
    if isinstance(base, dict) and isinstance(override, dict):
        merged = dict(base)
        for key, value in override.items():
            merged[key] = _deep_merge(base.get(key), value)
        return merged
    return copy.deepcopy(override)


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Resolve a run config: defaults, then the JSON file, then overrides."""
    cfg = default_config()
    if path is not None:
        try:
            text = Path(path).read_text()
        except FileNotFoundError as exc:
            raise ConfigError(f"{path}: config file not found") from exc
        try:
            user = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        cfg = _deep_merge(cfg, user)
    if overrides:
        cfg = _deep_merge(cfg, overrides)
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "config"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from exc
    return cfg


def attack_scopes(cfg) -> tuple:
    scopes = cfg["attack"]["scopes"]
    if scopes is not None:
        return tuple(scopes)
    return ("device", "authenticity", "hybrid") if cfg["mode"] == "single" \
        else ("multitask",)


def defense_scopes(cfg) -> tuple:
    scopes = cfg["defense"]["scopes"]
    if scopes is not None:
        return tuple(scopes)
    return ("device",) if cfg["mode"] == "single" else ("multitask",)


# ------------------------------------------------------------------- helpers

def _hash_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return f"sha256:{digest.hexdigest()}"


def _dataset_path(cfg, out: Path) -> Path:
    external = cfg["dataset"]["path"]
    return Path(external) if external else out / "dataset.iq"


def _load_split(cfg, out: Path):
    path = _dataset_path(cfg, out)
    data = load_dataset(path)
    train, test = split(data, cfg["dataset"]["train_fraction"], cfg["seed"])
    return path, train, test


def _model_files(cfg) -> dict:
    if cfg["mode"] == "single":
        return {"device": "model_device.lann", "authenticity": "model_authenticity.lann"}
    return {"multitask": "model_multitask.lann"}


def _load_models(cfg, out: Path) -> dict:
    models = {}
    for role, name in _model_files(cfg).items():
        loader = MultiTaskClassifier if role == "multitask" else SingleTaskClassifier
        models[role] = loader.load(out / name)
    return models


def _single_classifier(cfg, task: str) -> SingleTaskClassifier:
    tr = cfg["train"]
    return SingleTaskClassifier(
        arch=cfg["arch"], task=task, epochs=tr["epochs"], batch_size=tr["batch_size"],
        learning_rate=tr["learning_rate"], validation_fraction=tr["validation_fraction"],
        seed=cfg["seed"])


def _multitask_classifier(cfg) -> MultiTaskClassifier:
    tr = cfg["train"]
    return MultiTaskClassifier(
        arch=cfg["arch"], epochs=tr["epochs"], batch_size=tr["batch_size"],
        learning_rate=tr["learning_rate"], validation_fraction=tr["validation_fraction"],
        task_weights=tuple(tr["task_weights"]), seed=cfg["seed"])


def _write_json(payload: dict, path: Path) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# -------------------------------------------------------------------- stages

def stage_gen_data(cfg, out: Path):
    """Legitimate transmissions only, written to legit.iq."""
    ds = cfg["dataset"]
    if ds["n_total"] % 4 != 0:
        raise ConfigError("dataset.n_total must be a multiple of 4")
    profiles = [DeviceProfile(**p) for p in ds["profiles"]]
    legit = generate_legitimate(profiles, ds["n_total"] // 4, cfg["seed"])
    save_dataset(legit, out / "legit.iq")
    return {}, {"legit.iq": _hash_file(out / "legit.iq")}


def stage_spoof(cfg, out: Path):
    """KDE-resample each device, apply rogue deviations, merge, score fidelity."""
    ds = cfg["dataset"]
    legit_path = out / "legit.iq"
    legit = load_dataset(legit_path)
    transforms = [RogueTransform(**t) for t in ds["rogue_transforms"]]
    rogue = generate_rogue(legit, transforms, ds["kde_bandwidth"], cfg["seed"])
    full = Dataset(
        np.concatenate([legit.iq, rogue.iq]),
        np.concatenate([legit.device, rogue.device]),
        np.concatenate([legit.authenticity, rogue.authenticity]),
        {"seed": cfg["seed"]},
    )
    save_dataset(full, out / "dataset.iq")

    # fidelity of the KDE itself: legitimate constellation vs fresh draws,
    # measured before the deliberate rogue gain/phase deviations
    fidelity = {}
    for d in range(len(transforms)):
        cell = legit.iq[legit.device == d]
        kde = GaussianKde(bandwidth=ds["kde_bandwidth"]).fit(cell.reshape(len(cell), -1))
        draws = kde.sample(len(cell), derive_rng(cfg["seed"], "fidelity", f"device{d}"))
        fidelity[f"device{d}"] = jsd(cell, draws.reshape(-1, 2, 32))
    _write_json({"kde_bandwidth": ds["kde_bandwidth"], "jsd": fidelity},
                out / "spoof.json")
    return ({"legit.iq": _hash_file(legit_path)},
            {name: _hash_file(out / name) for name in ("dataset.iq", "spoof.json")})


def stage_train(cfg, out: Path):
    path, train, _ = _load_split(cfg, out)
    outputs = {}
    if cfg["mode"] == "single":
        for task in ("device", "authenticity"):
            model = _single_classifier(cfg, task)
            model.fit(train.iq, train.labels(task))
            name = f"model_{task}.lann"
            model.save(out / name)
            outputs[name] = _hash_file(out / name)
    else:
        model = _multitask_classifier(cfg)
        model.fit(train.iq, np.stack([train.device, train.authenticity], axis=1))
        model.save(out / "model_multitask.lann")
        outputs["model_multitask.lann"] = _hash_file(out / "model_multitask.lann")
    return {path.name: _hash_file(path)}, outputs


def stage_attack(cfg, out: Path, psr_grid=None, scopes=None, kinds=None,
                 append: bool = False):
    """PSR sweep of every configured (kind, scope) pair into asp_curves.csv.

    The explicit arguments narrow the sweep for single-point CLI runs, in
    which case rows are appended to an existing file.
    """
    at = cfg["attack"]
    path, train, test = _load_split(cfg, out)
    models = _load_models(cfg, out)
    inputs = {path.name: _hash_file(path)}
    for role, name in _model_files(cfg).items():
        inputs[name] = _hash_file(out / name)

    bound = float(np.max(np.abs(train.iq)))
    power = mean_signal_power(test.iq)
    grid = [float(v) for v in (psr_grid if psr_grid is not None else at["psr_grid_db"])]
    rows = []
    for kind in (kinds if kinds is not None else at["kinds"]):
        for scope in (scopes if scopes is not None else attack_scopes(cfg)):
            spec = AttackSpec(
                kind=kind, scope=scope, gamma=tuple(at["gamma"]),
                targets=tuple(at["targets"]) if kind == "targeted" else None,
                clamp_bound=bound)
            rows.extend(evaluate_asp(
                models, test.iq, test.device, test.authenticity, spec, grid,
                mean_power=power, include_gaussian=at["include_gaussian"],
                seed=cfg["seed"], threads=default_threads()))
    write_asp_csv(rows, out / "asp_curves.csv", append=append)
    return inputs, {"asp_curves.csv": _hash_file(out / "asp_curves.csv")}


def stage_defend(cfg, out: Path):
    """Adversarially retrain each defended scope and report before/after ASP."""
    df = cfg["defense"]
    path, train, test = _load_split(cfg, out)
    models = _load_models(cfg, out)
    inputs = {path.name: _hash_file(path)}
    for role, name in _model_files(cfg).items():
        inputs[name] = _hash_file(out / name)

    bound = float(np.max(np.abs(train.iq)))
    train_power = mean_signal_power(train.iq)
    test_power = mean_signal_power(test.iq)
    rows, outputs = [], {}
    for scope in defense_scopes(cfg):
        missing = [r for r in _SCOPE_MODELS[scope] if r not in models]
        if missing:
            raise ConfigError(
                f"defense scope {scope!r} needs models {missing} not trained in "
                f"mode {cfg['mode']!r}")
        attack = AttackSpec(kind="untargeted", scope=scope,
                            gamma=tuple(cfg["attack"]["gamma"]),
                            psr_db=df["psr_db"], clamp_bound=bound)
        config = DefenseConfig(attack, ratio=df["ratio"])
        robust_models = dict(models)
        for role in _SCOPE_MODELS[scope]:
            partners = {r: models[r] for r in _SCOPE_MODELS[scope] if r != role}
            robust = adversarial_training(
                models[role], train.iq, train.device, train.authenticity, config,
                mean_power=train_power, partner_models=partners)
            name = f"defended_{scope}.lann" if role == scope \
                else f"defended_{scope}_{role}.lann"
            robust.save(out / name)
            outputs[name] = _hash_file(out / name)
            robust_models[role] = robust
        rows.extend(evaluate_defense(
            robust_models, models, test.iq, test.device, test.authenticity,
            attack, mean_power=test_power))
    write_defense_csv(rows, out / "defense.csv")
    outputs["defense.csv"] = _hash_file(out / "defense.csv")
    return inputs, outputs


def stage_report(cfg, out: Path):
    """Clean-accuracy tables: overall plus per-class for the four blocks.

    Blocks: device task on the full test split, on legitimate-only and
    rogue-only subsets, and the authenticity task on the full split.
    """
    path, _, test = _load_split(cfg, out)
    models = _load_models(cfg, out)
    inputs = {path.name: _hash_file(path)}
    for role, name in _model_files(cfg).items():
        inputs[name] = _hash_file(out / name)

    view_scope = "hybrid" if cfg["mode"] == "single" else "multitask"
    predictions = _task_predictions(models, view_scope, test.iq)
    legit = test.authenticity == 0
    blocks = (
        ("device", "all", slice(None)),
        ("device", "legitimate", legit),
        ("device", "rogue", ~legit),
        ("authenticity", "all", slice(None)),
    )
    with open(out / "accuracy.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ACCURACY_CSV_COLUMNS)
        for task, subset, mask in blocks:
            metrics = compute_metrics(test.labels(task)[mask], predictions[task][mask])
            writer.writerow([cfg["arch"], cfg["mode"], task, subset, metrics.overall,
                             metrics.per_class[0], metrics.per_class[1],
                             metrics.support[0], metrics.support[1]])
    return inputs, {"accuracy.csv": _hash_file(out / "accuracy.csv")}


_STAGE_FUNCTIONS = {
    "gen-data": stage_gen_data,
    "spoof": stage_spoof,
    "train": stage_train,
    "attack": stage_attack,
    "defend": stage_defend,
    "report": stage_report,
}


def run_pipeline(cfg, out) -> dict:
    """Run all stages into ``out`` and write manifest.json.

    An external dataset path skips gen-data and spoof (its content hash is
    recorded instead); a disabled defense skips that stage. On a stage
    failure the manifest is still written, with that stage marked failed
    and unreached stages left incomplete, then a StageError is raised.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    external = cfg["dataset"]["path"]
    if external and not Path(external).is_file():
        raise ConfigError(f"{external}: dataset file not found")
    manifest = {
        "library_version": __version__,
        "seed": cfg["seed"],
        "config": cfg,
        "stages": {stage: {"status": "incomplete"} for stage in STAGES},
    }
    for stage in STAGES:
        if stage in ("gen-data", "spoof") and external:
            record = {"status": "skipped"}
            if stage == "spoof":
                record["inputs"] = {str(external): _hash_file(external)}
            manifest["stages"][stage] = record
            continue
        if stage == "defend" and not cfg["defense"]["enabled"]:
            manifest["stages"][stage] = {"status": "skipped"}
            continue
        try:
            inputs, outputs = _STAGE_FUNCTIONS[stage](cfg, out)
        except Exception as exc:
            manifest["stages"][stage] = {
                "status": "failed", "error": f"{type(exc).__name__}: {exc}"}
            _write_json(manifest, out / "manifest.json")
            raise StageError(stage, exc) from exc
        manifest["stages"][stage] = {"status": "complete", "inputs": inputs,
                                     "outputs": outputs}
    _write_json(manifest, out / "manifest.json")
    return manifest
