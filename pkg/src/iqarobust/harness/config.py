"""Run configuration: YAML schema, validation, environment overrides and digest.

Schema (unknown keys are rejected; errors name the offending key)::

    name: fixture                 # required
    seed: 0                       # default seed for every attack spec
    output_dir: runs/fixture      # relative to the working directory
    data_root: .                  # dataset paths are relative to this; default: config's directory
    workers: 1                    # bounded worker pool size
    persist_images: false         # also write attacked images (8-bit PNG) per cell
    primary_metric: tiny-cnn-nr   # target domain of the inter-metric transport; default first metric
    calibration: calibration      # dataset id (role calibration) defining each metric's score range
    metrics:                      # registry names, or {name, weights_dir}
      - tiny-cnn-nr
    datasets:
      - {id: test, role: test, path: test, kind: image-set}   # also: files, resolution
    attacks:
      - kind: ifgsm               # id defaults to the kind
        epsilon: 0.0157
        sweep: {epsilon: [0.0078, 0.0157]}   # optional; expands into one attack per value
      - kind: uap-optimized
        amplitudes: [0.2, 0.4, 0.8]
        trainsets: [train-a]      # default: every train dataset
        extra: {epochs: 10, lr: 0.05}
    eps_provider: {offset: 16.0, gain: 4.0}   # AMI-FGSM quality-to-epsilon provider
    report: {bootstrap_resamples: 10000, transport_grid: 101}

Environment overrides: ``IQAROBUST_OUTPUT_DIR``, ``IQAROBUST_DATA_ROOT``,
``IQAROBUST_WORKERS``.  Paths and worker count do not enter the digest.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from iqarobust.attacks.spec import KINDS, UAP_KINDS, AttackSpec
from iqarobust.harness.datasets import IMAGE_SUFFIXES, DatasetError, DatasetManifest
from iqarobust.metrics import registered_names

ENV_OUTPUT_DIR = "IQAROBUST_OUTPUT_DIR"
ENV_DATA_ROOT = "IQAROBUST_DATA_ROOT"
ENV_WORKERS = "IQAROBUST_WORKERS"

TOP_KEYS = {"name", "seed", "output_dir", "data_root", "workers", "persist_images",
            "primary_metric", "calibration", "metrics", "datasets", "attacks", "eps_provider",
            "report"}
DATASET_KEYS = {"id", "role", "path", "kind", "files", "resolution"}
METRIC_KEYS = {"name", "weights_dir"}
ATTACK_KEYS = {"id", "kind", "epsilon", "alpha", "iterations", "momentum", "seed", "extra",
               "amplitudes", "trainsets", "sweep"}
SWEEPABLE = ("epsilon", "alpha", "iterations", "momentum")
PROVIDER_KEYS = {"offset", "gain"}
REPORT_KEYS = {"bootstrap_resamples", "transport_grid"}
DEFAULT_AMPLITUDES = (0.2, 0.4, 0.8)


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class MetricEntry:
    name: str
    weights_dir: str | None = None


@dataclass(frozen=True)
class AttackEntry:
    """One attack after sweep expansion.  UAP entries carry their version grid."""

    id: str
    spec: AttackSpec  # for UAP kinds: amplitude set to the first amplitude
    amplitudes: tuple = ()
    trainsets: tuple = ()

    @property
    def trainable(self):
        return self.spec.kind in UAP_KINDS

    def version_id(self, trainset, amplitude):
        return f"{self.id}/{trainset}/a{amplitude!r}"

    def versions(self):
        """(attack cell id, trainset, amplitude) for every UAP version; one entry otherwise."""
        if not self.trainable:
            return [(self.id, None, None)]
        return [(self.version_id(t, a), t, a) for t in self.trainsets for a in self.amplitudes]


@dataclass
class RunConfig:
    name: str
    seed: int
    output_dir: Path
    data_root: Path
    workers: int
    persist_images: bool
    primary_metric: str
    calibration: str
    metrics: list[MetricEntry]
    datasets: dict[str, DatasetManifest]
    attacks: list[AttackEntry]
    eps_provider: dict
    report: dict
    source: dict = field(default_factory=dict, repr=False)
    input_hashes: dict = field(default_factory=dict, repr=False)
    digest: str = ""

    def datasets_with_role(self, role):
        return [d for d in self.datasets.values() if d.role == role]

    def metric(self, name):
        for m in self.metrics:
            if m.name == name:
                return m
        raise KeyError(name)

    def attack(self, attack_id):
        for a in self.attacks:
            if a.id == attack_id:
                return a
        raise KeyError(attack_id)

    def semantic(self):
        """Everything that determines results (not paths or worker count)."""
        return {
            "name": self.name,
            "seed": self.seed,
            "primary_metric": self.primary_metric,
            "calibration": self.calibration,
            "metrics": [{"name": m.name, "weights_dir": m.weights_dir} for m in self.metrics],
            "datasets": [{"id": d.id, "role": d.role, "kind": d.kind,
                          "files": d.files, "resolution": d.resolution,
                          "content": self.input_hashes.get(d.id)}
                         for d in self.datasets.values()],
            "attacks": [{"id": a.id, "spec": a.spec.to_dict(), "amplitudes": list(a.amplitudes),
                         "trainsets": list(a.trainsets)} for a in self.attacks],
            "eps_provider": self.eps_provider,
            "report": self.report,
        }

    def to_dict(self):
        d = self.semantic()
        d["config_digest"] = self.digest
        return d


def _require(cond, key, message):
    if not cond:
        raise ConfigError(key, message)


def _check_keys(mapping, allowed, where):
    _require(isinstance(mapping, dict), where, "expected a mapping")
    for k in mapping:
        _require(k in allowed, f"{where}.{k}" if where else k, "unknown key")


def _int(value, key, minimum=None):
    _require(isinstance(value, int) and not isinstance(value, bool), key, f"expected an integer, got {value!r}")
    if minimum is not None:
        _require(value >= minimum, key, f"must be >= {minimum}, got {value}")
    return value


def _number(value, key):
    _require(isinstance(value, (int, float)) and not isinstance(value, bool), key,
             f"expected a number, got {value!r}")
    return float(value)


def digest_of(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _parse_metrics(raw):
    _require(isinstance(raw, list) and raw, "metrics", "expected a non-empty list")
    known = registered_names()
    out = []
    for i, entry in enumerate(raw):
        key = f"metrics[{i}]"
        if isinstance(entry, str):
            entry = {"name": entry}
        _check_keys(entry, METRIC_KEYS, key)
        name = entry.get("name")
        _require(name in known, f"{key}.name",
                 f"unknown metric {name!r}; registered: {', '.join(known)}")
        out.append(MetricEntry(name, entry.get("weights_dir")))
    names = [m.name for m in out]
    _require(len(set(names)) == len(names), "metrics", "duplicate metric names")
    return out


def _parse_datasets(raw, data_root):
    _require(isinstance(raw, list) and raw, "datasets", "expected a non-empty list")
    out = {}
    for i, entry in enumerate(raw):
        key = f"datasets[{i}]"
        _check_keys(entry, DATASET_KEYS, key)
        for req in ("id", "role", "path"):
            _require(req in entry, f"{key}.{req}", "required")
        did = entry["id"]
        _require(isinstance(did, str) and did, f"{key}.id", "expected a non-empty string")
        _require(did not in out, f"{key}.id", f"duplicate dataset id {did!r}")
        path = Path(entry["path"])
        if not path.is_absolute():
            path = data_root / path
        try:
            manifest = DatasetManifest(did, entry["role"], path, entry.get("kind", "image-set"),
                                       entry.get("files"), entry.get("resolution"))
        except DatasetError as exc:
            raise ConfigError(key, str(exc)) from exc
        _require(path.is_dir(), f"{key}.path", f"{path} is not a directory")
        out[did] = manifest
    return out


def _parse_attacks(raw, seed, datasets):
    _require(isinstance(raw, list) and raw, "attacks", "expected a non-empty list")
    train_ids = tuple(d.id for d in datasets.values() if d.role == "train")
    out = []
    for i, entry in enumerate(raw):
        key = f"attacks[{i}]"
        _check_keys(entry, ATTACK_KEYS, key)
        kind = entry.get("kind")
        _require(kind in KINDS, f"{key}.kind",
                 f"unknown attack kind {kind!r}; known: {', '.join(KINDS)}")
        base_id = entry.get("id", kind)
        _require(isinstance(base_id, str) and base_id and "/" not in base_id, f"{key}.id",
                 "expected a non-empty string without '/'")
        params = {p: entry[p] for p in SWEEPABLE if p in entry}
        for p, v in params.items():
            if p == "iterations":
                _int(v, f"{key}.{p}", 0)
            else:
                _number(v, f"{key}.{p}")
        spec_seed = _int(entry.get("seed", seed), f"{key}.seed", 0)
        extra = entry.get("extra", {})
        _require(isinstance(extra, dict), f"{key}.extra", "expected a mapping")
        amplitudes, trainsets = (), ()
        if kind in UAP_KINDS:
            amplitudes = tuple(_number(a, f"{key}.amplitudes")
                               for a in entry.get("amplitudes", DEFAULT_AMPLITUDES))
            _require(amplitudes, f"{key}.amplitudes", "expected at least one amplitude")
            _require(len(set(amplitudes)) == len(amplitudes), f"{key}.amplitudes", "duplicates")
            trainsets = tuple(entry.get("trainsets", train_ids))
            _require(trainsets, f"{key}.trainsets", "no train datasets to train on")
            for t in trainsets:
                _require(t in datasets, f"{key}.trainsets", f"unknown dataset {t!r}")
                _require(datasets[t].role == "train", f"{key}.trainsets",
                         f"dataset {t!r} has role {datasets[t].role!r}, not train")
        else:
            for k in ("amplitudes", "trainsets"):
                _require(k not in entry, f"{key}.{k}", f"only valid for {', '.join(UAP_KINDS)}")
        sweep = entry.get("sweep", {})
        _check_keys(sweep, set(SWEEPABLE), f"{key}.sweep")
        grid = []
        for p, values in sweep.items():
            _require(isinstance(values, list) and values, f"{key}.sweep.{p}",
                     "expected a non-empty list")
            grid.append([(p, v) for v in values])
        for combo in itertools.product(*grid) if grid else [()]:
            combo_params = dict(params)
            combo_params.update(combo)
            attack_id = base_id + "".join(f"[{p}={v!r}]" for p, v in combo)
            try:
                spec = AttackSpec(kind, seed=spec_seed, extra=extra,
                                  amplitude=amplitudes[0] if amplitudes else None,
                                  **combo_params)
                for a in amplitudes:
                    spec.replace(amplitude=a)
            except (TypeError, ValueError) as exc:
                raise ConfigError(key, str(exc)) from exc
            out.append(AttackEntry(attack_id, spec, amplitudes, trainsets))
    ids = [a.id for a in out]
    dup = sorted({x for x in ids if ids.count(x) > 1})
    _require(not dup, "attacks", f"duplicate attack ids {dup}; set distinct 'id' values")
    return out


def file_hashes(manifest):
    """sha256 of every file of a dataset, keyed by path relative to the dataset root."""
    out = {}
    for item in manifest.item_paths():
        paths = ([p for p in sorted(item.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES]
                 if item.is_dir() else [item])
        for p in paths:
            if not p.is_file():
                raise ConfigError(f"datasets.{manifest.id}", f"missing file {p}")
            out[str(p.relative_to(manifest.path))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


def check_leakage(datasets, hashes):
    """No image (by content) may appear in both a train and a test dataset."""
    train_seen = {}
    for d in datasets.values():
        if d.role == "train":
            for rel, h in hashes[d.id].items():
                train_seen.setdefault(h, (d.id, rel))
    for d in datasets.values():
        if d.role != "test":
            continue
        for rel, h in hashes[d.id].items():
            if h in train_seen:
                tid, trel = train_seen[h]
                raise ConfigError(f"datasets.{d.id}",
                                  f"train/test leakage: {rel} is identical to {trel} in train dataset {tid!r}")


def parse_config(raw, base_dir=".", env=None, overrides=None):
    """Validate a raw mapping into a :class:`RunConfig`.

    Precedence for paths and workers: ``overrides`` > environment > file.
    """
    env = os.environ if env is None else env
    overrides = overrides or {}
    _check_keys(raw, TOP_KEYS, "")
    base_dir = Path(base_dir)
    _require(isinstance(raw.get("name"), str) and raw["name"], "name", "required non-empty string")
    name = raw["name"]
    seed = _int(raw.get("seed", 0), "seed", 0)

    data_root = overrides.get("data_root") or env.get(ENV_DATA_ROOT) or raw.get("data_root")
    data_root = base_dir / data_root if data_root else base_dir
    output_dir = Path(overrides.get("output_dir") or env.get(ENV_OUTPUT_DIR)
                      or raw.get("output_dir") or Path("runs") / name)
    workers = overrides.get("workers")
    if workers is None and env.get(ENV_WORKERS):
        try:
            workers = int(env[ENV_WORKERS])
        except ValueError as exc:
            raise ConfigError(ENV_WORKERS, f"expected an integer, got {env[ENV_WORKERS]!r}") from exc
    workers = _int(raw.get("workers", 1) if workers is None else workers, "workers", 1)
    persist = raw.get("persist_images", False)
    _require(isinstance(persist, bool), "persist_images", "expected true or false")

    metrics = _parse_metrics(raw.get("metrics"))
    names = [m.name for m in metrics]
    primary = raw.get("primary_metric", names[0])
    _require(primary in names, "primary_metric", f"{primary!r} is not among the configured metrics")

    datasets = _parse_datasets(raw.get("datasets"), data_root)
    _require(any(d.role == "test" for d in datasets.values()), "datasets", "no dataset has role test")
    calibration = raw.get("calibration")
    _require(calibration in datasets, "calibration", f"unknown dataset {calibration!r}")
    _require(datasets[calibration].role == "calibration", "calibration",
             f"dataset {calibration!r} has role {datasets[calibration].role!r}, not calibration")

    attacks = _parse_attacks(raw.get("attacks"), seed, datasets)

    provider = dict(raw.get("eps_provider", {}))
    _check_keys(provider, PROVIDER_KEYS, "eps_provider")
    provider = {"offset": _number(provider.get("offset", 16.0), "eps_provider.offset"),
                "gain": _number(provider.get("gain", 4.0), "eps_provider.gain")}
    report = dict(raw.get("report", {}))
    _check_keys(report, REPORT_KEYS, "report")
    report = {"bootstrap_resamples": _int(report.get("bootstrap_resamples", 10_000),
                                          "report.bootstrap_resamples", 1),
              "transport_grid": _int(report.get("transport_grid", 101), "report.transport_grid", 2)}

    hashes = {}
    for d in datasets.values():
        try:
            hashes[d.id] = file_hashes(d)
        except DatasetError as exc:
            raise ConfigError(f"datasets.{d.id}", str(exc)) from exc
        _require(hashes[d.id], f"datasets.{d.id}", f"no images under {d.path}")
    check_leakage(datasets, hashes)

    config = RunConfig(name, seed, output_dir, data_root, workers, persist, primary, calibration,
                       metrics, datasets, attacks, provider, report, dict(raw),
                       {k: digest_of(v) for k, v in hashes.items()})
    config.digest = digest_of(config.semantic())
    return config


def load_config(path, env=None, overrides=None):
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config ({exc})") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"invalid YAML ({exc})") from exc
    if raw is None:
        raise ConfigError(str(path), "empty config")
    return parse_config(raw, path.parent, env, overrides)


def fixture_config_path():
    from iqarobust.harness.datasets import FIXTURE_DIR

    return FIXTURE_DIR / "fixture.yaml"
