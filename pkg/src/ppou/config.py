"""Declarative run configuration loaded from YAML."""

from __future__ import annotations

import copy
import csv
import inspect
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from . import data
from .estimator import PPOURegressor

MODEL_KEYS = {
    "n_partitions", "degree", "basis", "architecture", "latent_dim", "encoder_depth",
    "encoder_width", "classifier_depth", "classifier_width", "activation", "residual", "standardize",
}
TRAIN_KEYS = set(inspect.signature(PPOURegressor).parameters) - MODEL_KEYS - {"random_state", "workers"}
DATASET_KEYS = {"generator", "params", "csv", "test_fraction", "split_seed"}
TOP_KEYS = {"seed", "workers", "out", "dataset", "model", "train"}
GENERATOR_PARAMS = {
    name: set(inspect.signature(fn).parameters) for name, fn in data.GENERATORS.items()
}


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class DatasetConfig:
    generator: str | None = None
    params: dict = field(default_factory=dict)
    csv: str | None = None
    test_fraction: float | None = 0.2
    split_seed: int = 0


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    seed: int = 0
    workers: int = 1
    out: str = "run"

    @classmethod
    def from_dict(cls, raw: dict) -> RunConfig:
        raw = copy.deepcopy(raw or {})
        _check_keys(raw, TOP_KEYS, "")
        ds = raw.pop("dataset", None) or {}
        _check_keys(ds, DATASET_KEYS, "dataset.")
        model = raw.pop("model", None) or {}
        _check_keys(model, MODEL_KEYS, "model.")
        train = raw.pop("train", None) or {}
        _check_keys(train, TRAIN_KEYS, "train.")
        cfg = cls(dataset=DatasetConfig(**ds), model=model, train=train, **raw)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def estimator_params(self) -> dict:
        return {**self.model, **self.train, "random_state": self.seed, "workers": self.workers}

    def build_estimator(self) -> PPOURegressor:
        return PPOURegressor(**self.estimator_params())

    def input_dim(self) -> int:
        ds = self.dataset
        if ds.csv is not None:
            with open(ds.csv, newline="") as fh:
                header = next(csv.reader(fh), [])
            return sum(1 for h in header if data._XCOL.match(h.strip()))
        p = ds.params
        return {"sine": 1, "trefoil": 3, "swissroll": 3}.get(ds.generator) or int(p.get("d", 10))

    def validate(self) -> None:
        ds = self.dataset
        if (ds.generator is None) == (ds.csv is None):
            raise ConfigError("dataset", "set exactly one of 'generator' or 'csv'")
        if ds.generator is not None:
            if ds.generator not in data.GENERATORS:
                raise ConfigError("dataset.generator", f"unknown generator {ds.generator!r}")
            _check_keys(ds.params, GENERATOR_PARAMS[ds.generator], "dataset.params.")
        elif not Path(ds.csv).exists():
            raise ConfigError("dataset.csv", f"no such file {ds.csv!r}")
        if ds.test_fraction is not None and not 0 < ds.test_fraction < 1:
            raise ConfigError("dataset.test_fraction", "must lie strictly between 0 and 1")
        if self.workers < 1:
            raise ConfigError("workers", "must be >= 1")

        d = self.input_dim()
        m = {**{k: v.default for k, v in inspect.signature(PPOURegressor).parameters.items()}, **self.model}
        arch = m["architecture"]
        if arch not in ("basic", "serial", "parallel"):
            raise ConfigError("model.architecture", f"unknown architecture {arch!r}")
        latent = m["latent_dim"]
        if arch == "basic" and latent not in (None, d):
            raise ConfigError("model.latent_dim", f"basic architecture works on the {d} inputs directly, got {latent}")
        if arch != "basic" and (latent is None or latent < 1):
            raise ConfigError("model.latent_dim", f"{arch} architecture needs a positive latent_dim")
        for key in ("n_partitions", "encoder_depth", "encoder_width", "classifier_depth", "classifier_width"):
            if int(m[key]) < 1:
                raise ConfigError(f"model.{key}", "must be >= 1")
        if int(m["degree"]) < 0:
            raise ConfigError("model.degree", "must be >= 0")
        if m["basis"] not in ("chebyshev", "monomial"):
            raise ConfigError("model.basis", f"unknown basis family {m['basis']!r}")
        if m["basis"] == "chebyshev" and arch == "basic" and m["standardize"] is False:
            raise ConfigError("model.standardize", "Chebyshev bases on raw inputs need standardize: true")
        try:
            self.build_estimator().train_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError("train", str(exc)) from None


def _check_keys(section: dict, allowed: set, prefix: str) -> None:
    if not isinstance(section, dict):
        raise ConfigError(prefix.rstrip(".") or "<root>", "expected a mapping")
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(prefix + unknown[0], f"unknown key (allowed: {sorted(allowed)})")


_FLOAT = re.compile(r"^[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)$")


def _numbers(node):
    """Read ``1e-4`` style scalars as floats; YAML 1.1 leaves them as strings."""
    if isinstance(node, dict):
        return {k: _numbers(v) for k, v in node.items()}
    if isinstance(node, list):
        return [_numbers(v) for v in node]
    if isinstance(node, str) and _FLOAT.match(node):
        return float(node)
    return node


def set_path(raw: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = raw
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a YAML config and apply ``{"a.b.c": value}`` overrides."""
    raw = {}
    if path is not None:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    for key, value in (overrides or {}).items():
        set_path(raw, key, value)
    return RunConfig.from_dict(_numbers(raw))
