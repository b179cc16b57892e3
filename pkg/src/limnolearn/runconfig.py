"""Run configuration: nested YAML sections, strict keys, stable hash."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml


@dataclass
class SimSection:
    n_lakes: int = 16
    years: int = 2
    depth_min: float = 4.0
    depth_max: float = 30.0
    area_min: float = 1e4
    area_max: float = 1e7
    driver_noise: float = 1.0


@dataclass
class ModelSection:
    embed_dim: int = 8
    hidden: int = 32
    sequence_length: int = 60
    w_do: float = 1.0
    depths_per_lake: int = 5


@dataclass
class RdaSection:
    gamma: float = 3e-3
    kappa: float = 1e-3
    w0: float = 1.0


@dataclass
class EvolutionSection:
    n: int = 4
    tau: int = 200
    sigma0: float = 0.2
    sigma_min: float = 0.01
    sigma_max: float = 0.5
    lambda_mut: float = 0.05
    window: int = 5
    factor: float = 0.85
    max_generations: int = 30
    learning_rate: float = 3e-3
    batch_temperature: int = 2
    batch_oxygen: int = 1
    val_fraction: float = 0.2


@dataclass
class FinetuneSection:
    n_lakes: int = 10
    n_eval_lakes: int = 5
    years: int = 2
    depth_min: float = 4.0
    depth_max: float = 10.0
    obs_fraction: float = 0.02
    obs_noise_temperature: float = 0.5
    obs_noise_oxygen: float = 0.4
    truth_perturbation: float = 0.15
    lambda_phy: float = 0.1
    tau_ec_fraction: float = 0.005
    tau_mc: float = 0.1
    epochs: int = 4
    learning_rate: float = 2e-3
    per_lake: bool = False
    variants: tuple = ("pgfm", "no_pretrain", "no_physics", "no_that",
                       "baseline")


@dataclass
class EvalSection:
    window: int = 60


@dataclass
class IoSection:
    out_dir: str = "runs/default"


@dataclass
class RunConfig:
    seed: int = 0
    workers: int = 0   # 0 = use all available cores
    sim: SimSection = field(default_factory=SimSection)
    model: ModelSection = field(default_factory=ModelSection)
    rda: RdaSection = field(default_factory=RdaSection)
    evolution: EvolutionSection = field(default_factory=EvolutionSection)
    finetune: FinetuneSection = field(default_factory=FinetuneSection)
    eval: EvalSection = field(default_factory=EvalSection)
    io: IoSection = field(default_factory=IoSection)

    def config_hash(self) -> str:
        """Stable digest of everything that affects results (io excluded)."""
        payload = dataclasses.asdict(self)
        payload.pop("io")
        payload.pop("workers")
        blob = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_yaml(self) -> str:
        return yaml.safe_dump(dataclasses.asdict(self), sort_keys=True)


_SECTIONS = {f.name for f in dataclasses.fields(RunConfig)
             if dataclasses.is_dataclass(type(getattr(RunConfig(), f.name)))}


def _apply_section(instance, values: dict, section: str):
    known = {f.name for f in dataclasses.fields(instance)}
    for key, value in values.items():
        if key not in known:
            raise KeyError(f"unknown config key {section}.{key}")
        current = getattr(instance, key)
        if isinstance(current, tuple):
            value = tuple(value)
        setattr(instance, key, value)
    return instance


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from YAML plus flat overrides ({'seed': 1, ...}).

    Unknown keys raise; every section key must exist in the schema.
    """
    config = RunConfig()
    data = {}
    if path is not None:
        data = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(data, dict):
            raise ValueError(f"config {path}: top level must be a mapping")
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ValueError(f"config section {key} must be a mapping")
            _apply_section(getattr(config, key), value, key)
        elif key in ("seed", "workers"):
            setattr(config, key, int(value))
        else:
            raise KeyError(f"unknown config section {key!r}")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in ("seed", "workers"):
            setattr(config, key, int(value))
        elif key == "out_dir":
            config.io.out_dir = str(value)
        else:
            raise KeyError(f"unknown override {key!r}")
    return config
