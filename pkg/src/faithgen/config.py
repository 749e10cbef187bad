"""Run configuration: one nested YAML file, defaults matching the reference fine-tuning setup."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    train: str | None = None
    valid: str | None = None
    test: str | None = None


@dataclass
class ModelSection:
    embed_dim: int = 128
    hidden_dim: int = 128
    ffn_dim: int = 256
    num_layers: int = 2
    num_heads: int = 4
    dropout: float = 0.1
    max_source_len: int = 600
    max_target_len: int = 128


@dataclass
class TrainSection:
    ablation: str = "full"
    learning_rate: float = 3e-5
    batch_size: int = 32
    epochs: int = 5
    cl_weight: float = 1.0
    temperature: float = 1.0
    include_positive_in_denominator: bool = False
    clip_norm: float | None = None
    dtype: str = "float32"


@dataclass
class SamplerSection:
    positives: int = 2
    negatives: int = 4
    heuristic: str = "random"
    paraphraser: str = "offline"
    endpoint: str | None = None
    timeout: float = 30.0


@dataclass
class ScorerSection:
    name: str = "lexical_overlap"
    stopwords: str | None = None
    buckets: int = 3


@dataclass
class JudgeSection:
    kind: str = "mock"
    endpoint: str | None = None
    model: str = "gpt-3.5-turbo"
    api_key_env: str = "OPENAI_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    max_in_flight: int = 4
    n_samples: int = 50
    templates: str | None = None


@dataclass
class DecodeSection:
    mode: str = "greedy"
    beam_width: int = 4
    tag: str = "hal_low"
    split: str = "test"


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    scorer: ScorerSection = field(default_factory=ScorerSection)
    judge: JudgeSection = field(default_factory=JudgeSection)
    decode: DecodeSection = field(default_factory=DecodeSection)
    output_dir: str | None = None

    def validate(self) -> None:
        from .training import Ablation

        try:
            Ablation(self.train.ablation)
        except ValueError:
            raise ConfigError(f"unknown ablation {self.train.ablation!r}") from None
        if self.scorer.buckets != 3:
            raise ConfigError("scorer.buckets is fixed at 3")
        if self.sampler.heuristic not in ("random", "house"):
            raise ConfigError(f"sampler.heuristic must be 'random' or 'house', got {self.sampler.heuristic!r}")
        if self.sampler.paraphraser not in ("offline", "remote"):
            raise ConfigError("sampler.paraphraser must be 'offline' or 'remote'")
        if self.sampler.paraphraser == "remote" and not self.sampler.endpoint:
            raise ConfigError("remote paraphraser needs sampler.endpoint")
        if self.sampler.positives < 1 or self.sampler.negatives < 1:
            raise ConfigError("sampler counts must be >= 1")
        if self.judge.kind not in ("mock", "remote", "echo"):
            raise ConfigError(f"judge.kind must be mock, echo or remote, got {self.judge.kind!r}")
        if self.judge.kind == "remote" and not self.judge.endpoint:
            raise ConfigError("remote judge needs judge.endpoint")
        if self.decode.mode not in ("greedy", "beam"):
            raise ConfigError("decode.mode must be greedy or beam")
        if self.decode.split not in ("train", "valid", "test"):
            raise ConfigError("decode.split must be train, valid or test")
        if self.train.dtype not in ("float32", "float64"):
            raise ConfigError("train.dtype must be float32 or float64")
        from .control import Hal

        try:
            Hal.parse(self.decode.tag)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return asdict(self)

    def section_hash(self, *names: str) -> str:
        d = self.to_dict()
        return _hash({n: d[n] for n in names})

    @property
    def hash(self) -> str:
        return _hash(self.to_dict())


def _hash(obj: Any) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _build(cls, values: dict | None, where: str):
    values = values or {}
    if not isinstance(values, dict):
        raise ConfigError(f"{where}: expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(values) - set(fields)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    for name, value in values.items():
        f = fields[name]
        factory = f.default_factory
        if factory is not dataclasses.MISSING and dataclasses.is_dataclass(factory):
            kwargs[name] = _build(factory, value, f"{where}.{name}" if where else name)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(values: dict | None) -> RunConfig:
    cfg = _build(RunConfig, values, "config")
    cfg.validate()
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return config_from_dict({})
    try:
        values = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    cfg = config_from_dict(values)
    # dataset paths are relative to the config file
    base = Path(path).resolve().parent
    for split in ("train", "valid", "test"):
        p = getattr(cfg.data, split)
        if p is not None and not Path(p).is_absolute():
            setattr(cfg.data, split, str(base / p))
    return cfg


def dump_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False), encoding="utf-8")
