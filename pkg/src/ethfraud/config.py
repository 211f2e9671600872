"""Run configuration: one JSON document, strict about unknown keys and types."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .joint import JointConfig
from .tasg import DEFAULT_THETA, MODES
from .tlm import EncoderConfig


class ConfigError(ValueError):
    pass


@dataclass
class PathsConfig:
    transactions: str = ""     # empty: <workdir>/input/transactions.csv
    labels: str = ""           # empty: <workdir>/input/labels.csv
    workdir: str = "work"


@dataclass
class CorpusConfig:
    max_transactions: int = 100
    include_unlabeled: bool = True


@dataclass
class PretrainConfig:
    epochs: int = 20
    lr: float = 1e-3
    batch_size: int = 16
    mask_rate: float = 0.15
    clip_norm: float = 1.0


@dataclass
class TasgConfig:
    mode: str = "tfidf"
    theta: float = DEFAULT_THETA

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"tasg mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.theta < 1.0:
            raise ValueError(f"theta must lie in [0, 1), got {self.theta}")


@dataclass
class SynthConfig:
    accounts: int = 1000
    phisher_fraction: float = 0.1
    pair_boost: int = 1


@dataclass
class SweepConfig:
    lambdas: list = field(default_factory=lambda: [round(0.1 * i, 1) for i in range(11)])
    thetas: list = field(default_factory=lambda: [round(0.1 * i, 1) for i in range(10)])


@dataclass
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    tasg: TasgConfig = field(default_factory=TasgConfig)
    joint: JointConfig = field(default_factory=JointConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    seed: int = 42

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @property
    def workdir(self) -> Path:
        return Path(self.paths.workdir)

    @property
    def transactions_path(self) -> Path:
        return Path(self.paths.transactions) if self.paths.transactions else self.workdir / "input" / "transactions.csv"

    @property
    def labels_path(self) -> Path:
        return Path(self.paths.labels) if self.paths.labels else self.workdir / "input" / "labels.csv"


def _coerce(value, default, where: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if value is None and where.endswith("clip_norm"):
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                                  for v in value):
            raise ConfigError(f"{where}: expected a list of numbers, got {value!r}")
        return [float(v) for v in value]
    return value


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    template = cls()
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown keys {unknown}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(template, name)
        path = f"{where}.{name}" if where else name
        kwargs[name] = _build(type(default), value, path) if is_dataclass(default) else _coerce(value, default, path)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "")


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)
