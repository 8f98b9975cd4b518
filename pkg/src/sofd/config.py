"""Run configuration: TOML file plus dotted ``key=value`` overrides."""

from __future__ import annotations

import copy
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DATA_DIR_ENV = "SOFD_DATA_DIR"
DEFAULT_DATA_FILE = "data.csv"


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    kind: str = "raw"  # raw | prepared | synthetic
    path: str = ""
    speed: int = 1
    known_classes: list[int] = field(default_factory=lambda: [1, 2, 3])
    unknown_class: int = 4
    per_class: int = 1800
    train_frac: float = 0.7
    seed: int = 0
    schema: dict[str, Any] = field(default_factory=dict)


@dataclass
class SyntheticConfig:
    m: int = 17
    separation: float = 6.0
    scale: float = 1.0
    seed: int = 0


@dataclass
class GraphConfig:
    sigma2: float = 10.0
    epsilon: float = 0.5
    use_weights: bool = True
    cheb_order: int = 2


@dataclass
class ModelConfig:
    conv_widths: list[int] = field(default_factory=lambda: [32, 32, 32])
    # hidden fc widths per speed; the output layer (K or K+1) is appended
    fc_hidden: dict[str, list[int]] = field(
        default_factory=lambda: {"1": [64, 16], "2": [64, 16], "default": [64, 8]}
    )

    def hidden_for(self, speed: int) -> list[int]:
        return list(self.fc_hidden.get(str(speed), self.fc_hidden["default"]))


@dataclass
class TrainSection:
    lr: float = 1e-5
    batch_size: int = 64
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class RejectionSection:
    alpha: float = 0.01
    reg: float = 1e-6
    layers: list[int] = field(default_factory=list)  # empty = all fc layers
    positive_boundary: bool = False
    dfn_equals_n: bool = False
    priors: list[float] = field(default_factory=list)  # empty = uniform


@dataclass
class ConsistencySection:
    n_neighbors: int = 6


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train_m0: TrainSection = field(default_factory=TrainSection)
    train_m1: TrainSection = field(default_factory=TrainSection)
    rejection: RejectionSection = field(default_factory=RejectionSection)
    consistency: ConsistencySection = field(default_factory=ConsistencySection)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def hash(self) -> str:
        """Digest of everything that affects results (the output directory does not)."""
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def data_path(self) -> Path:
        if self.dataset.path:
            return Path(self.dataset.path)
        env = os.environ.get(DATA_DIR_ENV)
        if env:
            return Path(env) / DEFAULT_DATA_FILE
        raise ConfigError(f"dataset.path is empty and {DATA_DIR_ENV} is not set")

    def validate(self) -> "RunConfig":
        ds = self.dataset
        if ds.kind not in ("raw", "prepared", "synthetic"):
            raise ConfigError(f"dataset.kind must be raw, prepared or synthetic, got {ds.kind!r}")
        if not 1 <= ds.speed <= 9:
            raise ConfigError(f"dataset.speed must lie in 1..9, got {ds.speed}")
        if ds.unknown_class in ds.known_classes:
            raise ConfigError("dataset.unknown_class is listed among dataset.known_classes")
        if not 0 < ds.train_frac < 1:
            raise ConfigError("dataset.train_frac must lie in (0, 1)")
        if not 0 < self.rejection.alpha < 1:
            raise ConfigError("rejection.alpha must lie in (0, 1)")
        if self.consistency.n_neighbors < 1:
            raise ConfigError("consistency.n_neighbors must be >= 1")
        if self.graph.cheb_order < 1:
            raise ConfigError("graph.cheb_order must be >= 1")
        if "default" not in self.model.fc_hidden:
            raise ConfigError("model.fc_hidden needs a 'default' entry")
        return self


_SECTIONS = {
    "dataset": DatasetConfig, "synthetic": SyntheticConfig, "graph": GraphConfig, "model": ModelConfig,
    "train_m0": TrainSection, "train_m1": TrainSection, "rejection": RejectionSection,
    "consistency": ConsistencySection,
}
# values that are free-form tables rather than sections
_OPAQUE = {("dataset", "schema"), ("model", "fc_hidden")}


def _merge(base: dict, update: dict, path=()) -> None:
    for key, value in update.items():
        if key not in base:
            raise ConfigError(f"unknown config key {'.'.join(path + (key,))!r}")
        if isinstance(base[key], dict) and path + (key,) not in _OPAQUE:
            if not isinstance(value, dict):
                raise ConfigError(f"{'.'.join(path + (key,))} must be a table")
            _merge(base[key], value, path + (key,))
        else:
            _check_type(".".join(path + (key,)), base[key], value)
            base[key] = value


def _check_type(name: str, default: Any, value: Any) -> None:
    want = type(default)
    ok = isinstance(value, want) and not (want is int and isinstance(value, bool))
    if want is float and isinstance(value, int) and not isinstance(value, bool):
        ok = True
    if not ok:
        raise ConfigError(f"{name} must be of type {want.__name__}, got {value!r}")


def _parse_value(text: str) -> Any:
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def _set_dotted(d: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    nested: Any = value
    for k in reversed(keys):
        nested = {k: nested}
    _merge(d, nested)


def from_dict(data: dict, overrides: list[str] | None = None) -> RunConfig:
    base = RunConfig().to_dict()
    _merge(base, copy.deepcopy(data))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, text = item.split("=", 1)
        _set_dotted(base, key.strip(), _parse_value(text.strip()))
    try:
        sections = {name: cls(**base.pop(name)) for name, cls in _SECTIONS.items()}
        cfg = RunConfig(**base, **sections)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> RunConfig:
    data: dict = {}
    if path is not None:
        path = Path(path)
        try:
            data = tomllib.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return from_dict(data, overrides)


def config_keys() -> list[tuple[str, Any]]:
    """Flattened ``(dotted key, default)`` pairs, for help text."""
    out = []

    def walk(d, prefix=()):
        for k, v in d.items():
            if isinstance(v, dict) and prefix + (k,) not in _OPAQUE:
                walk(v, prefix + (k,))
            else:
                out.append((".".join(prefix + (k,)), v))

    walk(RunConfig().to_dict())
    return out


def to_toml(cfg: RunConfig) -> str:
    """Serialize a config back to TOML (config echo)."""
    d = cfg.to_dict()
    lines = []
    for k, v in d.items():
        if not isinstance(v, dict):
            lines.append(f"{k} = {_toml_value(v)}")
    for section, body in d.items():
        if not isinstance(body, dict):
            continue
        lines.append(f"\n[{section}]")
        tables = []
        for k, v in body.items():
            if isinstance(v, dict):
                tables.append((k, v))
            else:
                lines.append(f"{k} = {_toml_value(v)}")
        for k, v in tables:
            lines.append(f"\n[{section}.{k}]")
            for kk, vv in v.items():
                lines.append(f"{json.dumps(kk)} = {_toml_value(vv)}")
    return "\n".join(lines) + "\n"


def _toml_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, dict):
        return "{" + ", ".join(f"{json.dumps(k)} = {_toml_value(x)}" for k, x in v.items()) + "}"
    raise ConfigError(f"cannot serialize {v!r}")
