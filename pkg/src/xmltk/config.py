"""Pipeline configuration: one TOML file with a section per module."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .decoder import DecoderConfig
from .search import KnnConfig
from .svm import SvmConfig


class ConfigError(ValueError):
    pass


@dataclass
class Paths:
    train: str = "train.jsonl"
    dev: str = "dev.jsonl"
    test: str = ""
    vocab: str = "vocab.tsv"
    model_dir: str = "models"


@dataclass
class SplitConfig:
    holdout_fraction: float = 0.05


@dataclass
class FeatureConfig:
    min_df: int = 1
    max_df_ratio: float = 1.0
    include_title: bool = True
    ngram_order: int = 1


@dataclass
class IndexConfig:
    k1: float = 1.2
    b: float = 0.75


@dataclass
class EnsembleConfig:
    C: float = 0.1
    max_pairs: int = 50
    decision_threshold: float = -0.0233
    tune: bool = True
    interval: list = field(default_factory=lambda: [-0.5, 0.5])
    steps: int = 201
    band: list = field(default_factory=lambda: [1.9, 2.1])
    normalization: str = "batch"


def desk_decoder() -> DecoderConfig:
    """Decoder settings sized for a laptop run on a few thousand articles."""
    return DecoderConfig(head="gru", loss="ill", order="descending", masked=True, batch_size=32,
                         learning_rate=2e-2, warmup_steps=50, epochs=10, dropout=0.1)


@dataclass
class PipelineConfig:
    seed: int = 13
    paths: Paths = field(default_factory=Paths)
    split: SplitConfig = field(default_factory=SplitConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    svm: SvmConfig = field(default_factory=SvmConfig)
    knn: KnnConfig = field(default_factory=KnnConfig)
    index: IndexConfig = field(default_factory=IndexConfig)
    decoder: DecoderConfig = field(default_factory=desk_decoder)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    base_dir: str = "."

    def path(self, name: str) -> Path:
        value = getattr(self.paths, name)
        if not value:
            raise ConfigError(f"paths.{name} is not set")
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def model_dir(self) -> Path:
        return self.path("model_dir")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


_SECTIONS = {f.name: f for f in fields(PipelineConfig)}


def _build(cls, values: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}]: {exc}") from None


def from_dict(data: dict, base_dir: str = ".") -> PipelineConfig:
    cfg = PipelineConfig(base_dir=base_dir)
    for key, value in data.items():
        if key not in _SECTIONS or key == "base_dir":
            raise ConfigError(f"unknown configuration key {key!r}")
        if key == "seed":
            cfg.seed = int(value)
            continue
        current = asdict(getattr(cfg, key))
        if not isinstance(value, dict):
            raise ConfigError(f"[{key}] must be a table")
        current.update(value)
        setattr(cfg, key, _build(type(getattr(cfg, key)), current, key))
    return cfg


def _parse_value(raw: str):
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings on top of parsed TOML data."""
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = _parse_value(raw.strip())
    return data


def load_config(path=None, overrides=None) -> PipelineConfig:
    data = {}
    base = "."
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        with open(path, "rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        base = str(path.parent)
    return from_dict(apply_overrides(data, overrides), base)


def with_seed(cfg: PipelineConfig) -> PipelineConfig:
    """Propagate the pipeline seed into every module that draws random numbers."""
    return replace(cfg, svm=replace(cfg.svm, seed=cfg.seed), decoder=replace(cfg.decoder, seed=cfg.seed))


def dump_toml(cfg: PipelineConfig) -> str:
    """Render a configuration as TOML (used by ``synth`` to write a starter config)."""

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return json.dumps(v)
        if isinstance(v, (list, tuple)):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        if isinstance(v, dict):
            return "{ " + ", ".join(f"{k} = {fmt(x)}" for k, x in v.items()) + " }"
        return repr(v)

    d = cfg.to_dict()
    lines = [f"seed = {d.pop('seed')}", ""]
    for section, values in d.items():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {fmt(v)}" for k, v in values.items())
        lines.append("")
    return "\n".join(lines)
