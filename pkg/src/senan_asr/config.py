"""Flat ``section.key=value`` experiment configuration."""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .acoustic_model import AmConfig
from .corpus import CorpusConfig
from .errors import InvalidConfig
from .features import FeatureConfig
from .training import LossWeights, ModelConfig, TrainConfig


@dataclass
class DecodeConfig:
    split: str = "test"

    def validate(self) -> None:
        if self.split not in ("train", "test"):
            raise InvalidConfig(f"decode.split must be train or test, got {self.split!r}")


@dataclass
class ExperimentConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    decode: DecodeConfig = field(default_factory=DecodeConfig)

    # section name -> (attribute path, {config key: field name})
    _SECTIONS: typing.ClassVar[dict[str, tuple[str, dict[str, str] | None]]] = {
        "corpus": ("corpus", None),
        "features": ("features", None),
        "senan": ("model", {"first": "senan_first", "last": "senan_last", "noise_stream": "noise_stream"}),
        "aggregation": ("model", {"enh": "agg_enh", "nse": "agg_nse"}),
        "am": ("model.am", None),
        "training": ("training", None),
        "loss": ("loss", None),
        "decode": ("decode", None),
    }

    def _target(self, section: str):
        if section not in self._SECTIONS:
            raise InvalidConfig(f"unknown config section {section!r}")
        path, aliases = self._SECTIONS[section]
        obj = self
        for part in path.split("."):
            obj = getattr(obj, part)
        return obj, aliases

    def set(self, key: str, raw: str) -> None:
        section, _, name = key.partition(".")
        if not name:
            raise InvalidConfig(f"config key {key!r} must have the form section.name")
        obj, aliases = self._target(section)
        names = {f.name for f in dataclasses.fields(obj) if not f.name.startswith("_")}
        attr = aliases.get(name) if aliases is not None else (name if name in names else None)
        if attr is None or (section == "am" and attr == "n_states"):
            raise InvalidConfig(f"unknown config key {key!r}")
        hint = typing.get_type_hints(type(obj))[attr]
        value = _coerce(key, raw, hint)
        if type(obj).__dataclass_params__.frozen:
            # frozen sections are swapped for an updated copy on their parent
            path = self._SECTIONS[section][0].split(".")
            parent = self
            for part in path[:-1]:
                parent = getattr(parent, part)
            setattr(parent, path[-1], dataclasses.replace(obj, **{attr: value}))
        else:
            setattr(obj, attr, value)

    def set_seed(self, seed: int) -> None:
        self.corpus.seed = seed
        self.training.seed = seed

    def validate(self) -> None:
        self.corpus.validate()
        self.features.validate()
        self.model.validate()
        self.training.validate()
        self.decode.validate()
        if self.loss.alpha < 0 or self.loss.beta < 0:
            raise InvalidConfig("loss weights must be non-negative")
        if self.features.sample_rate != self.corpus.sample_rate:
            raise InvalidConfig("features.sample_rate must match corpus.sample_rate")
        for agg in (self.model.agg_enh, self.model.agg_nse):
            if agg not in ("cur", "cont", "stat", "sat"):
                raise InvalidConfig(f"unknown aggregator {agg!r}")

    def items(self) -> list[tuple[str, str]]:
        """Every settable key with its current value, in file order."""
        out = []
        for section in self._SECTIONS:
            obj, aliases = self._target(section)
            if aliases is None:
                keys = [(f.name, f.name) for f in dataclasses.fields(obj) if f.name not in ("n_states",)]
            else:
                keys = list(aliases.items())
            for key, attr in keys:
                out.append((f"{section}.{key}", _render(getattr(obj, attr))))
        return out

    def dumps(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.items())


def _coerce(key: str, raw: str, hint) -> object:
    raw = raw.strip()
    try:
        if hint is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        if hint is str:
            return raw
        if typing.get_origin(hint) is tuple:
            (inner, *_) = typing.get_args(hint)
            items = [s for s in raw.replace(",", " ").split() if s]
            return tuple(inner(s) for s in items)
    except ValueError as exc:
        raise InvalidConfig(f"{key}: cannot parse {raw!r} as {getattr(hint, '__name__', hint)}") from exc
    raise InvalidConfig(f"{key}: unsupported value type {hint}")


def _render(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base if base is not None else ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise InvalidConfig(f"line {lineno}: expected key=value, got {line!r}")
        cfg.set(key.strip(), value)
    cfg.validate()
    return cfg


def load_config(path: Path | None) -> ExperimentConfig:
    if path is None:
        cfg = ExperimentConfig()
        cfg.validate()
        return cfg
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
