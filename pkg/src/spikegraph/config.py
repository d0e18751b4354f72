"""Flat ``key = value`` run configuration: file values, then flag overrides."""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path

from .datasets import MODALITIES
from .errors import ConfigError
from .model import FULL_CHANNELS, TINY_CHANNELS, ModelConfig
from .train import TrainConfig


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _channels(text: str) -> tuple:
    """``3:64,64:64,...`` -> ((3, 64), (64, 64), ...)."""
    pairs = []
    for item in text.split(","):
        a, b = item.split(":")
        pairs.append((int(a), int(b)))
    return tuple(pairs)


def _format_channels(chans) -> str:
    return ",".join(f"{a}:{b}" for a, b in chans)


def _levels(text: str):
    return "auto" if text.strip() == "auto" else int(text)


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"choose one of {', '.join(options)}")
        return text
    return parse


def _parser_for(default):
    if isinstance(default, bool):
        return _bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    return str


def _schema():
    schema = {}
    for f in fields(ModelConfig):
        schema[f.name] = (_parser_for(f.default), f.default)
    schema["channels"] = (_channels, FULL_CHANNELS)
    schema["J"] = (_levels, 3)
    schema["highpass"] = (_choice("scaled", "mra"), "scaled")
    for f in fields(TrainConfig):
        if f.name != "seed":
            schema[f.name] = (_parser_for(f.default), f.default)
    schema["profile"] = (_choice("full", "tiny"), "full")
    schema["modality"] = (_choice(*MODALITIES), "joint")
    schema["test_fraction"] = (float, 0.2)
    return schema


SCHEMA = _schema()


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return _format_channels(value)
    return str(value)


class RunConfig:
    """Validated flat settings. Unknown keys are rejected."""

    def __init__(self, values: dict | None = None):
        self.values = {k: default for k, (_, default) in SCHEMA.items()}
        self._explicit: set[str] = set()
        for key, value in (values or {}).items():
            self.set(key, value)

    def set(self, key: str, value):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        parse, _ = SCHEMA[key]
        if isinstance(value, str):
            try:
                value = parse(value.strip())
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad value for {key!r}: {value!r} ({exc})") from exc
        self.values[key] = value
        self._explicit.add(key)

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "RunConfig":
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            try:
                cfg.set(key, value)
            except ConfigError as exc:
                raise ConfigError(f"{source}:{lineno}: {exc}") from exc
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from exc
        return cls.parse(text, str(path))

    def merged(self, overrides: dict) -> "RunConfig":
        out = RunConfig()
        out.values = dict(self.values)
        out._explicit = set(self._explicit)
        for key, value in overrides.items():
            if value is not None:
                out.set(key, value)
        return out

    def model_config(self, num_classes: int | None = None) -> ModelConfig:
        kw = {f.name: self.values[f.name] for f in fields(ModelConfig)}
        if self.values["profile"] == "tiny" and "channels" not in self._explicit:
            kw["channels"] = TINY_CHANNELS
        if num_classes is not None and "num_classes" not in self._explicit:
            kw["num_classes"] = num_classes
        return ModelConfig(**kw)

    def train_config(self) -> TrainConfig:
        kw = {f.name: self.values[f.name] for f in fields(TrainConfig) if f.name != "seed"}
        return TrainConfig(seed=self.values["seed"], **kw)

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(self.values[k])}\n" for k in SCHEMA)


def parse_assignments(items) -> dict:
    """``["k=v", ...]`` from the command line -> dict."""
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out
