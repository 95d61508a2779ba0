"""Run configuration: every tunable of the pipeline in one validated record.

Config files are plain ``key = value`` lines; ``#`` starts a comment. The
resolved configuration is written verbatim as ``config.resolved`` next to
every command's outputs.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import InputError


class ConfigError(InputError):
    pass


@dataclass
class RunConfig:
    # audio
    sample_rate: int = 22050
    seg_seconds: float = 5.0
    # features
    frame_len: int = 2048
    hop: int = 512
    n_mels: int = 40
    n_mfcc: int = 13
    delta_width: int = 4
    # model
    hidden: int = 64
    layers: int = 2
    dense: int = 64
    mode: str = "sequence"
    # optimization
    lr: float = 1e-3
    batch: int = 32
    epochs: int = 100
    patience: int = 8
    min_delta: float = 1e-3
    clip: float = 5.0
    seed: int = 42
    deterministic: bool = False
    # data
    fractions: tuple = (0.70, 0.15, 0.15)
    knn_k: int = 10
    logreg_epochs: int = 500
    logreg_lr: float = 0.1

    def validate(self) -> "RunConfig":
        problems = []
        positive = ("sample_rate", "seg_seconds", "frame_len", "hop", "n_mels", "n_mfcc",
                    "delta_width", "hidden", "layers", "dense", "lr", "batch", "epochs",
                    "patience", "clip", "knn_k", "logreg_epochs", "logreg_lr")
        for name in positive:
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive")
        if self.min_delta < 0:
            problems.append("min_delta must be >= 0")
        if self.mode not in ("sequence", "frame"):
            problems.append("mode must be 'sequence' or 'frame'")
        if self.n_mfcc > self.n_mels:
            problems.append("n_mfcc cannot exceed n_mels")
        if self.seed < 0:
            problems.append("seed must be a non-negative integer")
        fr = self.fractions
        if len(fr) != 3 or any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            problems.append("fractions must be three positive numbers summing to 1")
        if self.frame_len > self.seg_seconds * self.sample_rate:
            problems.append("frame_len is longer than a segment")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    def with_overrides(self, overrides: dict) -> "RunConfig":
        known = {f.name: f for f in fields(self)}
        values = {}
        for key, raw in overrides.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _coerce(known[key], raw)
        return dataclasses.replace(self, **values)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(repr(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["fractions"] = list(self.fractions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        d = {k: v for k, v in d.items() if k in known}
        if "fractions" in d:
            d["fractions"] = tuple(d["fractions"])
        return cls(**d)


def _coerce(f: dataclasses.Field, raw):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    kind = type(f.default)
    try:
        if kind is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is tuple:
            return tuple(float(v) for v in text.split(","))
        return kind(text)
    except ValueError:
        raise ConfigError(f"bad value for {f.name}: {raw!r}") from None


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    config = RunConfig()
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        config = config.with_overrides(parse_config_text(text))
    if overrides:
        config = config.with_overrides(overrides)
    return config.validate()
