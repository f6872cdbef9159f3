"""Run configuration: TOML file, defaults and command-line overrides."""
from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ValidationError
from .ingest import Calendar
from .model import ModelConfig
from .scoring import DEFAULT_ALPHAS
from .synth import SynthConfig
from .train import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class ScoreConfig:
    alphas: tuple = DEFAULT_ALPHAS
    standardize: bool = True

    def validate(self) -> None:
        if len(self.alphas) != 4:
            raise ValidationError("score.alphas needs four weights")
        if any(a < 0 for a in self.alphas):
            raise ValidationError(f"score.alphas must be >= 0, got {list(self.alphas)}")


@dataclass
class CalendarConfig:
    work_start: int = 8
    work_end: int = 17
    timezone: str = "UTC"
    internal_domain: str = "dtaa.com"

    def validate(self) -> None:
        if not 0 <= self.work_start < self.work_end <= 24:
            raise ValidationError("calendar: need 0 <= work_start < work_end <= 24")
        try:
            self.calendar().local(0.0)
        except Exception as exc:
            raise ValidationError(f"calendar: unknown timezone {self.timezone!r}") from exc

    def calendar(self) -> Calendar:
        return Calendar(self.work_start, self.work_end, self.timezone)


@dataclass
class ModelSection:
    embed_dim: int = 50
    hidden_dim: int = 100
    upper_input_dim: int = 100
    upper_hidden_dim: int = 100
    levels: str = "both"

    def model_config(self) -> ModelConfig:
        return ModelConfig(embed_dim=self.embed_dim, hidden_dim=self.hidden_dim,
                           upper_input_dim=self.upper_input_dim,
                           upper_hidden_dim=self.upper_hidden_dim, levels=self.levels)


@dataclass
class RunConfig:
    seed: int = 7
    synth: SynthConfig = field(default_factory=SynthConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    score: ScoreConfig = field(default_factory=ScoreConfig)
    calendar: CalendarConfig = field(default_factory=CalendarConfig)

    def validate(self) -> "RunConfig":
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ValidationError(f"seed must be a non-negative integer, got {self.seed!r}")
        self.synth.validate()
        self.model.model_config()
        self.train.validate()
        self.score.validate()
        self.calendar.validate()
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["score"]["alphas"] = list(self.score.alphas)
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValidationError(f"unknown config sections {sorted(unknown)}")
        kw = {}
        if "seed" in d:
            kw["seed"] = d["seed"]
        try:
            if "synth" in d:
                kw["synth"] = SynthConfig.from_dict(d["synth"])
            for name, typ in (("model", ModelSection), ("train", TrainConfig),
                              ("score", ScoreConfig), ("calendar", CalendarConfig)):
                if name in d:
                    kw[name] = typ(**d[name])
        except TypeError as exc:
            raise ValidationError(f"bad config: {exc}") from exc
        cfg = cls(**kw)
        cfg.score.alphas = tuple(float(a) for a in cfg.score.alphas)
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ValidationError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ValidationError(f"{path}: {exc}") from exc
        return cls.from_dict(data)

    def override(self, dotted: dict) -> "RunConfig":
        """Apply ``{"train.epochs_lower": 3, ...}`` style overrides (None means unset)."""
        for key, value in dotted.items():
            if value is None:
                continue
            if key == "seed":
                self.seed = value
                continue
            section, _, name = key.partition(".")
            target = getattr(self, section, None)
            if target is None or not hasattr(target, name):
                raise ValidationError(f"unknown config key {key!r}")
            setattr(target, name, value)
        return self
