"""Flat ``key = value`` run configuration.

Keys are namespaced by prefix: ``model.*``, ``train.*``, ``generator.*``
(per-activity timing as ``generator.<activity>.<field>``), ``split.*``,
``augment.*`` and ``stream.*``. Blank lines and ``#`` comments are ignored.
Any key left out keeps its default, and unknown keys are errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .episodes import DEFAULT_GUARD
from .errors import ConfigError
from .features import FeatureMask
from .generator import GeneratorParams
from .model import ModelConfig
from .streaming import DEFAULT_STALENESS
from .training import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    generator: GeneratorParams = field(default_factory=GeneratorParams)
    split_ratios: tuple[float, float, float] = (0.7, 0.15, 0.15)
    augment_k: int = 1
    augment_guard: float = DEFAULT_GUARD
    staleness: float = DEFAULT_STALENESS

    @property
    def seed(self) -> int:
        return self.train.seed

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, train=replace(self.train, seed=seed))

    def with_rate(self, rate: float) -> "RunConfig":
        return replace(self, model=replace(self.model, rate=rate), generator=replace(self.generator, rate=rate))


def _fmt(value: Any) -> str:
    if isinstance(value, FeatureMask):
        return value.code
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def to_flat(cfg: RunConfig) -> dict[str, str]:
    out: dict[str, str] = {}
    for f in fields(cfg.model):
        out[f"model.{f.name}"] = _fmt(getattr(cfg.model, f.name))
    for f in fields(cfg.train):
        out[f"train.{f.name}"] = _fmt(getattr(cfg.train, f.name))
    for k, v in cfg.generator.to_flat().items():
        out[f"generator.{k}"] = _fmt(v)
    out["split.ratios"] = _fmt(cfg.split_ratios)
    out["augment.k"] = _fmt(cfg.augment_k)
    out["augment.guard"] = _fmt(cfg.augment_guard)
    out["stream.staleness"] = _fmt(cfg.staleness)
    return out


def dumps(cfg: RunConfig) -> str:
    lines = ["# totkit run configuration (flat key = value)"]
    section = None
    for key, value in to_flat(cfg).items():
        head = key.split(".", 1)[0]
        if head != section:
            lines += ["", f"# {head}"]
            section = head
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def parse_lines(text: str, source: str = "<config>") -> dict[str, str]:
    flat: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key = key.strip()
        if key in flat:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        flat[key] = value.strip()
    return flat


def _coerce(template: Any, text: str, key: str) -> Any:
    try:
        if isinstance(template, bool):
            if text.lower() not in ("true", "false", "1", "0"):
                raise ValueError(text)
            return text.lower() in ("true", "1")
        if isinstance(template, int):
            return int(text)
        if isinstance(template, float):
            return float(text)
        if isinstance(template, FeatureMask):
            return FeatureMask.parse(text)
        if isinstance(template, tuple):
            return tuple(float(p) for p in text.split(","))
        return text
    except ValueError:
        raise ConfigError(f"bad value {text!r} for {key}") from None


def from_flat(flat: dict[str, str]) -> RunConfig:
    base = RunConfig()
    model_kw: dict[str, Any] = {}
    train_kw: dict[str, Any] = {}
    gen_flat: dict[str, float] = {}
    top: dict[str, Any] = {}
    model_fields = {f.name for f in fields(ModelConfig)}
    train_fields = {f.name for f in fields(TrainConfig)}
    for key, text in flat.items():
        head, _, rest = key.partition(".")
        if head == "model" and rest in model_fields:
            model_kw[rest] = _coerce(getattr(base.model, rest), text, key)
        elif head == "train" and rest in train_fields:
            train_kw[rest] = _coerce(getattr(base.train, rest), text, key)
        elif head == "generator" and rest:
            gen_flat[rest] = _coerce(0.0, text, key)
        elif key == "split.ratios":
            top["split_ratios"] = _coerce(base.split_ratios, text, key)
        elif key == "augment.k":
            top["augment_k"] = _coerce(base.augment_k, text, key)
        elif key == "augment.guard":
            top["augment_guard"] = _coerce(base.augment_guard, text, key)
        elif key == "stream.staleness":
            top["staleness"] = _coerce(base.staleness, text, key)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        cfg = RunConfig(
            model=replace(base.model, **model_kw),
            train=replace(base.train, **train_kw),
            generator=GeneratorParams.from_flat(gen_flat) if gen_flat else base.generator,
            **top,
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    if len(cfg.split_ratios) != 3:
        raise ConfigError("split.ratios needs three values (train, val, test)")
    if cfg.augment_k < 0 or cfg.augment_guard < 0 or cfg.staleness <= 0:
        raise ConfigError("augment.k and augment.guard must be >= 0 and stream.staleness > 0")
    return cfg


def loads(text: str, source: str = "<config>") -> RunConfig:
    return from_flat(parse_lines(text, source))


def load(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return loads(text, str(path))
