"""Flat ``section.key=value`` configuration with typed defaults.

Blank lines and lines starting with ``#`` are ignored. Unknown keys and
unparsable values are errors; all of them are reported at once with their
line numbers. A key given twice keeps the last value and logs a warning.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .adapt import AdaptConfig, Strategy
from .augment import ALL_KINDS, OpKind
from .data import DatasetSpec
from .nn import ARCHITECTURES, OptimConfig

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in text.split(",") if s.strip())


def _kinds(text: str) -> tuple[str, ...]:
    if text.strip().lower() in ("all", ""):
        return tuple(k.value for k in ALL_KINDS)
    return tuple(OpKind.parse(s).value for s in _str_list(text))


def _strategy(text: str) -> str:
    return Strategy.parse(text).value


def _arch(text: str) -> str:
    if text.strip() not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {text!r} (have {', '.join(ARCHITECTURES)})")
    return text.strip()


# key -> (parser, default)
SCHEMA: dict[str, tuple] = {
    "data.source": (str, "synthetic"),
    "data.num_classes": (int, 3),
    "data.image_size": (int, 16),
    "data.train_count": (int, 2000),
    "data.test_count": (int, 500),
    "data.seed": (int, 0),
    "data.jitter": (float, 1.0),
    "data.noise": (float, 0.05),
    "data.train_paths": (_str_list, ()),
    "data.test_paths": (_str_list, ()),
    "model.arch": (_arch, "cnn-s"),
    "model.hidden": (int, 128),
    "optim.lr": (float, 0.01),
    "optim.momentum": (float, 0.9),
    "optim.weight_decay": (float, 1e-4),
    "optim.schedule": (str, "cosine"),
    "adapt.strategy": (_strategy, "maximize"),
    "adapt.delta": (int, 1),
    "adapt.epsilon": (int, 1),
    "adapt.include_original": (_bool, True),
    "train.ops": (_kinds, tuple(k.value for k in ALL_KINDS)),
    "train.n_ops": (int, 2),
    "train.epochs": (int, 10),
    "train.batch_size": (int, 64),
    "train.seed": (int, 0),
    "train.eval_every": (int, 1),
}


def defaults() -> dict:
    return {k: v[1] for k, v in SCHEMA.items()}


def parse_lines(lines: Iterable[str], source: str = "<config>") -> dict:
    """Typed values for every key present in ``lines``."""
    values: dict = {}
    problems: list[str] = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            problems.append(f"{source}:{lineno}: expected key=value, got {line!r}")
            continue
        key, _, text = line.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            problems.append(f"{source}:{lineno}: unknown key {key!r}")
            continue
        try:
            value = SCHEMA[key][0](text.strip())
        except ValueError as exc:
            problems.append(f"{source}:{lineno}: {key}: {exc}")
            continue
        if key in values and values[key] != value:
            log.warning("%s:%d: %s given again, last value wins", source, lineno, key)
        values[key] = value
    if problems:
        raise ConfigError(problems)
    return values


def load_flat(path: str | Path | None = None, overrides: Iterable[str] = ()) -> dict:
    """Defaults, then the file (if any), then ``--set`` overrides in order."""
    flat = defaults()
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        flat.update(parse_lines(text.splitlines(), str(path)))
    given = parse_lines(list(overrides), "--set")
    flat.update(given)
    return flat


def dump_flat(flat: dict) -> str:
    lines = []
    for key in SCHEMA:
        value = flat[key]
        if isinstance(value, tuple):
            value = ",".join(value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class TrainerConfig:
    data: DatasetSpec
    arch: str
    hidden: int
    optim: OptimConfig
    adapt: AdaptConfig
    ops: tuple[OpKind, ...]
    n_ops: int
    epochs: int
    batch_size: int
    seed: int
    eval_every: int

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(["train.epochs must be >= 1"])
        if self.n_ops < 1:
            raise ConfigError(["train.n_ops must be >= 1"])
        if self.batch_size < 1:
            raise ConfigError(["train.batch_size must be >= 1"])
        if self.eval_every < 1:
            raise ConfigError(["train.eval_every must be >= 1"])
        if not self.ops:
            raise ConfigError(["train.ops is empty"])

    @classmethod
    def from_flat(cls, flat: dict) -> "TrainerConfig":
        merged = defaults()
        unknown = [k for k in flat if k not in SCHEMA]
        if unknown:
            raise ConfigError([f"unknown key {k!r}" for k in unknown])
        merged.update(flat)
        try:
            return cls(
                data=DatasetSpec(
                    source=merged["data.source"],
                    num_classes=merged["data.num_classes"],
                    image_size=merged["data.image_size"],
                    train_count=merged["data.train_count"],
                    test_count=merged["data.test_count"],
                    seed=merged["data.seed"],
                    jitter=merged["data.jitter"],
                    noise=merged["data.noise"],
                    train_paths=tuple(merged["data.train_paths"]),
                    test_paths=tuple(merged["data.test_paths"]),
                ),
                arch=merged["model.arch"],
                hidden=merged["model.hidden"],
                optim=OptimConfig(
                    learning_rate=merged["optim.lr"],
                    momentum=merged["optim.momentum"],
                    weight_decay=merged["optim.weight_decay"],
                    schedule=merged["optim.schedule"],
                ),
                adapt=AdaptConfig(
                    delta=merged["adapt.delta"],
                    epsilon=merged["adapt.epsilon"],
                    strategy=Strategy.parse(merged["adapt.strategy"]),
                    include_original_in_selection=merged["adapt.include_original"],
                ),
                ops=tuple(OpKind.parse(k) for k in merged["train.ops"]),
                n_ops=merged["train.n_ops"],
                epochs=merged["train.epochs"],
                batch_size=merged["train.batch_size"],
                seed=merged["train.seed"],
                eval_every=merged["train.eval_every"],
            )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError([str(exc)]) from exc

    def to_flat(self) -> dict:
        return {
            "data.source": self.data.source,
            "data.num_classes": self.data.num_classes,
            "data.image_size": self.data.image_size,
            "data.train_count": self.data.train_count,
            "data.test_count": self.data.test_count,
            "data.seed": self.data.seed,
            "data.jitter": self.data.jitter,
            "data.noise": self.data.noise,
            "data.train_paths": tuple(self.data.train_paths),
            "data.test_paths": tuple(self.data.test_paths),
            "model.arch": self.arch,
            "model.hidden": self.hidden,
            "optim.lr": self.optim.learning_rate,
            "optim.momentum": self.optim.momentum,
            "optim.weight_decay": self.optim.weight_decay,
            "optim.schedule": self.optim.schedule,
            "adapt.strategy": self.adapt.strategy.value,
            "adapt.delta": self.adapt.delta,
            "adapt.epsilon": self.adapt.epsilon,
            "adapt.include_original": self.adapt.include_original_in_selection,
            "train.ops": tuple(k.value for k in self.ops),
            "train.n_ops": self.n_ops,
            "train.epochs": self.epochs,
            "train.batch_size": self.batch_size,
            "train.seed": self.seed,
            "train.eval_every": self.eval_every,
        }

    def with_overrides(self, **flat_updates) -> "TrainerConfig":
        """Copy with dotted keys replaced; use ``__`` for the dot (``adapt__epsilon=2``)."""
        flat = self.to_flat()
        for key, value in flat_updates.items():
            flat[key.replace("__", ".")] = value
        return TrainerConfig.from_flat(flat)


def load_config(path=None, overrides: Iterable[str] = ()) -> TrainerConfig:
    return TrainerConfig.from_flat(load_flat(path, overrides))
