"""Network and training configuration, plus the flat ``key = value`` file format.

Example file::

    # network
    input_points = 256
    knn = 10
    edgeconv_width = 128
    bottleneck = 256
    downsample = cpl
    ratios = 1/4
    fc_dims = 512,256
    # training
    epochs = 30
    batch_size = 16
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

DOWNSAMPLE_MODES = ("cpl", "wcpl", "random", "fps", "none")
SHAPE_CLASSES = ("sphere", "cube", "cylinder", "torus")


class ConfigInvalid(ValueError):
    pass


def parse_ratio(text) -> Fraction:
    try:
        r = Fraction(str(text).strip())
    except (ValueError, ZeroDivisionError):
        raise ConfigInvalid(f"bad ratio {text!r}") from None
    if not 0 < r <= 1:
        raise ConfigInvalid(f"ratio must be in (0, 1], got {text!r}")
    return r


@dataclass(frozen=True)
class NetworkConfig:
    input_points: int = 256
    knn: int = 10
    edgeconv_width: int = 128
    bottleneck: int = 256
    downsample: str = "cpl"
    ratios: tuple[Fraction, ...] = (Fraction(1, 4),)
    stage_widths: Optional[tuple[int, ...]] = None  # EdgeConv width per stage; bottleneck by default
    concat_features: bool = False
    fc_dims: tuple[int, ...] = (512, 256)
    num_classes: int = 4
    dropout: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "ratios", tuple(parse_ratio(r) for r in self.ratios))
        object.__setattr__(self, "fc_dims", tuple(int(d) for d in self.fc_dims))
        if self.stage_widths is not None:
            object.__setattr__(self, "stage_widths", tuple(int(w) for w in self.stage_widths))
        self.validate()

    def validate(self):
        if self.downsample not in DOWNSAMPLE_MODES:
            raise ConfigInvalid(f"downsample must be one of {DOWNSAMPLE_MODES}")
        if self.num_classes < 2:
            raise ConfigInvalid("num_classes must be >= 2")
        if self.input_points < 2 or self.knn < 1:
            raise ConfigInvalid("need input_points >= 2 and knn >= 1")
        if min(self.edgeconv_width, self.bottleneck, *self.fc_dims, 1) < 1:
            raise ConfigInvalid("layer widths must be positive")
        if not 0 <= self.dropout < 1:
            raise ConfigInvalid("dropout must be in [0, 1)")
        if self.stage_widths is not None and len(self.stage_widths) != len(self.ratios):
            raise ConfigInvalid("stage_widths needs one entry per ratio")
        self.point_counts()

    def point_counts(self) -> list[int]:
        """Points entering each stage: ``[n, n*r0, n*r0*r1, ...]``."""
        counts = [self.input_points]
        for r in self.ratios:
            if self.downsample == "none":
                counts.append(counts[-1])
                continue
            nxt = counts[-1] * r
            if nxt.denominator != 1:
                raise ConfigInvalid(f"ratio {r} does not divide {counts[-1]} points evenly")
            if nxt < 2:
                raise ConfigInvalid("down-sampling leaves fewer than 2 points")
            counts.append(int(nxt))
        return counts

    def widths(self) -> list[int]:
        return list(self.stage_widths) if self.stage_widths else [self.bottleneck] * len(self.ratios)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 1e-3
    decay_rate: float = 0.5
    decay_steps: Optional[int] = None  # default: half of the total step count
    bn_momentum: float = 0.9
    bn_schedule: bool = False  # ramp batch-norm decay from 0.5 towards 0.99
    augment: bool = True
    train_size: int = 512
    test_size: int = 128
    noise: float = 0.01
    dataset_seed: int = 0
    classes: tuple[str, ...] = SHAPE_CLASSES
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigInvalid("need epochs >= 0 and batch_size >= 1")
        if self.learning_rate <= 0 or not 0 < self.decay_rate <= 1:
            raise ConfigInvalid("learning_rate must be positive and decay_rate in (0, 1]")
        unknown = set(self.classes) - set(SHAPE_CLASSES)
        if unknown:
            raise ConfigInvalid(f"unknown shape classes {sorted(unknown)}")


def _coerce(tp, text: str, key: str):
    text = text.strip()
    tp = str(tp)
    try:
        if "bool" in tp:
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return text.lower() in ("true", "1", "yes")
        if "tuple[Fraction" in tp:
            return tuple(parse_ratio(t) for t in text.split(",") if t.strip())
        if "tuple[int" in tp:
            if "Optional" in tp and text.lower() in ("", "none"):
                return None
            return tuple(int(t) for t in text.split(",") if t.strip())
        if "tuple[str" in tp:
            return tuple(t.strip() for t in text.split(",") if t.strip())
        if "Optional[int]" in tp:
            return None if text.lower() in ("", "none") else int(text)
        if tp == "int":
            return int(text)
        if tp == "float":
            return float(text)
        return text
    except ValueError:
        raise ConfigInvalid(f"bad value for {key}: {text!r}") from None


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return "none" if value is None else str(value).lower() if isinstance(value, bool) else str(value)


def parse_config_text(text: str) -> tuple[NetworkConfig, TrainConfig]:
    net_fields = {f.name: f for f in dataclasses.fields(NetworkConfig)}
    train_fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    net_kw, train_kw = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigInvalid(f"line {lineno}: expected 'key = value'")
        if key == "seed":
            net_kw[key] = train_kw[key] = _coerce("int", value, key)
        elif key in net_fields:
            net_kw[key] = _coerce(net_fields[key].type, value, key)
        elif key in train_fields:
            train_kw[key] = _coerce(train_fields[key].type, value, key)
        else:
            raise ConfigInvalid(f"line {lineno}: unknown key {key!r}")
    return NetworkConfig(**net_kw), TrainConfig(**train_kw)


def load_config(path) -> tuple[NetworkConfig, TrainConfig]:
    with open(path) as fh:
        return parse_config_text(fh.read())


def format_config(net: NetworkConfig, train: Optional[TrainConfig] = None) -> str:
    lines = ["# network"]
    lines += [f"{f.name} = {_format(getattr(net, f.name))}" for f in dataclasses.fields(net)]
    if train is not None:
        lines.append("# training")
        lines += [f"{f.name} = {_format(getattr(train, f.name))}"
                  for f in dataclasses.fields(train) if f.name != "seed"]
    return "\n".join(lines) + "\n"


def config_to_dict(cfg) -> dict:
    return {f.name: _format(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)}


def config_from_dict(cls, data: dict):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    return cls(**{k: _coerce(fields[k].type, v, k) for k, v in data.items()})
