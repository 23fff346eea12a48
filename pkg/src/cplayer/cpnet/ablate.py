"""Grid ablations over down-sampler, ratio and bottleneck width.

A grid file uses the same ``key = value`` syntax as configs. List-valued keys
span the grid; any other key is a plain config override shared by every cell::

    modes = cpl, random
    ratios = 1, 1/4, 1/16
    bottlenecks = 64
    seeds = 0, 1, 2
    sampler_seeds = 0, 1
    epochs = 5

One model is trained per (mode, ratio, bottleneck, seed) and evaluated once per
sampler seed, so the report has ``|modes|*|ratios|*|bottlenecks|*|sampler_seeds|``
rows per training seed.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import itertools
import logging
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .config import (DOWNSAMPLE_MODES, ConfigInvalid, NetworkConfig, TrainConfig,
                     parse_config_text, parse_ratio)
from .data import dataset_for, load_split
from .model import CPNet
from .training import confusion_matrix, metrics_from_confusion, predict_logits, train

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("mode", "ratio", "bottleneck", "seed", "sampler_seed", "overall_acc",
                  "mean_class_acc", "output_digest", "train_seconds")


@dataclass
class AblationGrid:
    modes: tuple[str, ...] = ("cpl",)
    ratios: tuple[Fraction, ...] = (Fraction(1, 4),)
    bottlenecks: tuple[int, ...] = (256,)
    seeds: tuple[int, ...] = (0,)
    sampler_seeds: tuple[int, ...] = (0,)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        for m in self.modes:
            if m not in DOWNSAMPLE_MODES:
                raise ConfigInvalid(f"unknown mode {m!r}")
        if not (self.modes and self.ratios and self.bottlenecks and self.seeds and self.sampler_seeds):
            raise ConfigInvalid("every grid axis needs at least one value")

    def cells(self):
        return itertools.product(self.modes, self.ratios, self.bottlenecks)

    def __len__(self) -> int:
        return len(self.modes) * len(self.ratios) * len(self.bottlenecks) * len(self.sampler_seeds)


_LIST_KEYS = {"modes": str, "ratios": parse_ratio, "bottlenecks": int, "seeds": int,
              "sampler_seeds": int}


def parse_grid_text(text: str) -> AblationGrid:
    axes, rest = {}, []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        key, sep, value = line.partition("=")
        key = key.strip()
        if key in _LIST_KEYS and sep:
            try:
                axes[key] = tuple(_LIST_KEYS[key](v.strip()) for v in value.split(",") if v.strip())
            except ValueError:
                raise ConfigInvalid(f"line {lineno}: bad value for {key}") from None
        else:
            rest.append(raw)
    net, tr = parse_config_text("\n".join(rest))
    return AblationGrid(**axes, network=net, train=tr)


def load_grid(path) -> AblationGrid:
    with open(path) as fh:
        return parse_grid_text(fh.read())


def output_digest(logits: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(logits, dtype="<f4").tobytes()).hexdigest()[:16]


def run_ablation(grid: AblationGrid) -> list[dict]:
    dataset = dataset_for(grid.network, grid.train)
    X, y = load_split(dataset, "train")
    Xt, yt = load_split(dataset, "test")
    rows = []
    for (mode, ratio, bottleneck), seed in itertools.product(grid.cells(), grid.seeds):
        net = dataclasses.replace(grid.network, downsample=mode, ratios=(ratio,),
                                  bottleneck=bottleneck, seed=seed)
        model = CPNet(net)
        start = time.perf_counter()
        train(model, X, y, grid.train, seed=seed)
        seconds = time.perf_counter() - start
        for sampler_seed in grid.sampler_seeds:
            logits = predict_logits(model, Xt, sampler_seed=sampler_seed)
            ev = metrics_from_confusion(confusion_matrix(yt, logits.argmax(1), net.num_classes))
            rows.append({"mode": mode, "ratio": str(ratio), "bottleneck": bottleneck, "seed": seed,
                         "sampler_seed": sampler_seed, "overall_acc": ev.overall_acc,
                         "mean_class_acc": ev.mean_class_acc, "output_digest": output_digest(logits),
                         "train_seconds": seconds})
            log.info("%s", rows[-1])
    return rows


def write_report(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({**r, "overall_acc": f"{r['overall_acc']:.6f}",
                        "mean_class_acc": f"{r['mean_class_acc']:.6f}",
                        "train_seconds": f"{r['train_seconds']:.3f}"})
