"""Synthetic analytic-shape datasets standing in for ModelNet at desk scale."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..pcio import PointCloud, normalize_unit_sphere, rotation_about_y
from .config import SHAPE_CLASSES, ConfigInvalid

_SPLIT_IDS = {"train": 0, "test": 1}


@dataclass(frozen=True)
class ShapeDataset:
    classes: tuple[str, ...] = SHAPE_CLASSES
    train_count: int = 512
    test_count: int = 128
    points: int = 256
    noise: float = 0.01
    seed: int = 0

    def __post_init__(self):
        unknown = set(self.classes) - set(SHAPE_CLASSES)
        if unknown or len(self.classes) < 2:
            raise ValueError(f"need >= 2 known classes, unknown: {sorted(unknown)}")


def _sphere(n, rng):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _cube(n, rng):
    face = rng.integers(0, 6, n)
    uv = rng.uniform(-1.0, 1.0, (n, 2))
    out = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, -1.0, 1.0)
    for a in range(3):
        others = [b for b in range(3) if b != a]
        sel = axis == a
        out[sel, a] = sign[sel]
        out[np.ix_(sel, others)] = uv[sel]
    return out


def _cylinder(n, rng, radius=1.0, half_height=1.0):
    side = 2 * math.pi * radius * 2 * half_height
    caps = 2 * math.pi * radius ** 2
    on_side = rng.random(n) < side / (side + caps)
    theta = rng.uniform(0, 2 * math.pi, n)
    r = np.where(on_side, radius, radius * np.sqrt(rng.random(n)))
    y = np.where(on_side, rng.uniform(-half_height, half_height, n),
                 np.where(rng.random(n) < 0.5, -half_height, half_height))
    return np.stack([r * np.cos(theta), y, r * np.sin(theta)], axis=1)


def _torus(n, rng, major=1.0, minor=0.35):
    # tube angle density is proportional to (major + minor * cos(phi)); sample by rejection
    phi = np.empty(0)
    while len(phi) < n:
        cand = rng.uniform(0, 2 * math.pi, 2 * n)
        accept = rng.random(2 * n) * (major + minor) < major + minor * np.cos(cand)
        phi = np.concatenate([phi, cand[accept]])
    phi = phi[:n]
    theta = rng.uniform(0, 2 * math.pi, n)
    ring = major + minor * np.cos(phi)
    return np.stack([ring * np.cos(theta), minor * np.sin(phi), ring * np.sin(theta)], axis=1)


_GENERATORS = {"sphere": _sphere, "cube": _cube, "cylinder": _cylinder, "torus": _torus}


def sample_shape(name: str, n: int, noise: float, rng: np.random.Generator) -> np.ndarray:
    """Raw (unnormalized) noisy surface samples of one shape, randomly turned about y."""
    pts = _GENERATORS[name](n, rng) @ rotation_about_y(rng.uniform(0, 2 * math.pi)).T
    return pts + noise * rng.standard_normal(pts.shape)


def split_rng(seed: int, split: str) -> np.random.Generator:
    return np.random.default_rng([seed, _SPLIT_IDS[split]])


def gen_shapes(dataset: ShapeDataset, split: str = "train") -> list[tuple[PointCloud, int]]:
    """Labelled, unit-sphere-normalized clouds; labels cycle so classes stay balanced."""
    if split not in _SPLIT_IDS:
        raise ValueError(f"split must be one of {sorted(_SPLIT_IDS)}")
    count = dataset.train_count if split == "train" else dataset.test_count
    rng = split_rng(dataset.seed, split)
    out = []
    for i in range(count):
        label = i % len(dataset.classes)
        raw = sample_shape(dataset.classes[label], dataset.points, dataset.noise, rng)
        cloud = normalize_unit_sphere(PointCloud(raw))
        cloud.label = label
        out.append((cloud, label))
    return out


def as_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([c.points for c, _ in samples]).astype(np.float32)
    y = np.array([label for _, label in samples], dtype=np.int64)
    return X, y


def dataset_for(net, train) -> ShapeDataset:
    """The dataset described by a (NetworkConfig, TrainConfig) pair."""
    if len(train.classes) != net.num_classes:
        raise ConfigInvalid(f"num_classes={net.num_classes} but {len(train.classes)} classes listed")
    return ShapeDataset(train.classes, train.train_size, train.test_size, net.input_points,
                        train.noise, train.dataset_seed)


def load_split(dataset: ShapeDataset, split: str) -> tuple[np.ndarray, np.ndarray]:
    return as_arrays(gen_shapes(dataset, split))
