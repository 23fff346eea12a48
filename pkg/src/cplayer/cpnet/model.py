"""CP-Net assembly: EdgeConv feature extraction, CPL down-sampling stages, classifier head."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import cpl
from ..nn import functional as F
from ..nn.autodiff import Value
from ..nn.knn import knn_batch
from ..nn.layers import ClassifierHead, EdgeConv, Module, SharedMLP
from .config import ConfigInvalid, NetworkConfig


@dataclass
class ForwardResult:
    logits: Value
    point_counts: list[int]
    indices: list[np.ndarray] = field(default_factory=list)  # per stage, (B, k)
    features: list[Value] = field(default_factory=list)  # selection features F_S per stage


class CPNet(Module):
    """Alternating EdgeConv / critical-points stages followed by global max pool and an FC head.

    The first stage is EdgeConv(3 -> edgeconv_width) and a shared MLP up to the
    bottleneck width; each entry of ``cfg.ratios`` then adds a down-sampling
    layer and an EdgeConv on the retained points. The k-NN graph of every
    EdgeConv is built on the (retained) points' 3-D coordinates.
    """

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.conv0 = self.add_child("conv0", EdgeConv(3, cfg.edgeconv_width, rng))
        self.mlp = self.add_child("mlp", SharedMLP([cfg.edgeconv_width, cfg.bottleneck], rng))
        self.stages = []
        width, saved = cfg.bottleneck, [cfg.edgeconv_width]
        for j, out_width in enumerate(cfg.widths()):
            in_width = width + (sum(saved) if cfg.concat_features else 0)
            self.stages.append(self.add_child(f"stage{j}", EdgeConv(in_width, out_width, rng)))
            saved = saved + [width]
            width = out_width
        self.head = self.add_child("head", ClassifierHead(width, cfg.fc_dims, cfg.num_classes,
                                                          cfg.dropout, rng))

    def point_counts(self) -> list[int]:
        return self.cfg.point_counts()

    def _k(self, n: int) -> int:
        return min(self.cfg.knn, n - 1)

    @property
    def first_k(self) -> int:
        return self._k(self.cfg.input_points)

    def stage0_features(self, points: np.ndarray, training: bool = False) -> Value:
        """Selection features for the first down-sampling layer, shape (B, n, bottleneck)."""
        points = np.asarray(points, dtype=np.float32)
        nbrs = knn_batch(points, self._k(points.shape[1]))
        x = self.conv0(Value(points), nbrs, training)
        return self.mlp(x, training)

    def select(self, feats: np.ndarray, coords: np.ndarray, k: int,
               rng: Optional[np.random.Generator]) -> np.ndarray:
        """Row indices (B, k) kept by the configured down-sampler."""
        mode = self.cfg.downsample
        B, n = feats.shape[:2]
        if mode == "none":
            return np.tile(np.arange(n), (B, 1))
        if mode in cpl.MODES:
            return np.stack([cpl.cpl_select(f, k, mode).resized for f in feats])
        if mode == "random":
            if rng is None:
                raise ValueError("random down-sampling needs a sampler generator")
            return np.stack([cpl.downsample_random(n, k, rng) for _ in range(B)])
        return np.stack([cpl.downsample_fps(c, k) for c in coords])

    def forward(self, points, training: bool = False, rng: Optional[np.random.Generator] = None,
                sampler_rng: Optional[np.random.Generator] = None,
                neighbors: Optional[np.ndarray] = None) -> ForwardResult:
        """Logits for a batch of clouds ``(B, n, 3)``.

        ``rng`` drives dropout (and random down-sampling during training);
        ``sampler_rng`` drives random down-sampling at inference. ``neighbors``
        may carry a precomputed first-stage k-NN graph ``(B, n, K)``.
        """
        points = np.asarray(points, dtype=np.float32)
        if points.ndim != 3 or points.shape[2] != 3:
            raise ValueError(f"points must be (B, n, 3), got {points.shape}")
        if points.shape[1] != self.cfg.input_points:
            raise ConfigInvalid(f"model expects {self.cfg.input_points} points, got {points.shape[1]}")
        counts = self.point_counts()
        nbrs = knn_batch(points, self._k(points.shape[1])) if neighbors is None else neighbors
        early = self.conv0(Value(points), nbrs, training)
        x = self.mlp(early, training)
        saved = [early]  # earlier features aligned with the current point set
        coords = points
        result = ForwardResult(logits=None, point_counts=counts)
        sampler = rng if training else sampler_rng
        for j, conv in enumerate(self.stages):
            idx = self.select(x.data, coords, counts[j + 1], sampler)
            result.indices.append(idx)
            result.features.append(x)
            if self.cfg.concat_features:
                gathered = [F.gather_rows(f, idx) for f in [x] + saved]
                saved = gathered[1:] + [gathered[0]]
                x_in = F.concat(gathered, axis=-1)
            else:
                x_in = F.gather_rows(x, idx)
            coords = np.take_along_axis(coords, idx[:, :, None], axis=1)
            x = conv(x_in, knn_batch(coords, self._k(coords.shape[1])), training)
        pooled = F.global_max_pool(x)
        result.logits = self.head(pooled, training, rng)
        return result

    def __call__(self, points, training: bool = False, rng=None, sampler_rng=None,
                 neighbors=None) -> Value:
        return self.forward(points, training, rng, sampler_rng, neighbors).logits


def build_cascade(cfg: NetworkConfig) -> CPNet:
    return CPNet(cfg)


def build_classifier(cfg: NetworkConfig) -> CPNet:
    """The single down-sampling-stage classifier; rejects multi-stage configs."""
    if len(cfg.ratios) != 1:
        raise ConfigInvalid("build_classifier takes exactly one down-sampling ratio; use build_cascade")
    return CPNet(cfg)
