"""scikit-learn style wrappers around the critical points sampler and CP-Net."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted

from . import cpl
from .cpnet.checkpoint import Checkpoint, checkpoint_load, checkpoint_save
from .cpnet.config import NetworkConfig, TrainConfig, parse_ratio
from .cpnet.model import CPNet
from .cpnet.training import predict_logits, train
from .nn.functional import softmax

SAMPLER_MODES = ("cpl", "wcpl", "random", "fps")


def resolve_k(n: int, ratio=None, n_points: int | None = None) -> int:
    """Output size: ``n_points`` if given, else ``round(n * ratio)`` (at least one)."""
    if n_points is not None:
        if n_points < 1:
            raise ValueError("n_points must be >= 1")
        return int(n_points)
    r = parse_ratio(ratio)
    return max(1, round(n * r))


class CriticalPointsSampler(TransformerMixin, BaseEstimator):
    """Down-sample the rows of a feature matrix.

    ``cpl`` and ``wcpl`` select from the matrix itself (features double as
    the selection scores); ``random`` and ``fps`` are the usual baselines, with
    ``fps`` using the first three columns as coordinates.
    """

    def __init__(self, ratio=0.25, n_points=None, mode="cpl", random_state=None):
        self.ratio = ratio
        self.n_points = n_points
        self.mode = mode
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if self.mode not in SAMPLER_MODES:
            raise ValueError(f"mode must be one of {SAMPLER_MODES}, got {self.mode!r}")
        resolve_k(len(X), self.ratio, self.n_points)
        self.n_features_in_ = X.shape[1]
        return self

    def select(self, X) -> np.ndarray:
        """Indices of the retained rows, in output order."""
        check_is_fitted(self, "n_features_in_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        k = resolve_k(len(X), self.ratio, self.n_points)
        if self.mode in cpl.MODES:
            return cpl.cpl_select(X, k, self.mode).resized
        if self.mode == "random":
            return cpl.downsample_random(len(X), k, np.random.default_rng(self.random_state))
        return cpl.downsample_fps(X[:, :3], k)

    def explain(self, X) -> cpl.CriticalSelection:
        if self.mode not in cpl.MODES:
            raise ValueError("explain is only defined for cpl and wcpl")
        X = check_array(X, dtype=np.float64)
        return cpl.cpl_select(X, resolve_k(len(X), self.ratio, self.n_points), self.mode)

    def transform(self, X):
        X = check_array(X, dtype=np.float64)
        return X[self.select(X)]


class CPNetClassifier(ClassifierMixin, BaseEstimator):
    """CP-Net point cloud classifier on arrays of shape ``(n_clouds, n_points, 3)``."""

    def __init__(self, knn=10, edgeconv_width=128, bottleneck=256, downsample="cpl", ratio="1/4",
                 fc_dims=(512, 256), dropout=0.5, epochs=30, batch_size=16, learning_rate=1e-3,
                 augment=True, random_state=0):
        self.knn = knn
        self.edgeconv_width = edgeconv_width
        self.bottleneck = bottleneck
        self.downsample = downsample
        self.ratio = ratio
        self.fc_dims = fc_dims
        self.dropout = dropout
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.augment = augment
        self.random_state = random_state

    def _check_clouds(self, X) -> np.ndarray:
        X = check_array(X, dtype=np.float32, allow_nd=True, ensure_2d=False)
        if X.ndim != 3 or X.shape[2] != 3:
            raise ValueError(f"expected clouds of shape (n_clouds, n_points, 3), got {X.shape}")
        return X

    def _configs(self, n_points: int, n_classes: int) -> tuple[NetworkConfig, TrainConfig]:
        seed = 0 if self.random_state is None else int(self.random_state)
        net = NetworkConfig(input_points=n_points, knn=self.knn, edgeconv_width=self.edgeconv_width,
                            bottleneck=self.bottleneck, downsample=self.downsample,
                            ratios=(parse_ratio(self.ratio),), fc_dims=tuple(self.fc_dims),
                            num_classes=n_classes, dropout=self.dropout, seed=seed)
        tr = TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                         learning_rate=self.learning_rate, augment=self.augment, seed=seed)
        return net, tr

    def fit(self, X, y):
        X = self._check_clouds(X)
        y = np.asarray(y)
        if len(y) != len(X):
            raise ValueError(f"X has {len(X)} clouds but y has {len(y)} labels")
        self.label_encoder_ = LabelEncoder().fit(y)
        self.classes_ = self.label_encoder_.classes_
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        net, tr = self._configs(X.shape[1], len(self.classes_))
        self.model_ = CPNet(net)
        result = train(self.model_, X, self.label_encoder_.transform(y), tr)
        self.train_config_ = tr
        self.optimizer_ = result.optimizer
        self.history_ = result.history
        self.n_points_in_ = X.shape[1]
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = self._check_clouds(X)
        return predict_logits(self.model_, X, sampler_seed=self.random_state)

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X).astype(np.float64))

    def predict(self, X) -> np.ndarray:
        return self.classes_[self.decision_function(X).argmax(axis=1)]

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        ckpt = Checkpoint.from_model(self.model_, self.train_config_, len(self.history_),
                                     self.optimizer_)
        ckpt.meta = {"classes": self.classes_.tolist(), "params": _jsonable(self.get_params())}
        checkpoint_save(ckpt, path)

    @classmethod
    def load(cls, path) -> "CPNetClassifier":
        ckpt = checkpoint_load(path)
        est = cls(**ckpt.meta.get("params", {}))
        est.model_ = ckpt.build_model()
        est.optimizer_ = ckpt.build_optimizer(est.model_)
        est.train_config_ = ckpt.train
        classes = ckpt.meta.get("classes", list(range(ckpt.network.num_classes)))
        est.label_encoder_ = LabelEncoder().fit(classes)
        est.classes_ = est.label_encoder_.classes_
        est.history_ = []
        est.n_points_in_ = ckpt.network.input_points
        return est


def _jsonable(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        if isinstance(v, tuple):
            v = list(v)
        elif not isinstance(v, (int, float, str, bool, type(None))):
            v = str(v)
        out[k] = v
    return out


__all__ = ["CriticalPointsSampler", "CPNetClassifier", "resolve_k"]
