from .autodiff import Value, as_value, parameter
from .functional import (
    BatchNormState,
    batch_norm,
    concat,
    dropout,
    edge_conv,
    edge_features,
    edge_linear,
    gather_rows,
    global_max_pool,
    linear,
    max_reduce,
    relu,
    softmax_cross_entropy,
)
from .knn import KTooLarge, knn_batch, knn_build
from .layers import BatchNorm, ClassifierHead, EdgeConv, Linear, Module, SharedMLP
from .optim import Adam, AdamState, adam_step, decayed_lr

gather_rows_diff = gather_rows

__all__ = [
    "Adam", "AdamState", "BatchNorm", "BatchNormState", "ClassifierHead", "EdgeConv",
    "KTooLarge", "Linear", "Module", "SharedMLP", "Value", "adam_step", "as_value",
    "batch_norm", "concat", "decayed_lr", "dropout", "edge_conv", "edge_features", "edge_linear",
    "gather_rows", "gather_rows_diff", "global_max_pool", "knn_batch", "knn_build",
    "linear", "max_reduce", "parameter", "relu", "softmax_cross_entropy",
]
