"""Parameterized layers for CP-Net.

Parameters are float32 :class:`Value` leaves initialized from a caller-supplied
generator with fan-in scaled uniform weights, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``.
"""
from __future__ import annotations

from typing import Iterator, Optional, Sequence

import numpy as np

from . import functional as F
from .autodiff import Value, parameter


class Module:
    """Minimal container: tracks parameters, batch-norm states and child modules."""

    def __init__(self):
        self._params: dict[str, Value] = {}
        self._bn: dict[str, F.BatchNormState] = {}
        self._children: dict[str, Module] = {}

    def add_param(self, name: str, data) -> Value:
        value = parameter(np.asarray(data, dtype=np.float32), name)
        self._params[name] = value
        return value

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Value]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def named_bn_states(self, prefix: str = "") -> Iterator[tuple[str, F.BatchNormState]]:
        for name, s in self._bn.items():
            yield prefix + name, s
        for cname, child in self._children.items():
            yield from child.named_bn_states(f"{prefix}{cname}.")

    def parameters(self) -> dict[str, Value]:
        return dict(self.named_parameters())

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()
        for child in self._children.values():
            child.zero_grad()

    def set_bn_momentum(self, momentum: float):
        for _, state in self.named_bn_states():
            state.momentum = momentum

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Every learned or running tensor, keyed by dotted name."""
        out = {name: p.data for name, p in self.named_parameters()}
        for name, s in self.named_bn_states():
            out[f"{name}.running_mean"] = s.mean
            out[f"{name}.running_var"] = s.var
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        params = dict(self.named_parameters())
        states = dict(self.named_bn_states())
        expected = set(params) | {f"{n}.running_{k}" for n in states for k in ("mean", "var")}
        if set(arrays) != expected:
            missing, extra = expected - set(arrays), set(arrays) - expected
            raise ValueError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in params.items():
            if arrays[name].shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {arrays[name].shape} vs {p.shape}")
            p.data = np.array(arrays[name], dtype=np.float32)
        for name, s in states.items():
            s.mean = np.array(arrays[f"{name}.running_mean"], dtype=np.float32)
            s.var = np.array(arrays[f"{name}.running_var"], dtype=np.float32)


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        super().__init__()
        self.weight = self.add_param("weight", _uniform(rng, c_in, (c_in, c_out)))
        self.bias = self.add_param("bias", _uniform(rng, c_in, (c_out,)))

    def __call__(self, x) -> Value:
        return F.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    def __init__(self, width: int, momentum: float = 0.9):
        super().__init__()
        self.gamma = self.add_param("gamma", np.ones(width))
        self.beta = self.add_param("beta", np.zeros(width))
        self.state = F.BatchNormState.create(width, momentum=momentum)
        self._bn["bn"] = self.state

    def __call__(self, x, training: bool) -> Value:
        return F.batch_norm(x, self.gamma, self.beta, self.state, training)


class EdgeConv(Module):
    """Triple-kernel EdgeConv: affine -> batch norm -> ReLU per edge, then max over neighbours."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.weight = self.add_param("weight", _uniform(rng, 3 * c_in, (3 * c_in, c_out)))
        self.bias = self.add_param("bias", _uniform(rng, 3 * c_in, (c_out,)))
        self.bn = self.add_child("bn", BatchNorm(c_out))

    def __call__(self, x, neighbors, training: bool, fused: bool = True) -> Value:
        x = x if isinstance(x, Value) else Value(x)
        if x.shape[-1] != self.c_in:
            raise ValueError(f"shape mismatch: EdgeConv expects width {self.c_in}, got {x.shape[-1]}")
        if fused:
            return F.edge_conv(x, neighbors, self.weight, self.bias, self.bn.gamma, self.bn.beta,
                               self.bn.state, training)
        z = F.edge_linear(x, neighbors, self.weight, self.bias)
        return F.max_reduce(F.relu(self.bn(z, training)), axis=2)


class SharedMLP(Module):
    """Per-point chain of affine -> batch norm -> ReLU layers; ``dims`` lists widths incl. input."""

    def __init__(self, dims: Sequence[int], rng: np.random.Generator):
        super().__init__()
        if len(dims) < 2:
            raise ValueError("SharedMLP needs at least an input and an output width")
        self.dims = list(dims)
        self.layers = []
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            lin = self.add_child(f"fc{i}", Linear(a, b, rng))
            bn = self.add_child(f"bn{i}", BatchNorm(b))
            self.layers.append((lin, bn))

    def __call__(self, x, training: bool) -> Value:
        for lin, bn in self.layers:
            x = F.relu(bn(lin(x), training))
        return x


class ClassifierHead(Module):
    """Hidden FC layers (affine -> BN -> ReLU -> dropout) followed by a linear logits layer."""

    def __init__(self, c_in: int, hidden: Sequence[int], n_classes: int, dropout: float,
                 rng: np.random.Generator):
        super().__init__()
        self.dropout = dropout
        self.hidden = []
        width = c_in
        for i, h in enumerate(hidden):
            lin = self.add_child(f"fc{i}", Linear(width, h, rng))
            bn = self.add_child(f"bn{i}", BatchNorm(h))
            self.hidden.append((lin, bn))
            width = h
        self.out = self.add_child("logits", Linear(width, n_classes, rng))

    def __call__(self, v, training: bool, rng: Optional[np.random.Generator] = None) -> Value:
        for lin, bn in self.hidden:
            v = F.dropout(F.relu(bn(lin(v), training)), self.dropout, rng, training)
        return self.out(v)
