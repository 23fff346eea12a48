"""Adam with an exponentially decaying learning rate."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def decayed_lr(lr: float, step: int, decay_rate: float, decay_steps: int | None) -> float:
    """Continuous exponential decay ``lr * decay_rate ** (step / decay_steps)``."""
    if not decay_steps:
        return lr
    return lr * decay_rate ** (step / decay_steps)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> dict[str, np.ndarray]:
    """Return updated parameters; ``state`` is advanced in place. Missing grads count as zero."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = (beta1 * m + (1.0 - beta1) * g).astype(p.dtype)
        v = (beta2 * v + (1.0 - beta2) * (g * g)).astype(p.dtype)
        state.m[name], state.v[name] = m, v
        update = (lr / bc1) * m / (np.sqrt(v / bc2) + eps)
        out[name] = (p - update).astype(p.dtype)
    return out


class Adam:
    """Optimizer over a dict of :class:`~cplayer.nn.autodiff.Value` parameters."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 decay_rate: float = 0.5, decay_steps: int | None = None):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.decay_rate = decay_rate
        self.decay_steps = decay_steps
        self.state = AdamState()

    @property
    def current_lr(self) -> float:
        return decayed_lr(self.lr, self.state.t, self.decay_rate, self.decay_steps)

    def step(self):
        values = {k: p.data for k, p in self.params.items()}
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        new = adam_step(values, grads, self.state, self.current_lr, *self.betas, self.eps)
        for k, p in self.params.items():
            p.data = new[k]

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()
