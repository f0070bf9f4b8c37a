"""AdamW with decoupled weight decay, restricted to trainable parameters."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class OptimizerError(RuntimeError):
    pass


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


class AdamW:
    def __init__(self, named_params, lr=1e-5, weight_decay=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        # frozen parameters never enter the state
        self.params = [(n, p) for n, p in named_params if getattr(p, "trainable", True)]
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = OptimizerState(
            m={n: np.zeros_like(p.data) for n, p in self.params},
            v={n: np.zeros_like(p.data) for n, p in self.params},
        )

    @classmethod
    def from_config(cls, named_params, cfg) -> "AdamW":
        return cls(named_params, lr=cfg.lr, weight_decay=cfg.weight_decay,
                   beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self) -> None:
        for name, p in self.params:
            if p.grad is None:
                raise OptimizerError(f"trainable parameter {name} has no gradient")
        st = self.state
        st.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** st.t
        c2 = 1.0 - b2 ** st.t
        for name, p in self.params:
            g = p.grad.astype(p.data.dtype, copy=False)
            m = st.m[name]
            v = st.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            m_hat = m / c1
            v_hat = v / c2
            update = m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p.data
            p.data = np.asarray(p.data - self.lr * update, dtype=p.data.dtype)
