"""Adam with bias correction, keyed by parameter name."""
from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, state=None):
        if lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {lr}")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        state = state or {}
        self.t = int(state.get("t", 0))
        self.m = dict(state.get("m", {}))
        self.v = dict(state.get("v", {}))

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update ``params`` in place from same-named ``grads``."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in params.items():
            g = grads[name]
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            if self.lr:
                p -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
