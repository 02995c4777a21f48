"""Adaptive-moment optimizer with decoupled weight decay."""

import numpy as np


class AdamW:
    def __init__(self, params, lr=1.2e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-4):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        """Apply one update, then clear every gradient.

        Parameters whose ``grad`` is ``None`` are left untouched (no decay
        either), so an objective without any gradient path is a no-op.
        """
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            p.data *= 1.0 - self.lr * self.weight_decay
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        self.zero_grad()

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def state(self):
        return {"step_count": self.step_count, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}

    def load_state(self, state):
        self.step_count = int(state["step_count"])
        self.m = [np.array(a, dtype=np.float64) for a in state["m"]]
        self.v = [np.array(a, dtype=np.float64) for a in state["v"]]
