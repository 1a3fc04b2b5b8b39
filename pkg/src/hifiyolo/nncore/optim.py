"""AdamW with decoupled weight decay."""

from __future__ import annotations

import numpy as np


class AdamW:
    def __init__(self, params, lr=0.002, weight_decay=0.01, betas=(0.9, 0.999), eps=1e-8, decay_filter=None):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        # by default only multi-dimensional weights are decayed, never biases
        self.decay_filter = decay_filter or (lambda p: p.data.ndim > 1)
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if self.weight_decay and self.decay_filter(p):
                p.data = p.data - (lr * self.weight_decay) * p.data
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - lr * update).astype(p.data.dtype, copy=False)

    def state_dict(self):
        state = {"t": np.array([self.t], dtype=np.float32)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            state[f"m.{i}"] = m
            state[f"v.{i}"] = v
        return state

    def load_state_dict(self, state):
        self.t = int(np.asarray(state["t"]).ravel()[0])
        for i, p in enumerate(self.params):
            self.m[i] = np.asarray(state[f"m.{i}"], dtype=p.data.dtype).reshape(p.shape).copy()
            self.v[i] = np.asarray(state[f"v.{i}"], dtype=p.data.dtype).reshape(p.shape).copy()
