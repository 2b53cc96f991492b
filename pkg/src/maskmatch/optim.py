"""AdamW with decoupled weight decay and a warmup-then-cosine schedule."""

from __future__ import annotations

import math

import numpy as np


def lr_at(iteration, base_lr, warmup_iterations, total_iterations):
    """Linear warmup to ``base_lr`` then cosine decay to zero."""
    if warmup_iterations > 0 and iteration < warmup_iterations:
        return base_lr * (iteration + 1) / warmup_iterations
    span = max(1, total_iterations - warmup_iterations)
    progress = (iteration - warmup_iterations) / span
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * min(progress, 1.0)))


class AdamW:
    """Keeps first/second moment estimates per parameter name.

    Weight decay is decoupled and applied only to matrices (ndim >= 2);
    biases, norm gains, and the mask token are exempt. Parameters without
    a gradient in a step (e.g. the decoder while the reconstruction branch
    is disabled) are left completely untouched.
    """

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads, lr):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, g in grads.items():
            p = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            if self.weight_decay > 0.0 and p.ndim >= 2:
                p *= 1.0 - lr * self.weight_decay
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_dict(self):
        return {"step": self.step_count,
                "m": {k: v.copy() for k, v in self.m.items()},
                "v": {k: v.copy() for k, v in self.v.items()}}

    def load_state_dict(self, state):
        self.step_count = int(state["step"])
        self.m = {k: v.copy() for k, v in state["m"].items()}
        self.v = {k: v.copy() for k, v in state["v"].items()}
