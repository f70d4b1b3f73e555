"""First-order optimizers over flat parameter vectors.

State never persists across runs: construct a fresh optimizer per
adaptation or training call.
"""
from __future__ import annotations

import numpy as np

OPTIMIZERS = ("sgd", "adam", "adamw")


class Optimizer:
    def __init__(self, kind: str, lr: float):
        if kind not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {kind!r}")
        if lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {lr}")
        self.kind = kind
        self.lr = lr
        self.beta1 = 0.9
        self.beta2 = 0.999
        self.eps = 1e-8
        self.weight_decay = 0.01 if kind == "adamw" else 0.0
        self._m = None
        self._v = None
        self._t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Return updated parameters; never mutates the input."""
        if self.kind == "sgd":
            return params - self.lr * grad
        if self._m is None:
            self._m = np.zeros_like(params)
            self._v = np.zeros_like(params)
        self._t += 1
        self._m = self.beta1 * self._m + (1.0 - self.beta1) * grad
        self._v = self.beta2 * self._v + (1.0 - self.beta2) * grad * grad
        mhat = self._m / (1.0 - self.beta1**self._t)
        vhat = self._v / (1.0 - self.beta2**self._t)
        out = params - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        if self.weight_decay:
            out = out - self.lr * self.weight_decay * params
        return out
