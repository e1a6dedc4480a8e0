"""Adam with decoupled weight decay, aware of pruning masks.

Updates to prunable matrices are multiplied by the current mask, and the
first/second moments of masked-out positions are zeroed whenever the mask
is recomputed, so pruned weights stay exactly zero and hold no stale state.
Decay applies only to 2-d weight matrices (biases and norms are exempt).
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class AdamW:
    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def mask_moments(self, mask):
        """Drop optimizer state at freshly pruned positions."""
        for name, m in mask.masks.items():
            if name in self.m:
                self.m[name] *= m
                self.v[name] *= m

    def step(self, mask=None):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        masks = mask.masks if mask is not None else {}
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / b1t) / (np.sqrt(v / b2t) + self.eps)
            if self.weight_decay and p.data.ndim >= 2:
                update = update + self.weight_decay * p.data
            update *= self.lr
            bm = masks.get(name)
            if bm is not None:
                update *= bm
            p.data -= update
