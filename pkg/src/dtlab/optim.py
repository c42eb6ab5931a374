"""Adaptive-moment optimizer with decoupled weight decay.

Update rule per parameter w with gradient g at step t (1-indexed):

    m <- b1*m + (1-b1)*g          v <- b2*v + (1-b2)*g^2
    w <- w - lr_t * ( m/(1-b1^t) / (sqrt(v/(1-b2^t)) + eps) + wd*w )

lr_t ramps linearly from 0 to lr over `warmup_steps`, then stays
constant. Gradients are clipped by global L2 norm before the update.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor

__all__ = ["AdamW", "MissingGradientError", "global_grad_norm"]


class MissingGradientError(RuntimeError):
    """step() was called before backward populated every gradient."""


def global_grad_norm(params) -> float:
    """L2 norm of all gradients concatenated; absent grads count as zero."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            g = p.grad.astype(np.float64, copy=False)
            total += float(np.sum(g * g))
    return math.sqrt(total)


class AdamW:
    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 1e-4,
        warmup_steps: int = 0,
        clip_norm: float | None = 0.25,
    ):
        self.params = {name: p for name, p in params.items() if p.requires_grad}
        if not self.params:
            raise ValueError("optimizer received no trainable parameters")
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.warmup_steps = int(warmup_steps)
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def effective_lr(self, t: int | None = None) -> float:
        """Learning rate at step t: linear ramp over warmup, then flat."""
        if t is None:
            t = self.t + 1
        if self.warmup_steps > 0 and t < self.warmup_steps:
            return self.lr * t / self.warmup_steps
        return self.lr

    def clip_gradients(self) -> float:
        """Scale all gradients so their global norm is at most clip_norm.

        Returns the pre-clip norm.
        """
        norm = global_grad_norm(self.params.values())
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = np.float32(self.clip_norm / norm)
            for p in self.params.values():
                if p.grad is not None:
                    p.grad = p.grad * scale
        return norm

    def step(self) -> float:
        """Apply one update; returns the learning rate used."""
        for name, p in self.params.items():
            if p.grad is None:
                raise MissingGradientError(
                    f"step before backward: parameter {name!r} has no gradient"
                )
        if self.clip_norm is not None:
            self.clip_gradients()
        self.t += 1
        lr_t = self.effective_lr(self.t)
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += np.float32(1.0 - self.beta1) * g
            v *= self.beta2
            v += np.float32(1.0 - self.beta2) * (g * g)
            update = (m / np.float32(bc1)) / (np.sqrt(v / np.float32(bc2)) + np.float32(self.eps))
            if self.weight_decay != 0.0:
                update = update + np.float32(self.weight_decay) * p.data
            p.data -= np.float32(lr_t) * update
        return lr_t

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        for k in self.m:
            self.m[k][...] = state["m"][k]
            self.v[k][...] = state["v"][k]
