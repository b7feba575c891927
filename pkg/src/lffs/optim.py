"""SGD-with-momentum and Adam, with constant or cosine-annealed learning rate.

The cosine schedule is epoch-indexed: rate(e) = lr * (1 + cos(pi * e / E)) / 2,
so it equals lr at epoch 0 and 0 at epoch E. Adam bias correction always uses
the per-step counter, never the epoch.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor


def cosine_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    if total_epochs <= 0:
        raise ValueError("cosine_lr: total_epochs must be >= 1")
    return base_lr * (1.0 + math.cos(math.pi * epoch / total_epochs)) / 2.0


class Optimizer:
    """Per-parameter-state optimizer over a list of tensors.

    kind: "sgd-momentum" or "adam". schedule: "constant" or "cosine"
    (cosine requires total_epochs; call set_epoch at each epoch boundary).
    """

    def __init__(
        self,
        params: list[Tensor],
        kind: str = "sgd-momentum",
        lr: float = 1e-2,
        momentum: float = 0.9,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        schedule: str = "constant",
        total_epochs: int | None = None,
    ):
        if kind not in ("sgd-momentum", "adam"):
            raise ValueError(f"unknown optimizer kind {kind!r}")
        if schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {schedule!r}")
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        if schedule == "cosine" and not total_epochs:
            raise ValueError("cosine schedule requires total_epochs")
        self.params = list(params)
        self.kind = kind
        self.base_lr = lr
        self.momentum = momentum
        self.betas = betas
        self.eps = eps
        self.schedule = schedule
        self.total_epochs = total_epochs
        self.step_count = 0
        self.epoch = 0
        if kind == "sgd-momentum":
            self._buf = [np.zeros_like(p.data) for p in self.params]
        else:
            self._m = [np.zeros_like(p.data) for p in self.params]
            self._v = [np.zeros_like(p.data) for p in self.params]

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def current_lr(self) -> float:
        if self.schedule == "cosine":
            return cosine_lr(self.base_lr, self.epoch, self.total_epochs)
        return self.base_lr

    def step(self) -> None:
        """Apply one update from the accumulated gradients."""
        lr = self.current_lr()
        self.step_count += 1
        if self.kind == "sgd-momentum":
            for p, buf in zip(self.params, self._buf):
                if p.grad is None:
                    continue
                if self.momentum:
                    buf *= self.momentum
                    buf += p.grad
                    p.data -= (lr * buf).astype(p.data.dtype, copy=False)
                else:
                    p.data -= (lr * p.grad).astype(p.data.dtype, copy=False)
        else:
            b1, b2 = self.betas
            t = self.step_count
            for p, m, v in zip(self.params, self._m, self._v):
                if p.grad is None:
                    continue
                m *= b1
                m += (1 - b1) * p.grad
                v *= b2
                v += (1 - b2) * (p.grad * p.grad)
                mhat = m / (1 - b1**t)
                vhat = v / (1 - b2**t)
                p.data -= (lr * mhat / (np.sqrt(vhat) + self.eps)).astype(
                    p.data.dtype, copy=False
                )

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
