"""l-inf adversarial evaluation: FGSM and iterated PGD.

Attacks maximize cross-entropy of a caller-supplied forward function (plain
network or the differentiable spectral ensemble) against ground-truth
labels, the white-box protocol used for query-set robustness. Every
returned batch is verified to sit inside the epsilon ball and [0, 1] before
it leaves this module.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Tensor
from .losses import cross_entropy

Forward = Callable[[Tensor], Tensor]


@dataclass
class AttackConfig:
    epsilon: float = 8 / 255
    step_size: float = 2 / 255
    iters: int = 20
    random_start: bool = False
    target_forward: str = "plain"  # "plain" | "ensemble"

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.iters < 0:
            raise ValueError(f"iters must be >= 0, got {self.iters}")
        if self.iters > 0 and self.step_size <= 0:
            raise ValueError("step_size must be positive when iters > 0")
        if self.target_forward not in ("plain", "ensemble"):
            raise ValueError(f"unknown target_forward {self.target_forward!r}")

    def to_meta(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "step_size": self.step_size,
            "iters": self.iters,
            "random_start": self.random_start,
            "target_forward": self.target_forward,
        }


def _input_grad(forward: Forward, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    xt = Tensor(x, requires_grad=True)
    loss = cross_entropy(forward(xt), y)
    loss.backward()
    return xt.grad


def _check_constraints(x0: np.ndarray, x_adv: np.ndarray, epsilon: float) -> None:
    linf = float(np.abs(x_adv - x0).max()) if x_adv.size else 0.0
    if linf > epsilon + 1e-6:
        raise RuntimeError(f"attack violated the l-inf ball: {linf} > {epsilon}")
    if x_adv.size and (x_adv.min() < -1e-7 or x_adv.max() > 1 + 1e-7):
        raise RuntimeError("attack produced pixels outside [0, 1]")


def fgsm(forward: Forward, x: np.ndarray, y, epsilon: float) -> np.ndarray:
    """Single sign-gradient step, clipped to the pixel range."""
    x = np.asarray(x)
    y = np.asarray(y)
    if epsilon == 0.0:
        return x.copy()
    g = _input_grad(forward, x, y)
    x_adv = np.clip(x + epsilon * np.sign(g), 0.0, 1.0)
    _check_constraints(x, x_adv, epsilon)
    return x_adv


def pgd(
    forward: Forward,
    x: np.ndarray,
    y,
    cfg: AttackConfig,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Iterated sign-gradient ascent with per-step projection onto the
    epsilon ball around x and onto [0, 1]."""
    x = np.asarray(x)
    y = np.asarray(y)
    x_adv = x.copy()
    if cfg.random_start:
        if rng is None:
            rng = np.random.default_rng(0)
        x_adv = np.clip(
            x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape).astype(x.dtype),
            0.0,
            1.0,
        )
    for _ in range(cfg.iters):
        g = _input_grad(forward, x_adv, y)
        x_adv = x_adv + cfg.step_size * np.sign(g)
        x_adv = np.clip(x_adv, x - cfg.epsilon, x + cfg.epsilon)
        x_adv = np.clip(x_adv, 0.0, 1.0)
    x_adv = x_adv.astype(x.dtype, copy=False)
    _check_constraints(x, x_adv, cfg.epsilon)
    return x_adv


def predict(forward: Forward, x: np.ndarray) -> np.ndarray:
    return forward(Tensor(x)).data.argmax(axis=-1)


def fooling_rate(forward: Forward, clean_pred: np.ndarray, x_adv: np.ndarray) -> float:
    """Fraction of samples whose argmax changed on the adversarial batch."""
    adv_pred = predict(forward, x_adv)
    clean_pred = np.asarray(clean_pred)
    if adv_pred.shape != clean_pred.shape:
        raise ValueError(
            f"prediction shapes differ: {clean_pred.shape} vs {adv_pred.shape}"
        )
    if clean_pred.size == 0:
        return 0.0
    return float((adv_pred != clean_pred).mean())
