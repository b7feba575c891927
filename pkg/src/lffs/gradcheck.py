"""Central-difference gradient oracle.

Run under 64-bit precision; float32 rounding swamps the tolerances this is
meant to certify.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autodiff import Tensor


def finite_diff_check(
    f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5
) -> float:
    """Max relative error between analytic and central-difference gradients.

    The analytic gradient comes from one backward pass of f at x; the numeric
    one perturbs each coordinate by +-h. Error per coordinate is
    |ga - gn| / max(1, |ga|, |gn|).
    """
    x.grad = None
    out = f(x)
    out.backward()
    if x.grad is None:
        raise ValueError("finite_diff_check: f does not depend on x")
    analytic = x.grad.copy()

    flat = x.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x).data)
        flat[i] = orig - h
        fm = float(f(x).data)
        flat[i] = orig
        numeric[i] = (fp - fm) / (2 * h)
    numeric = numeric.reshape(x.data.shape)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float((np.abs(analytic - numeric) / denom).max())
