"""Global floating-point precision for tensor data.

Training runs use 32-bit floats; gradient-oracle tests switch to 64-bit,
where central-difference checks can actually resolve 1e-5 relative errors.
The mode is a process-wide setting, not a per-tensor one.
"""

from contextlib import contextmanager

import numpy as np

_DTYPE = np.float32


def set_precision(bits: int) -> None:
    """Set the global float width. Accepts 32 or 64."""
    global _DTYPE
    if bits == 32:
        _DTYPE = np.float32
    elif bits == 64:
        _DTYPE = np.float64
    else:
        raise ValueError(f"precision must be 32 or 64, got {bits}")


def float_dtype() -> np.dtype:
    return np.dtype(_DTYPE)


def precision_bits() -> int:
    return 64 if _DTYPE is np.float64 else 32


@contextmanager
def precision(bits: int):
    """Temporarily switch precision; restores the previous mode on exit."""
    prev = precision_bits()
    set_precision(bits)
    try:
        yield
    finally:
        set_precision(prev)
