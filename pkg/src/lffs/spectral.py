"""Per-channel 2-d Fourier analysis with centered radial masks.

Conventions: the forward transform is unnormalized and the zero-frequency
bin is shifted to index (d/2, d/2); the inverse scales by 1/d^2, so
sum |x|^2 == sum |z|^2 / d^2 (Parseval). Only even, square sides are
accepted -- the integer center (d/2, d/2) is part of the contract. A fast
FFT path is used when the side is a power of two; other even sides take the
direct transform, and the two must agree to 1e-9.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, _accum, _result


@dataclass
class Spectrum:
    """Centered complex frequency planes, one per channel: [C, d, d]."""

    coeffs: np.ndarray

    @property
    def side(self) -> int:
        return self.coeffs.shape[-1]

    @property
    def channels(self) -> int:
        return self.coeffs.shape[0]


@dataclass
class FrequencyMask:
    """Binary radial mask over a centered d x d frequency plane."""

    side: int
    radius: int
    kind: str  # "low" | "high"
    values: np.ndarray


def _check_side(d: int) -> None:
    if d < 2:
        raise ValueError(f"side must be >= 2, got {d}")
    if d % 2:
        raise ValueError(f"side must be even (integer center d/2), got {d}")


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def _dft_matrix(d: int) -> np.ndarray:
    jk = np.outer(np.arange(d), np.arange(d))
    return np.exp(-2j * np.pi * jk / d)


def _fft2(x: np.ndarray, method: str) -> np.ndarray:
    d = x.shape[-1]
    if method == "auto":
        method = "fft" if _is_pow2(d) else "direct"
    if method == "fft":
        return np.fft.fft2(x)
    if method == "direct":
        w = _dft_matrix(d)
        return np.einsum("pj,...jk,kq->...pq", w, x.astype(np.complex128), w.T)
    raise ValueError(f"unknown transform method {method!r}")


def _ifft2(z: np.ndarray, method: str) -> np.ndarray:
    d = z.shape[-1]
    if method == "auto":
        method = "fft" if _is_pow2(d) else "direct"
    if method == "fft":
        return np.fft.ifft2(z)
    if method == "direct":
        w = np.conj(_dft_matrix(d))
        return np.einsum("pj,...jk,kq->...pq", w, z, w.T) / (d * d)
    raise ValueError(f"unknown transform method {method!r}")


def dft2d(image, method: str = "auto") -> Spectrum:
    """Forward transform of a [C, d, d] image, zero frequency centered."""
    x = image.data if isinstance(image, Tensor) else np.asarray(image)
    if x.ndim != 3 or x.shape[-1] != x.shape[-2]:
        raise ValueError(f"dft2d expects a square [C, d, d] input, got {x.shape}")
    _check_side(x.shape[-1])
    z = _fft2(x, method)
    return Spectrum(np.fft.fftshift(z, axes=(-2, -1)))


def idft2d(spec: Spectrum, method: str = "auto") -> np.ndarray:
    """Inverse transform; returns the real component as [C, d, d]."""
    z = np.fft.ifftshift(spec.coeffs, axes=(-2, -1))
    return _ifft2(z, method).real


_MASK_CACHE: dict[tuple[int, int, str], np.ndarray] = {}


def radial_mask(d: int, r: int, kind: str = "low") -> FrequencyMask:
    """Mask entry is 1 iff the distance from the center (d/2, d/2) is < r
    (strict); the high mask is the elementwise complement."""
    _check_side(d)
    if r < 0:
        raise ValueError(f"radius must be >= 0, got {r}")
    if kind not in ("low", "high"):
        raise ValueError(f"mask kind must be 'low' or 'high', got {kind!r}")
    key = (d, int(r), kind)
    cached = _MASK_CACHE.get(key)
    if cached is None:
        p = np.arange(d)
        dist = np.sqrt(
            (p[:, None] - d / 2) ** 2 + (p[None, :] - d / 2) ** 2
        )
        low = (dist < r).astype(np.float64)
        cached = low if kind == "low" else 1.0 - low
        _MASK_CACHE[key] = cached
    return FrequencyMask(d, int(r), kind, cached)


def apply_mask(spec: Spectrum, mask: FrequencyMask) -> Spectrum:
    if spec.side != mask.side:
        raise ValueError(
            f"mask side {mask.side} does not match spectrum side {spec.side}"
        )
    return Spectrum(spec.coeffs * mask.values)


def _band_project(x: np.ndarray, r: int, kind: str, method: str) -> np.ndarray:
    # fftshift(z) * mask == z * ifftshift(mask); skipping the spectrum shifts
    # is exactly equivalent and cheaper.
    d = x.shape[-1]
    mask = np.fft.ifftshift(radial_mask(d, r, kind).values)
    z = _fft2(x, method)
    out = _ifft2(z * mask, method).real
    return out.astype(x.dtype, copy=False)


def _filter_op(x: Tensor, r: int, kind: str, method: str) -> Tensor:
    if x.data.ndim != 4 or x.shape[-1] != x.shape[-2]:
        raise ValueError(
            f"expected [B, C, d, d] input, got shape {tuple(x.shape)}"
        )
    _check_side(x.shape[-1])
    out = _band_project(x.data, r, kind, method)

    def backward(g):
        # Orthogonal projection is self-adjoint: push the gradient through
        # the same band projection.
        _accum(x, _band_project(g, r, kind, method))

    return _result(out, (x,), backward)


def low_pass(x: Tensor, r: int, method: str = "auto") -> Tensor:
    """Keep frequencies strictly inside radius r; differentiable, unclamped."""
    return _filter_op(x, r, "low", method)


def high_pass(x: Tensor, r: int, method: str = "auto") -> Tensor:
    """Complement band: everything the low mask at the same r removes."""
    return _filter_op(x, r, "high", method)


def low_pass_array(x: np.ndarray, r: int, method: str = "auto") -> np.ndarray:
    """Non-graph variant for data pipelines: same projection on a raw array."""
    if x.ndim != 4 or x.shape[-1] != x.shape[-2]:
        raise ValueError(f"expected [B, C, d, d] input, got shape {x.shape}")
    _check_side(x.shape[-1])
    return _band_project(x, r, "low", method)
