"""Radial frequency masks and the differentiable low-pass projection.

Walks through the transform conventions: centered spectra, strict-inequality
radial masks, the complement identity, and why low_pass is a projection.
"""

import numpy as np

from lffs.autodiff import Tensor
from lffs.spectral import dft2d, high_pass, idft2d, low_pass, radial_mask

rng = np.random.default_rng(0)

# A constant image has a single nonzero coefficient: DC, shifted to (d/2, d/2).
flat = np.full((1, 8, 8), 0.5)
spec = dft2d(flat)
print("DC coefficient:", spec.coeffs[0, 4, 4].real, "(= 0.5 * 64)")
print("off-center energy:", np.abs(spec.coeffs[0]).sum() - np.abs(spec.coeffs[0, 4, 4]))

# Round trip and Parseval under the unnormalized-forward convention.
x = rng.random((3, 32, 32))
z = dft2d(x)
print("\nround-trip error:", np.abs(idft2d(z) - x).max())
print("Parseval gap:", abs((x**2).sum() - (np.abs(z.coeffs) ** 2).sum() / 32**2))

# Masks count strictly-inside grid points; low + high partition the plane.
for r in (0, 1, 4, 16):
    m = radial_mask(32, r, "low")
    print(f"mask r={r:>2}: keeps {int(m.values.sum()):>4} of 1024 bins")

# The filtered pair reconstructs the input exactly (complement identity),
# and filtering twice changes nothing (projection).
xt = Tensor(rng.random((1, 3, 32, 32)))
lo, hi = low_pass(xt, 6), high_pass(xt, 6)
print("\nlow + high == x:", np.abs(lo.data + hi.data - xt.data).max())
print("idempotent:", np.abs(low_pass(lo, 6).data - lo.data).max())

# r=1 keeps only DC: every pixel becomes the channel mean.
dc = low_pass(xt, 1)
print("r=1 equals channel means:",
      np.abs(dc.data - xt.data.mean(axis=(2, 3), keepdims=True)).max())

# The projection is linear and self-adjoint, so gradients pass straight
# through the same filter.
probe = Tensor(rng.random((1, 1, 16, 16)), requires_grad=True)
from lffs.autodiff import tsum

tsum(low_pass(probe, 3)).backward()
print("\ngradient of sum(low_pass) is the filtered all-ones image:",
      np.abs(probe.grad - low_pass(Tensor(np.ones_like(probe.data)), 3).data).max())
