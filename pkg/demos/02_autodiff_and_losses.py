"""The reverse-mode tensor core: graphs, losses, and the gradient oracle.

Shows the define-by-run style, the training losses, and how every gradient
in the library is validated against central differences.
"""

import numpy as np

from lffs import autodiff as ad
from lffs.autodiff import Tensor
from lffs.gradcheck import finite_diff_check
from lffs.losses import cosine_similarity, cross_entropy, entropy_loss, kl_div_loss
from lffs.precision import precision

# Scalars out of small graphs: backward fills .grad along the way.
w = Tensor([1.0, 2.0, 3.0], requires_grad=True)
loss = ad.dot(w, w)
loss.backward()
print("d/dw sum(w^2) =", w.grad, "(expect 2w)")

# The classification losses, on hand-checkable logits.
logits = Tensor([[np.log(3.0), 0.0]])
print("\ncross-entropy([[ln3, 0]], label 0):", cross_entropy(logits, [0]).item(),
      "= -ln(3/4) =", -np.log(0.75))
print("entropy of uniform over 5:", entropy_loss(Tensor([[0.0] * 5])).item(),
      "= ln 5 =", np.log(5.0))
print("cosine of identical rows:",
      cosine_similarity(Tensor([[1.0, 2.0]]), Tensor([[1.0, 2.0]])).item())
print("KL teacher [[ln3,0]] vs uniform student:",
      kl_div_loss(Tensor([[0.0, 0.0]]), logits).item())

# A small conv stack, differentiated end to end.
rng = np.random.default_rng(0)
x = Tensor(rng.random((2, 3, 8, 8)).astype(np.float32), requires_grad=True)
k = Tensor(rng.standard_normal((4, 3, 3, 3)).astype(np.float32), requires_grad=True)
y = ad.max_pool2d(ad.relu(ad.conv2d(x, k, stride=1, pad=1)), 2)
ad.tsum(y).backward()
print("\nconv stack grads:", x.grad.shape, k.grad.shape)

# Everything above is certified by the finite-difference oracle in 64-bit
# mode; the same check guards every op in the test suite.
with precision(64):
    probe = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    err = finite_diff_check(lambda t: cross_entropy(t, [0, 1, 2, 0]), probe)
    print("cross-entropy max relative gradient error:", err)
