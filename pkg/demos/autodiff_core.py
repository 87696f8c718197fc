"""The reverse-mode tensor core, stripped to essentials.

Builds a two-layer net on random data, backprops a loss, and compares
every analytic gradient against central finite differences.
"""

import numpy as np

from jointhrrp import tensor as T
from jointhrrp.tensor import Tensor

rng = np.random.default_rng(0)

x = Tensor(rng.normal(size=(8, 16)))
w1 = Tensor(rng.normal(size=(12, 16)) * 0.3, requires_grad=True)
b1 = Tensor(np.zeros(12), requires_grad=True)
w2 = Tensor(rng.normal(size=(3, 12)) * 0.3, requires_grad=True)

h = T.relu(T.linear(x, w1, b1))
logits = T.linear(h, w2)
y = np.array([0, 1, 2, 0, 1, 2, 0, 1])
loss = T.ce_with_logits(logits, y)
loss.backward()

print(f"loss {loss.item():.4f}")
print(f"|dL/dw1| mean {np.abs(w1.grad).mean():.5f}, "
      f"|dL/dw2| mean {np.abs(w2.grad).mean():.5f}")


def f():
    hh = T.relu(T.linear(x, w1, b1))
    return T.ce_with_logits(T.linear(hh, w2), y)


max_rel, n, skipped = T.grad_check(f, [w1, b1, w2])
print(f"finite differences: {n} coordinates checked, "
      f"worst relative error {max_rel:.2e}, {skipped} skipped")
