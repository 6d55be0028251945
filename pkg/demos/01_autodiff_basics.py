"""A tour of the reverse-mode core: tapes, gradients, the optimizer, and
finite-difference checking.

Run: python demos/01_autodiff_basics.py
"""

import numpy as np

import sdparse.autodiff as ad
from sdparse.autodiff import Tape, Tensor

rng = np.random.default_rng(0)

# Build a tiny computation under a tape. Anything used inside the `with`
# block is recorded; outside a tape the same functions are plain forward math.
w = Tensor(rng.normal(size=(3, 2)), requires_grad=True, name="w")
b = Tensor(np.zeros(2), requires_grad=True, name="b")
x = Tensor(rng.normal(size=(4, 3)))

with Tape() as tape:
    h = ad.tanh(ad.add(ad.matmul(x, w), b))
    gold = Tensor((rng.uniform(size=(4, 2)) > 0.5).astype(float))
    loss = ad.sigmoid_xent(h, gold, np.ones((4, 2), dtype=bool))

ad.backward(tape, loss)
print(f"loss            : {loss.item():.6f}")
print(f"d loss / d b    : {b.grad}")

# The same gradients, measured numerically: central differences, step 1e-5.
def rebuild():
    h = ad.tanh(ad.add(ad.matmul(x, w), b))
    return ad.sigmoid_xent(h, gold, np.ones((4, 2), dtype=bool))

err = ad.gradcheck(rebuild, [w, b])
print(f"worst rel error : {err:.2e}  (tolerance 1e-4)")

# A few steps of Adam with the optimizer settings the parser trains with
# (beta1 = 0 keeps the first moment equal to the raw gradient).
params = [w, b]
state = ad.AdamState(params)
for step in range(25):
    ad.zero_grad(params)
    with Tape() as tape:
        loss = rebuild()
    ad.backward(tape, loss)
    ad.adam_step(params, state, lr=1e-2, beta1=0.0, beta2=0.95, eps=1e-12)
print(f"loss after 25 Adam steps: {rebuild().item():.6f}")
