"""A look inside the reverse-mode gradient engine.

Operations execute eagerly on numpy arrays; inside a GradTape context each
op also records its vector-Jacobian product. backward() replays the tape
once, in reverse creation order, and returns gradients keyed by parameter.
"""

import numpy as np

from capmatch import tensor as T
from capmatch.gradcheck import (finite_difference_grad, max_rel_error,
                                run_gradcheck)

# A tiny model: two parameters, a softmax, a weighted readout.
w = T.param(np.array([[0.3, -0.2], [0.1, 0.5]]), dtype=np.float64)
b = T.param(np.array([0.05, -0.1]), dtype=np.float64)
x = T.tensor(np.array([[1.0, 2.0], [0.5, -1.0], [2.0, 0.0]]),
             dtype=np.float64)

def forward():
    logits = T.add(T.matmul(x, w), b)
    probs = T.softmax_rows(logits)
    return T.mean_all(T.mul(probs, logits))

with T.GradTape() as tape:
    loss = forward()
grads = T.backward(loss, tape)
print("loss:", loss.item())
print("grad w:\n", grads[w])
print("grad b:", grads[b])

# Central finite differences agree to many digits in float64.
for name, p in (("w", w), ("b", b)):
    fd = finite_difference_grad(lambda: forward().item(), p)
    print(f"max relative error vs finite differences ({name}):",
          f"{max_rel_error(grads[p], fd):.2e}")

# The packaged suite drives the full pipeline (interaction -> matching ->
# losses) for every parameter group; `capmatch gradcheck` wraps the same
# entry point.
worst = run_gradcheck([0])
print("\nfull-pipeline gradient check (seed 0):")
for group in sorted(worst):
    print(f"  {group:<18} {worst[group]:.2e}")
