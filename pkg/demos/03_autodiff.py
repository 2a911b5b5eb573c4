"""
Reverse-mode gradients on numpy
===============================

The model trains on a small tape-based autodiff layer.  Ops record
themselves while a ``Tape`` is open; ``backward`` replays them in reverse.
"""

import numpy as np

from sparseprime import ndcompute as nd

rng = np.random.default_rng(0)
x = rng.normal(size=(5, 3))
w = nd.Tensor(rng.normal(size=(3, 2)), requires_grad=True, name="w")
b = nd.Tensor(np.zeros(2), requires_grad=True, name="b")


def loss():
    h = nd.gelu(nd.add(nd.matmul(x, w), b))
    return nd.mean(nd.mul(h, h))


with nd.Tape() as tape:
    value = loss()
    tape.backward(value)
print("loss:", value.item())
print("dL/dw:\n", w.grad)

# Central differences agree with the tape to high precision in float64.
print("gradcheck max rel error:", nd.gradcheck(loss, [w, b]))

# One SGD step lowers the loss.
nd.sgd_step([w, b], [w.grad, b.grad], lr=0.1)
print("loss after one step:", loss().item())

# Outside a tape nothing is recorded, so inference carries no overhead.
with nd.Tape() as idle:
    nd.relu(nd.Tensor(x))
print("ops recorded for constant inputs:", len(idle.records))
