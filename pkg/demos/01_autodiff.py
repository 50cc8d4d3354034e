"""A short tour of the tensor engine that the model is built on.

Every op records itself on a tape as it runs; ``backward`` walks the tape in
reverse. Here we differentiate a tiny two-layer network and compare the result
with central differences.
"""

import numpy as np

from mergelabel import tensor as T
from mergelabel.tensor import Tensor

rng = np.random.default_rng(0)

with T.precision(np.float64):
    x = Tensor(rng.normal(size=(5, 3)))
    w1 = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    w2 = Tensor(rng.normal(size=(4, 1)), requires_grad=True)

    def loss():
        h = T.selu(T.matmul(x, w1))
        return T.reduce("mean", T.softplus(T.matmul(h, w2)))

    value = loss()
    T.backward(value)
    print(f"loss {value.item():.6f}")

    # central differences on every entry of w1
    numeric = np.zeros_like(w1.data)
    flat = w1.data.reshape(-1)
    with T.no_grad():
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + 1e-6
            up = loss().item()
            flat[i] = keep - 1e-6
            down = loss().item()
            flat[i] = keep
            numeric.reshape(-1)[i] = (up - down) / 2e-6

print("backprop  ", np.round(w1.grad[0], 6))
print("numerical ", np.round(numeric[0], 6))
print(f"max difference {np.abs(w1.grad - numeric).max():.2e}")

# broadcasting: the gradient of a broadcast operand is summed back to its shape
with T.precision(np.float64):
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.arange(3.0), requires_grad=True)
    T.backward(T.reduce("sum", a * b))
print("d/db of sum(a*b) over 2 rows:", b.grad)
