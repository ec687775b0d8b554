"""A tour of the differentiation engine.

Builds a tiny expression graph by hand, runs the reverse sweep, and
shows the finite-difference oracle that every differentiable op in the
package is tested against.
"""

import numpy as np

from clspool import autodiff as ad
from clspool.autodiff import Tensor

rng = np.random.default_rng(0)

# forward: a 3x4 input through a projection, a softmax, and a sum
x = Tensor(rng.standard_normal((3, 4)), trainable=True)
w = Tensor(rng.standard_normal((4, 4)) * 0.5, trainable=True)

hidden = ad.tanh(ad.matmul(x, w))
attn = ad.softmax(hidden, axis=1)
loss = ad.tensor_sum(ad.mul(attn, Tensor(rng.standard_normal((3, 4)))))
print(f"loss = {float(loss.values):+.6f}")

# the graph is the execution record; inputs always precede consumers
graph = ad.Graph.trace(loss)
print(f"graph holds {len(graph.ops)} recorded ops")

ad.backward(loss, graph)
print(f"dL/dx row 0: {np.array2string(x.grad[0], precision=4)}")
print(f"dL/dw row 0: {np.array2string(w.grad[0], precision=4)}")

# central differences agree with the reverse sweep to ~1e-8


def rebuild(t):
    h = ad.tanh(ad.matmul(t, w))
    return ad.tensor_sum(ad.softmax(h, axis=1))


err = ad.finite_diff_check(rebuild, x)
print(f"finite-difference check: max relative error {err:.2e}")

# top-k softmax keeps only the strongest scores per row
scores = Tensor(rng.standard_normal((2, 6)))
sparse = ad.topk_softmax(scores, k=2, axis=1)
print("top-2 softmax rows (zeros for dropped entries):")
print(np.array2string(sparse.values, precision=3, suppress_small=True))
