"""
Tape-based gradients on float64 arrays
======================================

A ``Tensor`` records every operation; ``backward`` walks the tape in
reverse.  Central differences give an independent check.
"""

import numpy as np

from hmhi import tensor as T
from hmhi.gradcheck import finite_difference_check
from hmhi.nn import Attention
from hmhi.tensor import Rng, Tensor

rng = Rng(0)

# a tiny expression: y = sum(softmax(x @ w))**2
x = Tensor(rng.normal((3, 4)))
w = Tensor(rng.normal((4, 5)), requires_grad=True)
y = T.power(T.sum_(T.softmax(T.matmul(x, w), axis=-1) * Tensor(np.arange(5.0))), 2)
y.backward()
print("y =", y.item())
print("dy/dw[0] =", w.grad[0])

# the tape is consumed by backward, a second call is an error
try:
    y.backward()
except T.GraphError as exc:
    print("second backward:", exc)

# compare every parameter of an attention block with finite differences
att = Attention(4, rng, kv_dim=3)
q, kv = Tensor(rng.normal((2, 4))), Tensor(rng.normal((6, 3)))
report = finite_difference_check(lambda: T.sum_(att(q, kv)), att.parameters())
for line in report.lines():
    print(line)
print("all within 1e-4:", report.passed)
