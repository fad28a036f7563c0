"""A short tour of the tape: build an expression, backpropagate, check it numerically."""

import numpy as np

from dergcn import numerics as nx
from dergcn.errors import NonFinite
from dergcn.numerics import Tensor

rng = np.random.default_rng(0)

# A tiny two-layer scorer: softmax(tanh(x W1) W2), scored against class 2.
W1 = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
W2 = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
x = Tensor(rng.normal(size=(2, 4)))

P = nx.softmax(nx.tanh(x @ W1) @ W2, axis=1)
loss = -nx.mean(nx.log(P[:, 2]))
nx.backward(loss)
print(f"loss = {loss.item():.6f}")
print("dloss/dW1 row 0:", np.round(W1.grad[0], 6))

# The same gradient by central differences, one component at a time.
err = nx.finite_diff_check(
    lambda w: -nx.mean(nx.log(nx.softmax(nx.tanh(x @ w) @ W2.detach(), axis=1)[:, 2])), W1.data)
print(f"worst relative gap to finite differences: {err:.2e}")

# Gradients accumulate until cleared, so a second backward pass doubles them.
first = W1.grad.copy()
nx.backward(-nx.mean(nx.log(nx.softmax(nx.tanh(x @ W1) @ W2, axis=1)[:, 2])))
print("after a second backward, grad doubled:", np.allclose(W1.grad, 2 * first))

# Non-finite values are errors at the op that produced them.
try:
    nx.log(Tensor([0.0]))
except NonFinite as exc:
    print(f"{type(exc).__name__}: {exc}")
