"""Walk through the tensor core: build a graph, run backward, check it.

Everything in the library flows through rank-4 (n, c, h, w) tensors, so
even scalars live as (1, 1, 1, 1). That sounds rigid but removes a whole
class of shape bugs: there is exactly one layout.
"""
import numpy as np

from lesionseg import Tensor, backward, conv2d, relu, sigmoid, sum_all

rng = np.random.default_rng(0)

# a leaf with requires_grad collects gradients; plain constants do not
x = Tensor(rng.normal(size=(1, 2, 6, 6)), requires_grad=True)
w = Tensor(rng.normal(size=(3, 2, 3, 3)) * 0.2, requires_grad=True)

# forward: conv -> relu -> sigmoid -> scalar
y = sum_all(sigmoid(relu(conv2d(x, w, None, padding=1))))
print("loss value:", float(y.data.reshape(())))

backward(y)
print("dL/dx shape:", x.grad.shape, " |dL/dx| max:", np.abs(x.grad).max())
print("dL/dw shape:", w.grad.shape, " |dL/dw| max:", np.abs(w.grad).max())

# spot check one weight entry against a central difference
i = 7
flat = w.data.reshape(-1)
eps = 1e-6
keep = flat[i]
flat[i] = keep + eps
hi = float(sum_all(sigmoid(relu(conv2d(
    Tensor._const(x.data), Tensor._const(w.data), None,
    padding=1)))).data.reshape(()))
flat[i] = keep - eps
lo = float(sum_all(sigmoid(relu(conv2d(
    Tensor._const(x.data), Tensor._const(w.data), None,
    padding=1)))).data.reshape(()))
flat[i] = keep
fd = (hi - lo) / (2 * eps)
an = w.grad.reshape(-1)[i]
print(f"weight[{i}]: analytic {an:.10f} vs finite diff {fd:.10f}")

# the graph is single-use: a second backward through the same nodes is a
# refusal, not a silent wrong answer
try:
    backward(y)
except RuntimeError as exc:
    print("second backward refused:", exc)
