#!/usr/bin/env python3
"""Tour of the tensor core: forward ops, reverse-mode gradients, Adam.

Everything the models in this package do reduces to the handful of
primitives exercised here. Run it from the repo root:

    python3 demos/01_autodiff_basics.py
"""

import numpy as np

from vs30net import ndnet as nd
from vs30net.ndnet import AdamState, LayerParams, adam_step


def section(title):
    print(f"\n=== {title} ===")


section("forward and backward")
x = nd.Tensor(np.array([[1.0, -2.0], [3.0, 0.5]], dtype=np.float32),
              requires_grad=True)
y = nd.tsum(nd.square(nd.relu(x)))
print("x =\n", x.data)
print("sum(relu(x)^2) =", float(y.data))
y.backward()
print("d/dx =\n", x.grad)  # 2x where x > 0, else 0


section("gradients match finite differences")
rng = np.random.default_rng(0)
w = rng.normal(size=(4, 3, 5)).astype(np.float32)
inp = rng.normal(size=(2, 3, 30)).astype(np.float32)
b = np.zeros(4, dtype=np.float32)

tw = nd.Tensor(w.copy(), requires_grad=True)
out = nd.conv1d(nd.Tensor(inp), tw, nd.Tensor(b), dilation=2, padding="causal")
nd.tsum(nd.square(out)).backward()

h = 1e-3
probe = np.zeros_like(w)
probe[1, 2, 3] = h


def loss_at(weights):
    t = nd.conv1d(nd.Tensor(inp), nd.Tensor(weights.astype(np.float32)),
                  nd.Tensor(b), dilation=2, padding="causal")
    return float(nd.tsum(nd.square(t)).data)


fd = (loss_at(w + probe) - loss_at(w - probe)) / (2 * h)
print(f"analytic dL/dw[1,2,3] = {tw.grad[1, 2, 3]:+.6f}")
print(f"finite difference     = {fd:+.6f}")


section("Adam fits a linear map")
true_w = np.array([[2.0, -1.0], [0.5, 3.0]], dtype=np.float32)
xs = rng.normal(size=(64, 2)).astype(np.float32)
ys = xs @ true_w.T

weight = LayerParams("fit.weight", nd.Tensor(
    rng.normal(scale=0.1, size=(2, 2)).astype(np.float32), requires_grad=True))
bias = LayerParams("fit.bias", nd.Tensor(
    np.zeros(2, dtype=np.float32), requires_grad=True))
params = [weight, bias]
state = AdamState(base_lr=0.05, decay_epochs=())

for step in range(300):
    for p in params:
        p.tensor.grad = None
    pred = nd.dense(nd.Tensor(xs), weight.tensor, bias.tensor)
    loss = nd.loss(pred, nd.Tensor(ys), "MSE")
    loss.backward()
    adam_step(params, state, epoch=1)
    if step % 100 == 0 or step == 299:
        print(f"step {step:3d}  mse {float(loss.data):.6f}")

print("recovered weights:\n", np.round(weight.tensor.data, 3))
print("target weights:\n", true_w)
