"""Tour of the reverse-mode tape engine.

Builds small computations out of the differentiable ops, checks a gradient
against central finite differences, and shows the analytic input-gradient of
a critic stack (the tool behind the gradient penalty).
"""

import numpy as np

from cyclecomplete import autodiff as ad

print("== forward ops ==")
M = np.arange(9.0).reshape(3, 3)
print("matmul(I3, M) equals M:", np.array_equal(ad.matmul(ad.constant(np.eye(3)), ad.constant(M)).data, M))
print("sum(square([1,2,3])) =", ad.sum_(ad.square(ad.constant([1.0, 2.0, 3.0]))).item())

pooled = ad.max_axis(ad.constant([[1.0, 5.0], [7.0, 2.0]]), axis=0)
print("max over axis 0:", pooled.data, " argmax:", pooled.argmax)

print("\n== backward ==")
x = ad.variable([1.0, -2.0])
loss = ad.sum_(ad.square(x))
grads = ad.backward(loss)
print("d/dx sum(x^2) =", grads.wrt(x), " (analytic 2x)")

print("\n== finite-difference check on a small MLP ==")
rng = np.random.default_rng(0)
W1 = ad.variable(rng.normal(size=(3, 8)))
W2 = ad.variable(rng.normal(size=(8, 1)))
inputs = ad.constant(rng.normal(size=(16, 3)))


def build():
    h = ad.leaky_relu(ad.matmul(inputs, W1))
    return ad.mean(ad.tanh(ad.matmul(h, W2)))


analytic = ad.backward(build()).wrt(W1)
step = 1e-5
numeric = np.zeros_like(W1.data)
flat, nflat = W1.data.ravel(), numeric.ravel()
for i in range(flat.size):
    orig = flat[i]
    flat[i] = orig + step
    up = build().item()
    flat[i] = orig - step
    down = build().item()
    flat[i] = orig
    nflat[i] = (up - down) / (2 * step)
print("max |analytic - numeric|:", np.abs(analytic - numeric).max())

print("\n== critic input gradient ==")
# A linear critic D(v) = w . v has input gradient w everywhere.
w = ad.constant(np.array([[2.0], [0.0], [0.0]]))
g = ad.critic_input_gradient([(w, None, "identity")], ad.constant(np.zeros((4, 3))))
print("grad rows:", g.data[0], " norm:", ad.l2_norm_rows(g).data[0])

# The gradient-penalty term (||grad|| - 1)^2 built from it is itself a tape
# node, so it can be differentiated with respect to the critic weights.
penalty = ad.mean(ad.square(ad.sub(ad.l2_norm_rows(g), ad.constant(1.0))))
print("penalty at ||w||=2:", penalty.item(), " (analytic (2-1)^2 = 1)")
