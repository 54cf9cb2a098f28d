"""A tour of the reverse-mode tape: build graphs, read gradients, fit a model.

Everything in the library runs on float64 numpy through this one module, so
it is worth seeing it move on its own before it disappears under the trainer.
"""

import numpy as np

from metacl.autodiff import (
    Tensor,
    backward,
    matmul,
    parameter,
    relu,
    sgd_step,
    softmax_cross_entropy,
    tsum,
    zero_grads,
)


def scalar_chain():
    print("== a scalar chain ==")
    x = parameter(np.array(3.0))
    y = x * x + x  # d/dx (x^2 + x) = 2x + 1 = 7 at x = 3
    backward(y)
    print(f"  f(x) = x^2 + x at x=3:  f = {y.data:.1f}, df/dx = {x.grad:.1f}")


def finite_difference_spot_check():
    print("== gradient vs central difference ==")
    rng = np.random.default_rng(0)
    w = parameter(rng.normal(size=(4, 3)))
    x = Tensor(rng.normal(size=(5, 4)))
    y = rng.integers(0, 3, size=5)

    def loss():
        return softmax_cross_entropy(matmul(x, w), y)

    backward(loss())
    analytic = w.grad[1, 2]

    step = 1e-6
    w.data[1, 2] += step
    hi = loss().data
    w.data[1, 2] -= 2 * step
    lo = loss().data
    w.data[1, 2] += step
    numeric = (hi - lo) / (2 * step)
    print(f"  analytic {analytic:+.8f}  numeric {numeric:+.8f}  "
          f"|diff| {abs(analytic - numeric):.2e}")


def fit_a_small_classifier():
    print("== fit two gaussian blobs ==")
    rng = np.random.default_rng(7)
    x = np.concatenate([rng.normal(-1.5, 1.0, size=(60, 2)),
                        rng.normal(+1.5, 1.0, size=(60, 2))])
    y = np.concatenate([np.zeros(60, dtype=int), np.ones(60, dtype=int)])

    w1 = parameter(0.5 * rng.normal(size=(2, 8)))
    b1 = parameter(np.zeros(8))
    w2 = parameter(0.5 * rng.normal(size=(8, 2)))
    b2 = parameter(np.zeros(2))
    params = [w1, b1, w2, b2]

    for step in range(201):
        hidden = relu(matmul(Tensor(x), w1) + b1)
        logits = matmul(hidden, w2) + b2
        loss = softmax_cross_entropy(logits, y)
        if step % 50 == 0:
            acc = (logits.data.argmax(axis=1) == y).mean()
            print(f"  step {step:3d}  loss {loss.data:.4f}  acc {acc:.3f}")
        zero_grads(params)
        backward(loss)
        sgd_step(params, lr=0.5)


def fan_out_accumulates():
    print("== one tensor used twice accumulates both paths ==")
    a = parameter(np.array([1.0, 2.0]))
    out = tsum(a * a) + tsum(a)  # grad = 2a + 1
    backward(out)
    print(f"  d(sum(a^2) + sum(a))/da = {a.grad}  (expected 2a+1 = [3. 5.])")


if __name__ == "__main__":
    scalar_chain()
    finite_difference_spot_check()
    fit_a_small_classifier()
    fan_out_accumulates()
