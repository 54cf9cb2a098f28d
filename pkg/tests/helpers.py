"""Shared test oracles.

The finite-difference checker is deliberately independent of the autodiff
backward path: it re-evaluates the loss through fresh forward passes only.
"""

import numpy as np

from metacl.autodiff import backward, zero_grads


def finite_difference_grad(loss_fn, param, step=1e-5):
    """Central finite differences of ``loss_fn()`` w.r.t. every entry of
    ``param`` (a Tensor whose .data is perturbed in place)."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(loss_fn().data)
        flat[i] = orig - step
        lo = float(loss_fn().data)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def check_gradients(loss_fn, params, step=1e-5, rtol=1e-4, min_denom=1e-8):
    """Assert analytic grads from ``backward`` match central differences.

    Relative error uses max(|analytic|, |numeric|, min_denom) as denominator.
    Returns the worst relative error observed.
    """
    zero_grads(params)
    loss = loss_fn()
    backward(loss)
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        numeric = finite_difference_grad(loss_fn, p, step=step)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), min_denom)
        rel = np.abs(analytic - numeric) / denom
        worst = max(worst, float(rel.max()) if rel.size else 0.0)
        assert np.all(rel < rtol), (
            f"gradient mismatch: worst rel err {rel.max():.3e} (rtol {rtol})")
    zero_grads(params)
    return worst
