"""
Finite-difference checks of hand-written backward passes.

A check compares the analytic directional derivative ⟨∇f(x), d⟩ with the
central difference (f(x + hd) − f(x − hd)) / 2h along a random unit
direction d, in double precision.
"""

import numpy as np


def relative_error(a, b):
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0 else abs(a - b) / scale


def random_direction(rng, shape):
    d = rng.standard_normal(shape)
    return d / np.linalg.norm(d)


def directional_check(fun, x, grad, rng, step=1e-3):
    """
    Relative error between ⟨grad, d⟩ and the central difference of ``fun`` at ``x``.

    Args:
        fun (callable): Scalar function of an array shaped like ``x``.
        x (ndarray): Point of evaluation.
        grad (ndarray): Analytic gradient of ``fun`` at ``x``.
        rng (numpy.random.Generator): Source of the direction.
        step (float): Finite-difference step h.
    """
    d = random_direction(rng, x.shape)
    numeric = (fun(x + step * d) - fun(x - step * d)) / (2 * step)
    return relative_error(float(np.sum(grad * d)), numeric)


def check_layer(forward, backward, x, params=(), seed=0, step=1e-3):
    """
    Check a layer's input and parameter gradients under a smooth quadratic loss.

    ``forward(x, *params)`` returns (y, cache) and ``backward(gy, cache)``
    returns the input gradient followed by one gradient per parameter.

    Returns:
        list: Relative errors, input first, then one per parameter.
    """
    rng = np.random.default_rng(seed)
    y, _ = forward(x, *params)
    target = rng.standard_normal(y.shape)

    def loss(x_, params_):
        out, _ = forward(x_, *params_)
        return 0.5 * float(np.sum((out - target) ** 2))

    y, cache = forward(x, *params)
    grads = backward(y - target, cache)
    grads = grads if isinstance(grads, tuple) else (grads,)

    errors = [directional_check(lambda v: loss(v, params), x, grads[0], rng, step)]
    for k, p in enumerate(params):
        def loss_k(v, k=k):
            swapped = list(params)
            swapped[k] = v
            return loss(x, swapped)
        errors.append(directional_check(loss_k, p, grads[k + 1], rng, step))
    return errors
