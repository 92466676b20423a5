"""Finite-difference gradient oracle, independent of the autodiff tape.

``central_diff`` perturbs raw arrays in place and re-runs a forward-only
closure; it never touches .grad or the graph machinery it is checking.
"""

import numpy as np

from oov_forge.tensor import Graph, backward

H = 1e-5


def central_diff(f, arrays, h=H):
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gf = a.ravel(), g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            gf[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def rel_err(analytic, numeric):
    scale = max(float(np.abs(numeric).max()), 1e-12)
    return float(np.abs(analytic - numeric).max()) / scale


def check_grads(build, params, h=H):
    """Max relative error between tape gradients of build() and central
    differences, over every parameter. build() must return a scalar Tensor
    computed from the params' current .data."""
    for p in params:
        p.zero_grad()
    with Graph():
        backward(build())
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
                for p in params]
    for p in params:
        p.zero_grad()

    def f():
        return float(build().data)

    numeric = central_diff(f, [p.data for p in params], h)
    return max(rel_err(a, n) for a, n in zip(analytic, numeric))
