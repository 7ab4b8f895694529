"""Finite-difference gradient checking."""

import numpy as np

from .tensor import Tape


def numerical_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar-valued f w.r.t. ndarray x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def check_gradients(build_loss, params, h=1e-5, tol=1e-4):
    """Compare tape gradients of ``build_loss(params) -> scalar Tensor``
    against central differences for every tensor in ``params``.

    Returns the worst relative error seen; raises AssertionError above tol.
    """
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = build_loss(params)
    tape.backward(loss)
    analytic = [None if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for idx, p in enumerate(params):
        def f(arr, idx=idx, p=p):
            saved = p.data
            p.data = arr
            out = build_loss(params)
            p.data = saved
            return float(out.data)

        num = numerical_grad(f, p.data.copy(), h=h)
        ana = analytic[idx] if analytic[idx] is not None else np.zeros_like(num)
        denom = np.maximum(1e-8, np.abs(num))
        rel = np.abs(ana - num) / denom
        # absolute agreement is fine where both are ~0
        rel[np.abs(ana - num) < 1e-8] = 0.0
        err = float(rel.max()) if rel.size else 0.0
        worst = max(worst, err)
        if err > tol:
            raise AssertionError(
                f"gradient mismatch on param {idx} shape {p.shape}: rel err {err:.3e}")
    return worst
