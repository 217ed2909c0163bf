"""Central finite differences for checking reverse-mode gradients."""

import numpy as np

from .tensor import Tape, no_grad


def numerical_grad(fn, tensors, eps=1e-3):
    """Central-difference gradient of scalar ``fn()`` w.r.t. each tensor's data."""
    out = []
    with no_grad():
        for t in tensors:
            g = np.zeros(t.shape, dtype=np.float64)
            flat = t.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = float(fn().data)
                flat[i] = orig - eps
                down = float(fn().data)
                flat[i] = orig
                g.reshape(-1)[i] = (up - down) / (2 * eps)
            out.append(g)
    return out


def analytic_grad(fn, tensors):
    for t in tensors:
        t.grad = None
        t.requires_grad = True
    with Tape() as tape:
        loss = fn()
    tape.backward(loss, leaves=tensors)
    return [np.asarray(t.grad, dtype=np.float64) for t in tensors]


def max_rel_error(analytic, numeric, floor=1e-8):
    """Largest entry-wise error, scaled by the tensor's gradient magnitude.

    Each tensor's error is divided by ``max(|numeric|)`` of that tensor so
    near-zero entries do not dominate through tiny denominators.
    """
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = max(float(np.abs(n).max()), float(np.abs(a).max()), floor)
        worst = max(worst, float(np.abs(a - n).max()) / scale)
    return worst


def check_gradients(fn, tensors, eps=1e-3):
    """Return the max relative error between tape and finite-difference grads."""
    return max_rel_error(analytic_grad(fn, tensors), numerical_grad(fn, tensors, eps))


def check_gradients_mixed(make, eps=1e-5):
    """Tape gradients in float32 against central differences in float64.

    ``make()`` returns ``(fn, tensors)`` built from the same float32 values
    under whichever default dtype is active; it is called once per precision.
    A 32-bit finite difference cannot resolve gradients much below
    ``|loss| * 1e-7 / eps``, so the oracle runs on an exact 64-bit copy.
    """
    from .tensor import default_dtype

    with default_dtype(np.float32):
        fn, tensors = make()
        if any(t.dtype != np.float32 for t in tensors):
            raise TypeError("make() must build float32 tensors under a float32 default")
        analytic = analytic_grad(fn, tensors)
    with default_dtype(np.float64):
        fn, tensors = make()
        numeric = numerical_grad(fn, tensors, eps)
    return max_rel_error(analytic, numeric)
