"""Central finite-difference gradient checking.

The numeric side only ever calls the forward function, so it is an
independent oracle for the analytic gradients produced by the tape.
"""

import numpy as np


def numeric_grad(f, x, eps=1e-5):
    """Central-difference gradient of scalar-valued f() wrt array x.

    f must read x afresh on every call (x is perturbed in place and
    restored).
    """
    grad = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = grad.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + eps
        f_plus = f()
        flat_x[i] = orig - eps
        f_minus = f()
        flat_x[i] = orig
        flat_g[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def max_rel_err(a, b, floor=1e-6):
    """max |a-b| / max(|a|, |b|, floor), elementwise; 0 for empty input."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def check_grads(build_loss, params, eps=1e-5):
    """Compare tape gradients of build_loss() against finite differences.

    build_loss records a fresh tape and returns (tape, loss). Returns the
    worst relative error over all parameters.
    """
    tape, loss = build_loss()
    grads = tape.backward(loss, params=params)
    worst = 0.0
    for p in params:
        def forward():
            _, l = build_loss()
            return float(l.data)

        num = numeric_grad(forward, p.data, eps=eps)
        worst = max(worst, max_rel_err(grads[p], num))
    return worst
