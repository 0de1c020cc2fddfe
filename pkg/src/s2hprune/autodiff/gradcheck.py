"""Central finite-difference oracle for tape gradients."""

import numpy as np

from .tensor import NumericError, backward, no_grad


def numerical_gradient(f, x, h=1e-5):
    """Central differences of scalar ``f(x)`` w.r.t. every entry of ``x``.

    ``x.values`` is perturbed in place and restored afterwards, so ``f`` may
    close over other tensors that share ``x``.
    """
    x.values = np.ascontiguousarray(x.values)
    grad = np.zeros_like(x.values)
    flat = x.values.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = _scalar(f(x))
            flat[i] = orig - h
            fm = _scalar(f(x))
            flat[i] = orig
            grad.reshape(-1)[i] = (fp - fm) / (2 * h)
    return grad


def _scalar(out):
    v = float(np.asarray(out.values if hasattr(out, "values") else out).reshape(()))
    if not np.isfinite(v):
        raise NumericError("grad_check: function value is not finite")
    return v


def grad_check(f, x, h=1e-5, kink_tol=1e-3, return_skipped=False):
    """Max over coordinates of |analytic - FD| / max(1, |analytic|).

    Coordinates where the left and right one-sided slopes disagree by more
    than ``kink_tol`` (relative) sit on a kink such as relu(0) and are
    skipped; the analytic side uses subgradient 0 there.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x.values = np.ascontiguousarray(x.values)
    analytic = backward(f(x), [x])[x]
    flat = x.values.reshape(-1)
    errors = []
    skipped = []
    with no_grad():
        f0 = _scalar(f(x))
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = _scalar(f(x))
            flat[i] = orig - h
            fm = _scalar(f(x))
            flat[i] = orig
            right, left = (fp - f0) / h, (f0 - fm) / h
            if abs(right - left) > kink_tol * max(1.0, abs(right), abs(left)):
                skipped.append(i)
                continue
            fd = (fp - fm) / (2 * h)
            a = analytic.reshape(-1)[i]
            errors.append(abs(a - fd) / max(1.0, abs(a)))
    err = max(errors) if errors else 0.0
    return (err, skipped) if return_skipped else err
