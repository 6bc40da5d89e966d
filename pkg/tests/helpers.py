"""Shared test utilities: finite-difference gradients and error measures."""

import numpy as np

from tgmr import tensor as T


def finite_difference(f, arrays, step=1e-5):
    """Central-difference gradient of scalar f() w.r.t. each array in `arrays`.

    f must read the current contents of the arrays on every call.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = f()
            flat[i] = orig - step
            lo = f()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * step)
        grads.append(g)
    return grads


def rel_error(a, b, floor=1e-6):
    """Norm-relative difference between two gradient arrays.

    The floor keeps near-zero gradient pairs (both below central-difference
    noise, ~1e-10 at step 1e-5) from dividing by their own noise.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return np.linalg.norm(a - b) / denom


def check_gradients(build_loss, params, step=1e-5, tol=1e-4):
    """Compare tape gradients of build_loss() against central differences.

    `params` is a list of Parameter; build_loss() returns a scalar Tensor when
    gradients are enabled and is also used (via .item()) for the differenced
    evaluations. Returns the worst relative error seen.
    """
    loss = build_loss()
    T.backward(loss)
    analytic = [p.tensor.grad.copy() for p in params]
    for p in params:
        p.tensor.grad = None

    def value():
        with T.no_grad():
            return build_loss().item()

    numeric = finite_difference(value, [p.tensor.data for p in params], step=step)
    worst = 0.0
    for p, a, n in zip(params, analytic, numeric):
        err = rel_error(a, n)
        assert err <= tol, f"gradient mismatch for {p.name}: rel error {err:.3e}"
        worst = max(worst, err)
    return worst
