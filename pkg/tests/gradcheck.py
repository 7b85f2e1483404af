"""Central finite-difference checks shared by the test modules."""

import numpy as np

H = 1e-5
RTOL = 1e-4
ATOL = 1e-7


def numeric_grad(f, arr, h=H):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arr`` (mutated in place)."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        g[i] = (up - down) / (2 * h)
    return grad


def assert_grad_close(analytic, numeric, rtol=RTOL, atol=ATOL):
    analytic = np.asarray(analytic, dtype=np.float64)
    tol = np.maximum(rtol * np.abs(numeric), atol)
    err = np.abs(analytic - numeric)
    assert np.all(err <= tol), f"max err {err.max():.3e}; worst at {np.unravel_index(np.argmax(err - tol), err.shape)}"
