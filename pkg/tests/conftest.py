"""Shared test helpers: central finite-difference gradient oracle."""

import numpy as np

from attnpool import autodiff as ad


def finite_difference(f, param: ad.Tensor, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of the scalar ``f()`` w.r.t. ``param``.

    ``f`` must rebuild its forward pass from ``param.data`` on every call.
    """
    grad = np.zeros_like(param.data)
    it = np.nditer(param.data, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        orig = param.data[i]
        param.data[i] = orig + h
        up = f()
        param.data[i] = orig - h
        down = f()
        param.data[i] = orig
        grad[i] = (up - down) / (2 * h)
        it.iternext()
    return grad


def assert_grad_close(analytic: np.ndarray, numeric: np.ndarray,
                      rel_tol: float = 1e-4, abs_tol: float = 1e-7) -> None:
    """Check |a - n| <= abs_tol or relative error <= rel_tol, entrywise."""
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    bad = (diff > abs_tol) & (diff > rel_tol * scale)
    assert not bad.any(), (
        f"gradient mismatch at {np.argwhere(bad)[:5]}: "
        f"analytic {analytic[bad][:5]}, numeric {numeric[bad][:5]}"
    )
