"""Shared test oracles, finite differences above all.

The finite-difference checker is deliberately independent of the autograd
machinery: it re-runs the forward closure with perturbed raw arrays and
never touches recorded gradients.
"""

from __future__ import annotations

import numpy as np

FD_STEP = 1e-5


def central_diff(fn, array: np.ndarray, index: tuple, h: float = FD_STEP) -> float:
    """Central finite difference of scalar-valued ``fn`` at one coordinate.

    ``fn`` must read ``array`` afresh on every call (the perturbation is
    written in place and undone afterwards).
    """
    original = array[index]
    array[index] = original + h
    fplus = float(fn())
    array[index] = original - h
    fminus = float(fn())
    array[index] = original
    return (fplus - fminus) / (2.0 * h)


def rel_err(a: float, b: float, floor: float = 1e-2) -> float:
    """Relative error with a floor so near-zero gradients stay comparable."""
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_grad(fn, tensor, coords=None, n_coords: int = 20,
               rng: np.random.Generator | None = None,
               tol: float = 1e-4, h: float = FD_STEP) -> float:
    """Compare ``tensor.grad`` against central differences of ``fn``.

    ``fn`` is a closure returning the scalar loss recomputed from scratch;
    ``tensor.grad`` must already hold the analytic gradient. Returns the
    worst relative error over the sampled coordinates and asserts it is
    below ``tol``.
    """
    data = tensor.data
    assert tensor.grad is not None, "analytic gradient missing"
    if coords is None:
        rng = rng or np.random.default_rng(0)
        flat = rng.choice(data.size, size=min(n_coords, data.size), replace=False)
        coords = [np.unravel_index(int(i), data.shape) for i in flat]
    worst = 0.0
    for index in coords:
        numeric = central_diff(fn, data, index, h)
        analytic = float(tensor.grad[index])
        worst = max(worst, rel_err(analytic, numeric))
    assert worst < tol, f"finite-difference mismatch: worst rel err {worst:.3e}"
    return worst


def double_cumsum_oracle(v: np.ndarray, order: int) -> np.ndarray:
    """Reference discrete integration: suffix-sum (order-1) times, then one
    prefix-sum, prefixed with 0. Independent of any matrix construction."""
    u = np.asarray(v, dtype=np.float64)
    for _ in range(order - 1):
        u = np.cumsum(u[::-1])[::-1]
    c = np.concatenate([[0.0], np.cumsum(u)])
    return c
