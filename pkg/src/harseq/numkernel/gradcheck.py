"""Finite-difference gradient oracle used by the test suite."""

import math

import numpy as np

from ..errors import NumericError
from .tensor import Tensor


def finite_difference_grad(loss_fn, param: Tensor, epsilon: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a zero-argument loss w.r.t. param.

    loss_fn must be deterministic and read param.data; entries are perturbed
    in place and restored. Raises NumericError on a non-finite loss.
    """
    flat = param.data.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        up = float(loss_fn())
        flat[i] = orig - epsilon
        down = float(loss_fn())
        flat[i] = orig
        if not (math.isfinite(up) and math.isfinite(down)):
            raise NumericError(f"non-finite loss while perturbing element {i}")
        grad[i] = (up - down) / (2.0 * epsilon)
    return grad.reshape(param.data.shape)


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max over elements of |analytic - numeric| / (|numeric| + 1e-8)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(analytic - numeric) / (np.abs(numeric) + 1e-8)))
