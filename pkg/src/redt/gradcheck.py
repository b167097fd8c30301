"""Central-difference gradient oracle, independent of the reverse-mode tape."""

from __future__ import annotations

import numpy as np

from .errors import UsageError


def finite_difference_gradient(f, x, step=1e-6):
    """Per-coordinate central differences (f(x+se_i) - f(x-se_i)) / 2s.

    ``f`` takes the array and returns a float; ``x`` is perturbed in place and
    restored, so ``f`` may close over the same buffer.
    """
    if step <= 0:
        raise UsageError("step must be positive")
    x = np.asarray(x)
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(f(x))
        flat[i] = orig - step
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def max_relative_error(analytic, numeric, floor=1e-8):
    """max |a - n| scaled by the largest magnitude seen (floored for ~0 grads)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.max(np.abs(analytic), initial=0.0)),
                float(np.max(np.abs(numeric), initial=0.0)), floor)
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale
