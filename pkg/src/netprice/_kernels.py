"""Pure-numpy implementations of the solver's inner-loop kernels.

The compiled extension (_core) provides the same functions with identical
signatures; backend.py picks one at import time.  Keep both in sync: the
driver treats them as interchangeable.
"""

import numpy as np

__all__ = ["project_soc", "soft_threshold"]


def project_soc(arr: np.ndarray) -> np.ndarray:
    """Project each cone fiber of arr onto {(t, x): ||x||_2 <= t}, in place.

    arr has shape (blocks, coords, batch); coordinate 0 of axis 1 is the
    cone head t, the rest is x.  Returns arr.
    """
    t = arr[:, 0, :]
    x = arr[:, 1:, :]
    nx = np.sqrt(np.einsum("jcm,jcm->jm", x, x))
    inside = nx <= t
    polar = nx <= -t
    shell = ~(inside | polar)
    half = 0.5 * (t + nx)
    safe = np.where(nx > 0.0, nx, 1.0)
    scale = np.where(shell, half / safe, np.where(inside, 1.0, 0.0))
    arr[:, 0, :] = np.where(inside, t, np.where(polar, 0.0, half))
    x *= scale[:, None, :]
    return arr


def soft_threshold(x: np.ndarray, thresh: np.ndarray) -> np.ndarray:
    """Row-wise shrinkage sign(x) * max(|x| - thresh, 0) for x of shape
    (d, m) and per-row thresholds of shape (d,).  Returns a new array."""
    return np.sign(x) * np.maximum(np.abs(x) - thresh[:, None], 0.0)
