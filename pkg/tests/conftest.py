import numpy as np


def fd_jacobian(f, x, h=1e-6):
    """Central-difference Jacobian of f: R^k -> R^m at x, shape (m, k)."""
    x = np.asarray(x, dtype=float)
    cols = []
    for m in range(x.size):
        e = np.zeros_like(x)
        e[m] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)
