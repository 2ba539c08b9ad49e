"""Pure numpy ADMM iteration kernel.

Same contract as the compiled ``_kernel.admm_iterate``: all arrays are
updated in place, nothing is returned.
"""

import numpy as np


def admm_iterate(x, z, y, dy, Minv, A, q, l, u, rho, sigma, alpha, n_iter):
    """Run ``n_iter`` relaxed ADMM iterations on the scaled problem.

    Parameters
    ----------
    x, z, y : ndarray
        Primal, constraint-copy and dual iterates (modified in place).
    dy : ndarray
        Receives ``y_k - y_{k-1}`` of the last iteration.
    Minv : ndarray, shape (n, n)
        Inverse of ``P + sigma*I + A' diag(rho) A``.
    """
    for _ in range(n_iter):
        rhs = sigma * x - q + A.T @ (rho * z - y)
        xt = Minv @ rhs
        zt = A @ xt
        x *= 1.0 - alpha
        x += alpha * xt
        zr = alpha * zt + (1.0 - alpha) * z
        znew = np.clip(zr + y / rho, l, u)
        dy[:] = rho * (zr - znew)
        y += dy
        z[:] = znew
