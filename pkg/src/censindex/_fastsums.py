"""Compiled kernel sums for the likelihood hot path.

Pairs farther apart than the kernel support are skipped, so the cost scales
with the number of neighbours rather than with ``E * m``.
"""

import numba
import numpy as np

_C5 = 3.0 / 160.0


@numba.njit(cache=True, inline="always")
def _k(u):
    a = abs(u)
    if a <= 1.0:
        a2 = a * a
        return 0.9 - 0.75 * a2 - 0.375 * a2 * a + _C5 * a2 * a2 * a
    if a <= 2.0:
        b = a - 2.0
        return _C5 * b * b * b * (a * a + 6.0 * a + 4.0)
    return 0.0


@numba.njit(cache=True)
def kernel_sums(u_eval, z_eval, exclude, u_m, z_m, a, h):
    """Numerator and denominator of the window density estimate.

    ``exclude[e]`` is a member column skipped for row ``e`` (or -1).
    """
    n_eval = u_eval.shape[0]
    m = u_m.shape[0]
    num = np.zeros(n_eval)
    den = np.zeros(n_eval)
    inv_h = 1.0 / h
    reach = 2.0 * h
    for e in range(n_eval):
        ue = u_eval[e]
        ze = z_eval[e]
        skip = exclude[e]
        s_num = 0.0
        s_den = 0.0
        for j in range(m):
            du = ue - u_m[j]
            if du > reach or du < -reach or j == skip:
                continue
            ku = _k(du * inv_h) * a[j]
            s_den += ku
            dz = ze - z_m[j]
            if dz < reach and dz > -reach:
                s_num += ku * _k(dz * inv_h)
        num[e] = s_num * inv_h * inv_h
        den[e] = s_den * inv_h
    return num, den
