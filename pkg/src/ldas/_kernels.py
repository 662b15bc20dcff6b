"""Compiled kernels for the zero-fill incomplete Cholesky preconditioned CG.

Matrices are CSR with sorted column indices. The factor uses the same
pattern as the lower triangle of the system, diagonal stored last in each
row. All kernels allocate their own work vectors so concurrent calls on
one factor are safe.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def ic0_factor(indptr, indices, data, shift):
    """Return ``(L, ok)``; ``ok`` is False on a non-positive pivot."""
    n = indptr.shape[0] - 1
    L = data.copy()
    for i in range(n):
        start = indptr[i]
        dpos = indptr[i + 1] - 1
        for p in range(start, dpos):
            k = indices[p]
            q1 = start
            q2 = indptr[k]
            e2 = indptr[k + 1] - 1
            s = 0.0
            while q1 < p and q2 < e2:
                c1 = indices[q1]
                c2 = indices[q2]
                if c1 == c2:
                    s += L[q1] * L[q2]
                    q1 += 1
                    q2 += 1
                elif c1 < c2:
                    q1 += 1
                else:
                    q2 += 1
            L[p] = (L[p] - s) / L[e2]
        d = data[dpos] * (1.0 + shift)
        for p in range(start, dpos):
            d -= L[p] * L[p]
        if not d > 0.0:
            return L, False
        L[dpos] = np.sqrt(d)
    return L, True


@njit(cache=True, nogil=True)
def ic0_apply(indptr, indices, L, r, z):
    """Solve ``L L^T z = r`` into ``z``."""
    n = r.shape[0]
    for i in range(n):
        s = r[i]
        for p in range(indptr[i], indptr[i + 1] - 1):
            s -= L[p] * z[indices[p]]
        z[i] = s / L[indptr[i + 1] - 1]
    for i in range(n - 1, -1, -1):
        z[i] /= L[indptr[i + 1] - 1]
        zi = z[i]
        for p in range(indptr[i], indptr[i + 1] - 1):
            z[indices[p]] -= L[p] * zi


@njit(cache=True, nogil=True)
def csr_matvec(indptr, indices, data, x, y):
    n = indptr.shape[0] - 1
    for i in range(n):
        s = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            s += data[p] * x[indices[p]]
        y[i] = s


@njit(cache=True, nogil=True)
def pcg(a_ptr, a_idx, a_val, l_ptr, l_idx, l_val, b, x0, tol, maxiter):
    """Preconditioned CG from ``x0``; returns ``(x, iterations, relres)``.

    ``relres`` is the recurrence residual norm over ``||b||``.
    """
    n = b.shape[0]
    x = x0.copy()
    bnorm = np.sqrt(np.dot(b, b))
    if bnorm == 0.0:
        return np.zeros(n), 0, 0.0
    q = np.empty(n)
    csr_matvec(a_ptr, a_idx, a_val, x, q)
    r = b - q
    rnorm = np.sqrt(np.dot(r, r))
    if rnorm <= tol * bnorm:
        return x, 0, rnorm / bnorm
    z = np.empty(n)
    ic0_apply(l_ptr, l_idx, l_val, r, z)
    p = z.copy()
    rz = np.dot(r, z)
    for it in range(1, maxiter + 1):
        csr_matvec(a_ptr, a_idx, a_val, p, q)
        alpha = rz / np.dot(p, q)
        x += alpha * p
        r -= alpha * q
        rnorm = np.sqrt(np.dot(r, r))
        if rnorm <= tol * bnorm:
            return x, it, rnorm / bnorm
        ic0_apply(l_ptr, l_idx, l_val, r, z)
        rz_new = np.dot(r, z)
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    return x, maxiter, rnorm / bnorm
