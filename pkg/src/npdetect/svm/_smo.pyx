# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled SMO loop for the 2nu-SVM dual.

Mirrors ``_smo_py.smo_solve`` operation for operation so both backends
return bitwise-identical iterates.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def smo_solve(double[:, ::1] K, signed char[::1] y, double[::1] C,
              double[::1] alpha, double tol, long max_iter):
    """Minimize 0.5 a'Qa, Q_ij = y_i y_j K_ij, under per-class sum constraints.

    ``alpha`` must be feasible on entry and is updated in place.  Only
    same-class pairs are moved, so both class sums stay fixed.

    Stops once the largest same-class KKT gap is at most
    ``tol * max(max|G|, 1e-12)``.

    Returns ``(G, n_iter, violation, gscale)`` where ``G = Q @ alpha``.
    """
    cdef Py_ssize_t n = K.shape[0]
    cdef Py_ssize_t k, m, i, j, bi0, bj0, bi1, bj1
    cdef double gscale, g0_lo, g0_hi, g1_lo, g1_hi, gap0, gap1, gap, eta, t, s, b, e, score, best
    cdef long it = 0
    cdef int cls
    G_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] G = G_arr

    for k in range(n):
        s = 0.0
        for m in range(n):
            s += y[k] * y[m] * K[k, m] * alpha[m]
        G[k] = s

    while True:
        # class 0 = positives, class 1 = negatives
        bi0 = -1; bj0 = -1; bi1 = -1; bj1 = -1
        g0_lo = 0.0; g0_hi = 0.0; g1_lo = 0.0; g1_hi = 0.0
        gscale = 1e-12
        for k in range(n):
            if G[k] > gscale:
                gscale = G[k]
            elif -G[k] > gscale:
                gscale = -G[k]
            if y[k] > 0:
                if alpha[k] < C[k] and (bi0 < 0 or G[k] < g0_lo):
                    bi0 = k; g0_lo = G[k]
                if alpha[k] > 0.0 and (bj0 < 0 or G[k] > g0_hi):
                    bj0 = k; g0_hi = G[k]
            else:
                if alpha[k] < C[k] and (bi1 < 0 or G[k] < g1_lo):
                    bi1 = k; g1_lo = G[k]
                if alpha[k] > 0.0 and (bj1 < 0 or G[k] > g1_hi):
                    bj1 = k; g1_hi = G[k]
        gap0 = g0_hi - g0_lo if (bi0 >= 0 and bj0 >= 0) else 0.0
        gap1 = g1_hi - g1_lo if (bi1 >= 0 and bj1 >= 0) else 0.0
        gap = gap0 if gap0 > gap1 else gap1
        if gap <= tol * gscale or it >= max_iter:
            break

        cls = <int>(it % 2)
        if cls == 0 and gap0 <= tol * gscale:
            cls = 1
        elif cls == 1 and gap1 <= tol * gscale:
            cls = 0
        if cls == 0:
            i = bi0; j = bj0; gap = gap0
        else:
            i = bi1; j = bj1; gap = gap1

        # second-order choice of j: maximize (G_j - G_i)^2 / eta_ij
        j = -1
        best = 0.0
        for k in range(n):
            if (y[k] > 0) == (cls == 0) and alpha[k] > 0.0:
                b = G[k] - G[i]
                if b > 0.0:
                    e = K[i, i] + K[k, k] - 2.0 * K[i, k]
                    if e <= 1e-12:
                        e = 1e-12
                    score = b * b / e
                    if j < 0 or score > best:
                        j = k
                        best = score
        gap = G[j] - G[i]
        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if eta <= 1e-12:
            eta = 1e-12
        t = gap / eta
        if t >= C[i] - alpha[i]:
            t = C[i] - alpha[i]
        if t >= alpha[j]:
            t = alpha[j]

        if t == C[i] - alpha[i]:
            alpha[i] = C[i]
        else:
            alpha[i] = alpha[i] + t
        if t == alpha[j]:
            alpha[j] = 0.0
        else:
            alpha[j] = alpha[j] - t

        for k in range(n):
            G[k] = G[k] + t * (y[k] * y[i]) * (K[k, i] - K[k, j])
        it += 1

    return G_arr, it, gap, gscale
