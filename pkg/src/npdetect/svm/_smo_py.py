"""Pure numpy SMO loop; fallback for the compiled ``_smo`` extension.

Selection order, tie-breaking and floating-point expressions match the
Cython kernel exactly, so either backend yields the same model.
"""
import numpy as np


def smo_solve(K, y, C, alpha, tol, max_iter):
    """Minimize 0.5 a'Qa, Q_ij = y_i y_j K_ij, under per-class sum constraints.

    ``alpha`` must be feasible on entry and is updated in place.

    Stops once the largest same-class KKT gap is at most
    ``tol * max(max|G|, 1e-12)``.

    Returns ``(G, n_iter, violation, gscale)`` where ``G = Q @ alpha``.
    """
    n = K.shape[0]
    yf = y.astype(np.float64)
    G = np.empty(n)
    # same left-to-right accumulation as the compiled loop
    for k in range(n):
        s = 0.0
        for m in range(n):
            s += yf[k] * yf[m] * K[k, m] * alpha[m]
        G[k] = s

    pos = y > 0
    neg = ~pos
    it = 0
    while True:
        gscale = max(float(np.abs(G).max()), 1e-12)
        up = alpha < C
        down = alpha > 0.0
        picks = []
        gaps = []
        for cls_mask in (pos, neg):
            m_up = cls_mask & up
            m_down = cls_mask & down
            if m_up.any() and m_down.any():
                gi = np.where(m_up, G, np.inf)
                gj = np.where(m_down, G, -np.inf)
                i = int(np.argmin(gi))
                j = int(np.argmax(gj))
                picks.append((i, j))
                gaps.append(G[j] - G[i])
            else:
                picks.append((-1, -1))
                gaps.append(0.0)
        gap = gaps[0] if gaps[0] > gaps[1] else gaps[1]
        if gap <= tol * gscale or it >= max_iter:
            break

        cls = it % 2
        if gaps[cls] <= tol * gscale:
            cls = 1 - cls
        i = picks[cls][0]
        cls_mask = pos if cls == 0 else neg
        # second-order choice of j: maximize (G_j - G_i)^2 / eta_ij
        b = G - G[i]
        e = K[i, i] + np.diagonal(K) - 2.0 * K[i, :]
        e = np.where(e <= 1e-12, 1e-12, e)
        ok = cls_mask & down & (b > 0.0)
        score = np.where(ok, b * b / e, -np.inf)
        j = int(np.argmax(score))
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

        G += t * (yf * yf[i]) * (K[:, i] - K[:, j])
        it += 1

    return G, it, gap, gscale
