"""Cost-sensitive 2nu-SVM with an RBF kernel.

Training solves the dual

    max  -1/2 sum_ij a_i a_j y_i y_j k(x_i, x_j)
    s.t. 0 <= a_i <= C_i,  sum_i a_i y_i = 0,  sum_i a_i = nu

with ``C_i = w_plus / n`` on positives and ``(1 - w_plus) / n`` on negatives.
The two equalities pin each class sum to ``nu / 2``, so SMO steps that move
mass between two points of the same class stay feasible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import SolverError, ValidationError
from . import _backend

GAMMA_GRID = tuple(2.0**p for p in (-5, -3, -1, 1, 3, 5))
NU_GRID = (
    1e-5, 3e-5, 1e-4, 3e-4, 0.001, 0.003, 0.01, 0.03,
    0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0,
)


@dataclass(frozen=True)
class SvmHyper:
    nu_plus: float
    nu_minus: float
    gamma: float
    tolerance: float = 1e-6
    max_passes: int = 10_000

    def __post_init__(self):
        for name in ("nu_plus", "nu_minus"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ValidationError(f"{name}={v} outside (0, 1]")
        if not self.gamma > 0:
            raise ValidationError(f"gamma={self.gamma} must be positive")
        if not self.tolerance > 0:
            raise ValidationError("tolerance must be positive")


@dataclass
class SvmModel:
    """A trained 2nu-SVM.

    Only points with non-zero dual coefficient are kept as support vectors.
    ``flags`` collects solver diagnostics such as ``"rho_nonpositive"``.
    """

    support_vectors: np.ndarray
    alphas: np.ndarray
    labels: np.ndarray
    bias: float
    rho: float
    hyper: SvmHyper
    nu: float
    w_plus: float
    n_iter: int = 0
    violation: float = 0.0
    kkt_tol: float = 0.0
    flags: list = field(default_factory=list)
    train_alpha: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def dual_coef(self) -> np.ndarray:
        return self.alphas * self.labels

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.support_vectors.shape[1]:
            raise ValidationError(
                f"feature dimension {X.shape[1]} != model dimension "
                f"{self.support_vectors.shape[1]}"
            )
        K = rbf_gram(X, self.support_vectors, self.hyper.gamma)
        return K @ self.dual_coef + self.bias

    def predict(self, X, threshold: float = 0.0) -> np.ndarray:
        return np.where(self.decision_function(X) >= threshold, 1, -1).astype(np.int8)


def rbf_kernel(a, b, gamma: float) -> float:
    """``exp(-gamma * ||a - b||^2)`` for two vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if not gamma > 0:
        raise ValidationError("gamma must be positive")
    d = a - b
    return math.exp(-gamma * float(d @ d))


def sq_distances(A, B=None) -> np.ndarray:
    """Pairwise squared Euclidean distances, clipped at zero."""
    A = np.asarray(A, dtype=np.float64)
    B = A if B is None else np.asarray(B, dtype=np.float64)
    D = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    np.maximum(D, 0.0, out=D)
    return D


def rbf_gram(A, B=None, gamma: float = 1.0) -> np.ndarray:
    D = sq_distances(A, B)
    if B is None:
        np.fill_diagonal(D, 0.0)
    return np.exp(-gamma * D)


def map_nu(nu_plus: float, nu_minus: float, n_plus: int, n_minus: int):
    """Translate per-class ``(nu_plus, nu_minus)`` into ``(nu, w_plus)``.

    With these values the dual box and sum constraints give
    ``sum_{I+} a_i = nu_plus * n_plus * C_plus``, so at most a ``nu_plus``
    fraction of positives can sit at the upper bound (margin errors) and at
    least that fraction must be support vectors; the same holds for negatives.
    """
    if n_plus < 1 or n_minus < 1:
        raise ValidationError(f"degenerate class counts n+={n_plus}, n-={n_minus}")
    if not (0.0 < nu_plus <= 1.0 and 0.0 < nu_minus <= 1.0):
        raise ValidationError(f"nu pair ({nu_plus}, {nu_minus}) outside (0, 1]")
    n = n_plus + n_minus
    denom = nu_plus * n_plus + nu_minus * n_minus
    w_plus = nu_minus * n_minus / denom
    nu = 2.0 * nu_plus * nu_minus * n_plus * n_minus / (n * denom)
    return nu, w_plus


def class_bounds(labels, w_plus: float) -> np.ndarray:
    labels = np.asarray(labels)
    n = labels.size
    return np.where(labels > 0, w_plus / n, (1.0 - w_plus) / n)


def dual_objective(alpha, labels, K) -> float:
    """The maximized dual value ``-1/2 a'Qa``."""
    v = np.asarray(alpha) * np.asarray(labels, dtype=np.float64)
    return -0.5 * float(v @ K @ v)


def _class_offset(G, alpha, C, mask, tol):
    """KKT multiplier for one class from the gradient ``G = Q a``.

    Free points satisfy ``G_i = r``; points at zero have ``G_i >= r`` and
    points at ``C_i`` have ``G_i <= r``.  Without free points we take the
    midpoint of the implied interval, or its finite end if one side is open.
    """
    a, c, g = alpha[mask], C[mask], G[mask]
    eps = tol * c
    free = (a > eps) & (a < c - eps)
    if free.any():
        return float(g[free].mean())
    at_upper = a >= c - eps
    lo = g[at_upper].max() if at_upper.any() else -np.inf
    hi = g[~at_upper].min() if (~at_upper).any() else np.inf
    if np.isfinite(lo) and np.isfinite(hi):
        return 0.5 * (lo + hi)
    return float(lo if np.isfinite(lo) else hi)


def _kkt_gap(G, beta, C, pos):
    """Largest same-class violation ``max G_down - min G_up`` and the scale ``max|G|``."""
    gap = 0.0
    for m in (pos, ~pos):
        up, down = m & (beta < C), m & (beta > 0.0)
        if up.any() and down.any():
            gap = max(gap, float(G[down].max() - G[up].min()))
    return gap, max(float(np.abs(G).max()), 1e-12)


def _polish(K, y, C, beta, G, pos):
    """Newton step on the free set: make every free ``G_i`` equal its class offset.

    Solves ``Q_FF d - A r = -G_F, A'd = 0`` (``A`` = class indicators) by
    minimum-norm least squares, which copes with the near-singular Gram
    matrices of low-dimensional RBF problems.  If the full step would leave
    the box, the longest feasible fraction is taken and the blocking
    variable is snapped to its bound.  Returns ``(beta, full_step)`` or
    ``None`` when there is nothing to do.
    """
    F = np.flatnonzero((beta > 0.0) & (beta < C))
    if F.size == 0:
        return None
    yF = y[F].astype(np.float64)
    cols = [c.astype(np.float64) for c in (pos[F], ~pos[F]) if c.any()]
    k = len(cols)
    M = np.zeros((F.size + k, F.size + k))
    M[:F.size, :F.size] = yF[:, None] * yF[None, :] * K[np.ix_(F, F)]
    for c, col in enumerate(cols):
        M[:F.size, F.size + c] = -col
        M[F.size + c, :F.size] = col
    rhs = np.concatenate([-G[F], np.zeros(k)])
    d = np.linalg.lstsq(M, rhs, rcond=None)[0][:F.size]
    b, c = beta[F], C[F]
    with np.errstate(divide="ignore", invalid="ignore"):
        limit = np.where(d < 0, -b / d, np.where(d > 0, (c - b) / d, np.inf))
    step = min(1.0, float(limit.min()))
    new = beta.copy()
    new[F] = np.clip(b + step * d, 0.0, c)
    if step < 1.0:
        blocked = F[int(np.argmin(limit))]
        new[blocked] = 0.0 if d[int(np.argmin(limit))] < 0 else C[blocked]
    return new, step >= 1.0


def _solve(K, y8, C, beta, tol, max_iter):
    """SMO in stages of decreasing tolerance, with active-set polishing in between.

    ``beta`` is updated in place.  Returns ``(G, n_iter, violation, gscale,
    stalled)``; ``stalled`` means the final stage stopped lowering the
    objective by more than its rounding error, which happens when the KKT
    gap is limited by cancellation in a near-singular Gram matrix.
    """
    n = y8.size
    pos = y8 > 0
    yf = y8.astype(np.float64)
    # rounding error of 0.5 * beta'Q beta, from the magnitude of its terms
    noise = 64 * np.finfo(np.float64).eps * 0.5 * C @ (np.abs(K) @ C)
    chunk = max(10 * n, 200)
    stage_tol = max(tol, 1e-3)
    total = 0
    best, idle = np.inf, 0
    while True:
        G, it, gap, gscale = _backend.smo_solve(K, y8, C, beta, stage_tol,
                                                min(chunk, max_iter - total))
        G = np.asarray(G)
        total += it
        if gap <= tol * gscale:
            return G, total, gap, gscale, False
        for _ in range(min(n, 50)):
            res = _polish(K, y8, C, beta, G, pos)
            if res is None:
                break
            new, full = res
            G2 = yf * (K @ (yf * new))
            if 0.5 * new @ G2 > 0.5 * beta @ G:
                break
            beta[:] = new
            G = G2
            gap, gscale = _kkt_gap(G, beta, C, pos)
            if gap <= tol * gscale:
                return G, total, gap, gscale, False
            if full:
                break
        if total >= max_iter:
            return G, total, gap, gscale, False
        if stage_tol == tol:
            obj = 0.5 * beta @ G
            idle = idle + 1 if obj > best - noise else 0
            best = min(best, obj)
            if idle >= 3:
                return G, total, gap, gscale, True
        if gap <= stage_tol * gscale:
            stage_tol = max(tol, stage_tol * 1e-2)


def train_2nu(X, y, hyper: SvmHyper, K=None) -> SvmModel:
    """Fit a 2nu-SVM by SMO on the dual.

    Parameters
    ----------
    X : (n, d) array
        Training rows.
    y : (n,) array of +1/-1
    hyper : SvmHyper
    K : (n, n) array, optional
        Precomputed RBF Gram matrix of ``X`` for ``hyper.gamma``; lets a
        library share one matrix across many (nu+, nu-) pairs.

    Raises
    ------
    ValidationError
        Single-class input, non-finite rows, shape mismatch.
    SolverError
        KKT violation still above tolerance after ``max_passes`` sweeps.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValidationError(f"shape mismatch: X {X.shape}, y {y.shape}")
    if not np.isfinite(X).all():
        raise ValidationError("non-finite feature values")
    if not np.isin(y, (-1, 1)).all():
        raise ValidationError("labels must be +1/-1")
    pos = y > 0
    n_plus = int(pos.sum())
    n_minus = int(y.size - n_plus)
    if n_plus == 0 or n_minus == 0:
        missing = "+1" if n_plus == 0 else "-1"
        raise ValidationError(f"training labels contain only one class (missing {missing})")

    n = y.size
    nu, w_plus = map_nu(hyper.nu_plus, hyper.nu_minus, n_plus, n_minus)
    if K is None:
        K = rbf_gram(X, gamma=hyper.gamma)
    K = np.ascontiguousarray(K, dtype=np.float64)

    # scaled variables beta = n * alpha keep the box and gradients O(1)
    C = np.ascontiguousarray(class_bounds(y, w_plus) * n)
    beta = np.where(pos, nu * n / (2 * n_plus), nu * n / (2 * n_minus))
    beta = np.ascontiguousarray(np.minimum(beta, C))
    y8 = np.ascontiguousarray(y, dtype=np.int8)
    G, n_iter, violation, gscale, stalled = _solve(K, y8, C, beta, hyper.tolerance,
                                                   int(hyper.max_passes) * n)
    kkt_tol = hyper.tolerance * gscale
    if violation > kkt_tol and not stalled:
        raise SolverError(
            f"SMO did not converge in {n_iter} iterations "
            f"(KKT violation {violation:.3e} > {kkt_tol:.3e})",
            violation=float(violation),
        )

    r_plus = _class_offset(G, beta, C, pos, hyper.tolerance)
    r_minus = _class_offset(G, beta, C, ~pos, hyper.tolerance)
    # y_i f(x_i) - rho = G_i - r_class, with f in alpha units
    rho = 0.5 * (r_plus + r_minus) / n
    bias = 0.5 * (r_minus - r_plus) / n

    alpha = beta / n
    flags = []
    if violation > kkt_tol:
        flags.append("kkt_roundoff_limited")
    if rho <= 0:
        flags.append("rho_nonpositive")
    sv = alpha > 0
    return SvmModel(
        support_vectors=X[sv].copy(),
        alphas=alpha[sv],
        labels=y[sv].astype(np.int8),
        bias=float(bias),
        rho=float(rho),
        hyper=hyper,
        nu=float(nu),
        w_plus=float(w_plus),
        n_iter=int(n_iter),
        violation=float(violation),
        kkt_tol=float(kkt_tol / n),
        flags=flags,
        train_alpha=alpha,
    )


def decision_score(model: SvmModel, x) -> float:
    """``f(x) = sum_i a_i y_i k(x_i, x) + b`` for a single vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError("decision_score expects a single vector")
    return float(model.decision_function(x[None, :])[0])


def predict(model: SvmModel, x, threshold: float = 0.0) -> int:
    return 1 if decision_score(model, x) >= threshold else -1


def fit_diagnostics(model: SvmModel, X, y):
    """Per-class margin-error and support-vector fractions on training data.

    ``X, y`` must be the rows the model was trained on.  A margin error is
    ``y_i f(x_i) < rho - kkt_tol`` (the solver's stopping threshold, so
    near-margin free vectors are not miscounted); a support vector
    has ``alpha_i > tolerance * C_i``.  Returns a dict keyed by ``+1``/``-1``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if model.train_alpha is None or model.train_alpha.size != y.size:
        raise ValidationError("fit_diagnostics needs the model's own training rows")
    tol = model.hyper.tolerance
    margins = y * model.decision_function(X)
    C = class_bounds(y, model.w_plus)
    out = {}
    for cls in (1, -1):
        m = y == cls
        out[cls] = {
            "n": int(m.sum()),
            "margin_error_fraction": float((margins[m] < model.rho - model.kkt_tol).mean()),
            "support_vector_fraction": float((model.train_alpha[m] > tol * C[m]).mean()),
        }
    return out


def model_to_dict(model: SvmModel) -> dict:
    h = model.hyper
    return {
        "hyper": {"nu_plus": h.nu_plus, "nu_minus": h.nu_minus, "gamma": h.gamma,
                  "tolerance": h.tolerance, "max_passes": h.max_passes},
        "support_vectors": model.support_vectors.tolist(),
        "alphas": model.alphas.tolist(),
        "labels": model.labels.astype(int).tolist(),
        "bias": model.bias,
        "rho": model.rho,
        "nu": model.nu,
        "w_plus": model.w_plus,
        "n_iter": model.n_iter,
        "violation": model.violation,
        "kkt_tol": model.kkt_tol,
        "flags": list(model.flags),
    }


def model_from_dict(d: dict) -> SvmModel:
    sv = np.asarray(d["support_vectors"], dtype=np.float64)
    return SvmModel(
        support_vectors=sv.reshape(len(d["alphas"]), -1) if sv.size else sv.reshape(0, 0),
        alphas=np.asarray(d["alphas"], dtype=np.float64),
        labels=np.asarray(d["labels"], dtype=np.int8),
        bias=float(d["bias"]),
        rho=float(d["rho"]),
        hyper=SvmHyper(**d["hyper"]),
        nu=float(d["nu"]),
        w_plus=float(d["w_plus"]),
        n_iter=int(d.get("n_iter", 0)),
        violation=float(d.get("violation", 0.0)),
        kkt_tol=float(d.get("kkt_tol", 0.0)),
        flags=list(d.get("flags", [])),
    )
