"""Time the compiled SMO kernel against the numpy fallback.

    python benchmarks/bench_smo.py [--sizes 100 200 400] [--repeats 3]

Both backends run the same problems from the same starting point and must
return identical iterates; the script exits non-zero otherwise.
"""
import argparse
import sys
import time

import numpy as np

from npdetect.rng import generator
from npdetect.svm import class_bounds, map_nu, rbf_gram
from npdetect.svm._backend import smo_solve_compiled, smo_solve_py


def problem(n, seed, nu_plus=0.2, nu_minus=0.05, gamma=0.5):
    rng = generator(seed, 0xBE)
    X = rng.standard_normal((n, 5))
    y = np.where(rng.random(n) < 0.5, 1, -1).astype(np.int8)
    y[:2] = (1, -1)
    X[y > 0] += 0.8
    n_p = int((y > 0).sum())
    nu, w = map_nu(nu_plus, nu_minus, n_p, n - n_p)
    C = np.ascontiguousarray(class_bounds(y, w) * n)
    beta = np.where(y > 0, nu * n / (2 * n_p), nu * n / (2 * (n - n_p)))
    return np.ascontiguousarray(rbf_gram(X, gamma=gamma)), y, C, np.minimum(beta, C)


def timed(fn, K, y, C, beta0, repeats):
    best, out = np.inf, None
    for _ in range(repeats):
        beta = beta0.copy()
        t = time.perf_counter()
        res = fn(K, y, C, beta, 1e-6, 10_000 * y.size)
        best = min(best, time.perf_counter() - t)
        out = (beta, *res)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[100, 200, 400])
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)
    if smo_solve_compiled is None:
        print("compiled backend not built; nothing to compare", file=sys.stderr)
        return 1
    print(f"{'n':>6}{'iters':>9}{'python s':>11}{'cython s':>11}{'speedup':>9}  identical")
    ok = True
    for n in args.sizes:
        K, y, C, beta0 = problem(n, n)
        tp, (bp, Gp, ip, vp, _) = timed(smo_solve_py, K, y, C, beta0, args.repeats)
        tc, (bc, Gc, ic, vc, _) = timed(smo_solve_compiled, K, y, C, beta0, args.repeats)
        same = ip == ic and np.array_equal(bp, bc) and np.array_equal(np.asarray(Gp),
                                                                      np.asarray(Gc))
        ok &= same
        print(f"{n:>6}{ic:>9}{tp:>11.4f}{tc:>11.4f}{tp / tc:>9.1f}  {same}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
