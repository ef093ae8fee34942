"""Independent reference for equal-column-norm banded prefix-sum factorizations.

Parameterizes the encoder directly: C = V diag(1 / ||v_j||) with V lower
triangular and banded, so X = C^T C is positive definite with unit diagonal
for any V with nonzero diagonal. Minimizes tr[T X^-1] with SciPy's L-BFGS-B
and prints the loss and sqrt(n(n+1)/2 / loss), the RMSE ratio against DP-SGD.

usage: python3 en_reference.py N BANDS [MAXITER]
"""
import sys

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize


def main():
    n, bands = int(sys.argv[1]), int(sys.argv[2])
    maxiter = int(sys.argv[3]) if len(sys.argv) > 3 else 20000
    idx = np.arange(n)
    t = (n - np.maximum.outer(idx, idx)).astype(float)
    mask = (np.subtract.outer(idx, idx) >= 0) & (np.subtract.outer(idx, idx) < bands)
    rows, cols = np.nonzero(mask)

    def f(p):
        v = np.zeros((n, n))
        v[rows, cols] = p
        norms = np.sqrt((v * v).sum(axis=0))
        c = v / norms
        x = c.T @ c
        cf = sla.cho_factor(x, lower=True)
        xinv_t = sla.cho_solve(cf, t)
        loss = np.trace(xinv_t)
        g = -sla.cho_solve(cf, xinv_t.T)
        gc = 2.0 * c @ g
        gv = (gc - c * (gc * c).sum(axis=0)) / norms
        return loss, gv[rows, cols]

    p0 = (rows == cols).astype(float)
    res = minimize(f, p0, jac=True, method="L-BFGS-B",
                   options={"maxiter": maxiter, "maxfun": 4 * maxiter, "maxcor": 20,
                            "ftol": 1e-15, "gtol": 1e-10})
    loss = res.fun
    print(f"n={n} bands={bands} loss={loss!r} ratio={np.sqrt(n * (n + 1) / 2 / loss)!r} "
          f"iters={res.nit} msg={res.message}")


if __name__ == "__main__":
    main()
