"""Independent numeric oracles used by the test suite.

Deliberately implemented with different machinery than the package under
test: eigenvalues by hand-rolled power iteration, argmins by plain
gradient descent or a conic solver, derivatives by finite differences.
"""

from __future__ import annotations

import numpy as np


def power_iteration_eigs(s: np.ndarray, count: int, iters: int = 5000) -> np.ndarray:
    """Leading eigenvalues of a symmetric PSD matrix via power iteration.

    Deflates after each converged eigenpair. Avoids np.linalg entirely so
    it stays independent of the LAPACK paths the package uses.
    """
    work = np.array(s, dtype=np.float64, copy=True)
    n = work.shape[0]
    rng = np.random.default_rng(1234)
    out = []
    for _ in range(count):
        v = rng.standard_normal(n)
        v /= np.sqrt(np.sum(v * v))
        lam = 0.0
        for _ in range(iters):
            w = work @ v
            norm = np.sqrt(np.sum(w * w))
            if norm == 0.0:
                lam = 0.0
                break
            v = w / norm
            lam = float(v @ (work @ v))
        out.append(lam)
        work = work - lam * np.outer(v, v)
    return np.array(out)


def fd_gradient(fun, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    xflat = x.ravel()
    for j in range(xflat.size):
        step = np.zeros_like(xflat)
        step[j] = eps
        plus = fun((xflat + step).reshape(x.shape))
        minus = fun((xflat - step).reshape(x.shape))
        flat[j] = (plus - minus) / (2.0 * eps)
    return grad


def gd_argmin(grad, x0: np.ndarray, lr: float, iters: int = 20000, tol: float = 1e-12) -> np.ndarray:
    """Plain gradient descent run to a tiny gradient norm."""
    x = np.array(x0, dtype=np.float64, copy=True)
    for _ in range(iters):
        g = grad(x)
        x = x - lr * g
        if np.linalg.norm(g.ravel()) <= tol:
            break
    return x


def cvx_nuclear_prox(a: np.ndarray, tau: float) -> np.ndarray:
    """argmin_Z tau*||Z||_* + 0.5*||Z - A||_F^2 via a conic solver."""
    import cvxpy as cp

    z = cp.Variable(a.shape)
    objective = cp.Minimize(tau * cp.normNuc(z) + 0.5 * cp.sum_squares(z - a))
    problem = cp.Problem(objective)
    problem.solve(solver=cp.SCS, eps=1e-10, max_iters=100000)
    return np.asarray(z.value)


def nuclear_norm_by_eigs(a: np.ndarray) -> float:
    """Nuclear norm as the sum of sqrt eigenvalues of A^T A (power iteration)."""
    gram = a.T @ a
    eigs = power_iteration_eigs(gram, gram.shape[0])
    return float(np.sum(np.sqrt(np.clip(eigs, 0.0, None))))
