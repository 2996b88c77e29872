"""Independent reference implementations used to cross-check the package.

None of these import solver or builder internals; they work from problem
data only.
"""
from itertools import combinations

import numpy as np

from pcs_mpc.qp import QuadraticProgram


def active_set_enumeration(H, f, G, h, feas_tol=1e-9):
    """Global minimum of ``1/2 x'Hx - f'x`` s.t. ``Gx <= h`` by trying every active set.

    For each subset W of rows (|W| <= n) the equality-constrained problem with
    ``G_W x = h_W`` is solved through its KKT system. The optimum of a convex QP
    is the stationary point of one such subproblem, and every other feasible
    candidate has a cost at least as large, so the best feasible candidate is
    the answer. Returns ``(x, objective)``.
    """
    H, f, G, h = (np.asarray(a, float) for a in (H, f, G, h))
    n, m = f.size, h.size
    best_x, best_val = None, np.inf
    for k in range(min(m, n) + 1):
        for W in combinations(range(m), k):
            W = list(W)
            A = G[W]
            K = np.block([[H, A.T], [A, np.zeros((k, k))]])
            rhs = np.concatenate([f, h[W]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            x = sol[:n]
            if m and np.max(G @ x - h) > feas_tol * (1 + np.abs(h).max()):
                continue
            val = 0.5 * x @ H @ x - f @ x
            if val < best_val:
                best_x, best_val = x, val
    return best_x, best_val


def random_qp(rng, n_max=60, m_max=120):
    """Random convex QP with a strictly feasible point.

    Half the instances have a singular (PSD) Hessian; those get box rows
    counted inside the ``m_max`` budget so the problem stays bounded.
    """
    n = int(rng.integers(1, n_max + 1))
    r = int(rng.integers(1, n + 1))
    M = rng.normal(size=(n, r))
    H = M @ M.T / r
    singular = rng.random() < 0.5 and 2 * n <= m_max
    if not singular:
        H += 1e-2 * np.eye(n)
    m_free = m_max - (2 * n if singular else 0)
    m = int(rng.integers(0, m_free + 1))
    G = rng.normal(size=(m, n))
    x0 = rng.normal(size=n)
    h = G @ x0 + rng.uniform(0.1, 1.0, m)
    if singular:
        G = np.vstack([G, np.eye(n), -np.eye(n)])
        h = np.concatenate([h, x0 + 5.0, 5.0 - x0])
    f = 3.0 * rng.normal(size=n)
    return QuadraticProgram(H=H, f=f, G=G, h=h)


def tiny_qp(rng, n_max=6, m_max=10):
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    M = rng.normal(size=(n, n))
    H = M @ M.T + 0.1 * np.eye(n)
    G = rng.normal(size=(m, n))
    x0 = rng.normal(size=n)
    h = G @ x0 + rng.uniform(0.05, 1.0, m)
    f = 3.0 * rng.normal(size=n)
    return QuadraticProgram(H=H, f=f, G=G, h=h)
