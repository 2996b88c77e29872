"""Dense convex QP solver.

Solves ``min 1/2 x'Hx - f'x  s.t.  Gx <= h`` with a Mehrotra predictor-corrector
primal-dual interior-point method. Rows of ``G`` with a single nonzero are
treated as simple bounds and enter the normal equations as a diagonal term.
Once progress stalls the primal and dual step lengths are decoupled, and the
final iterate is polished by an equality-constrained solve on its active set.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.linalg.blas import dsyrk

REGULARIZATION = 1e-9


@dataclass(eq=False)
class QuadraticProgram:
    H: np.ndarray
    f: np.ndarray
    G: np.ndarray
    h: np.ndarray
    variable_map: list = field(default_factory=list)
    const: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.f = np.asarray(self.f, dtype=float).ravel()
        n = self.f.size
        self.G = np.asarray(self.G, dtype=float).reshape(-1, n)
        self.h = np.asarray(self.h, dtype=float).ravel()
        if self.H.shape != (n, n):
            raise ValueError(f"H has shape {self.H.shape}, expected ({n}, {n})")
        if self.G.shape[0] != self.h.size:
            raise ValueError("G and h row counts differ")

    @property
    def n(self) -> int:
        return self.f.size

    @property
    def m(self) -> int:
        return self.h.size

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.H @ x - self.f @ x + self.const)


@dataclass(frozen=True)
class KktReport:
    stationarity: float
    primal_feasibility: float
    complementarity: float
    dual_feasibility: float

    def passed(self, tol: float, dual_scale: float = 1.0, primal_scale: float = 1.0) -> bool:
        """Absolute test when both scales are 1; otherwise residuals are compared relative to the data."""
        return (self.stationarity <= tol * dual_scale and self.primal_feasibility <= tol * primal_scale
                and self.complementarity <= tol * dual_scale * primal_scale and self.dual_feasibility <= tol)


def kkt_scales(qp: QuadraticProgram, x: np.ndarray) -> tuple[float, float]:
    """Magnitudes of the stationarity and feasibility terms, floored at 1."""
    xn = max(1.0, float(np.max(np.abs(x)))) if x.size else 1.0
    d = max(1.0, float(np.max(np.abs(qp.f), initial=0.0)), float(np.max(np.abs(qp.H), initial=0.0)) * xn)
    p = max(1.0, float(np.max(np.abs(qp.h), initial=0.0)))
    return d, p


@dataclass(eq=False)
class QpSolution:
    x: np.ndarray
    lam: np.ndarray
    status: str
    kkt: KktReport
    iterations: int
    solve_time: float  # ms
    objective: float


def verify_kkt(qp: QuadraticProgram, sol: QpSolution, tol: float | None = None) -> KktReport:
    """Recompute KKT residuals from problem data; independent of solver state."""
    x, lam = np.asarray(sol.x, float), np.asarray(sol.lam, float)
    stat = qp.H @ x - qp.f
    if qp.m:
        stat = stat + qp.G.T @ lam
        viol = qp.G @ x - qp.h
        prim = float(max(0.0, viol.max()))
        comp = float(np.max(np.abs(lam * viol)))
        dual = float(max(0.0, -lam.min()))
    else:
        prim = comp = dual = 0.0
    return KktReport(float(np.max(np.abs(stat))) if x.size else 0.0, prim, comp, dual)


class _Rows:
    """Row operator for G that keeps single-nonzero rows out of the dense products."""

    def __init__(self, G: np.ndarray):
        self.m, self.n = G.shape
        nnz = np.count_nonzero(G, axis=1)
        self.bnd = np.flatnonzero(nnz == 1)
        self.gen = np.flatnonzero(nnz != 1)
        self.Gg = np.ascontiguousarray(G[self.gen])
        self.bcol = np.argmax(G[self.bnd] != 0, axis=1) if self.bnd.size else np.zeros(0, dtype=int)
        self.bval = G[self.bnd, self.bcol] if self.bnd.size else np.zeros(0)

    def mul(self, x):
        out = np.empty(self.m)
        out[self.gen] = self.Gg @ x
        out[self.bnd] = self.bval * x[self.bcol]
        return out

    def tmul(self, v):
        out = self.Gg.T @ v[self.gen]
        if self.bnd.size:
            out += np.bincount(self.bcol, self.bval * v[self.bnd], minlength=self.n)
        return out

    def gram(self, w):
        """G' diag(w) G with only the upper triangle filled; the Cholesky factor reads no more."""
        if self.gen.size:
            M = dsyrk(1.0, np.sqrt(w[self.gen])[:, None] * self.Gg, trans=1, lower=0)
        else:
            M = np.zeros((self.n, self.n))
        if self.bnd.size:
            M[np.diag_indices(self.n)] += np.bincount(self.bcol, w[self.bnd] * self.bval ** 2, minlength=self.n)
        return M


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def _factor(M):
    reg = 0.0
    scale = max(1.0, float(np.max(np.abs(np.diag(M)))))
    for _ in range(8):
        try:
            return cho_factor(M + reg * np.eye(M.shape[0]), check_finite=False)
        except LinAlgError:
            reg = scale * 1e-12 if reg == 0.0 else reg * 100.0
    raise LinAlgError("normal-equation matrix not positive definite")


def solve(qp: QuadraticProgram, tol: float = 1e-6, max_iter: int = 50) -> QpSolution:
    t0 = time.perf_counter()
    n, m = qp.n, qp.m
    H = qp.H
    Hreg = H + REGULARIZATION * np.eye(n)
    f = qp.f

    if m == 0:
        cf = _factor(Hreg)
        x = cho_solve(cf, f)
        for _ in range(3):  # iterative refinement removes the regularisation bias
            x = x + cho_solve(cf, f - H @ x)
        sol = QpSolution(x, np.zeros(0), "optimal", KktReport(0, 0, 0, 0), 0,
                         (time.perf_counter() - t0) * 1e3, qp.objective(x))
        sol.kkt = verify_kkt(qp, sol)
        if not sol.kkt.passed(tol):
            sol.status = "max-iterations"
        return sol

    # normalize the cost so multipliers are O(1); residual tests stay in original units
    cs = 1.0 / max(1.0, float(np.max(np.abs(f))), float(np.max(np.abs(H))))
    H, f = H * cs, f * cs
    Hreg = H + REGULARIZATION * np.eye(n)
    rows = _Rows(qp.G)
    h = qp.h

    # initial point from the regularised least-squares problem
    x = cho_solve(_factor(Hreg + rows.gram(np.ones(m))), f + rows.tmul(h))
    z = rows.mul(x) - h
    s, lam = -z, z.copy()
    if s.min() <= 0:
        s = s + 1.0 - s.min()
    if lam.min() <= 0:
        lam = lam + 1.0 - lam.min()

    status = "max-iterations"
    it = 0
    best = (np.inf, x, lam, s)
    best_it = 0
    split = False
    w_max = 0.0
    f0, H0 = float(np.max(np.abs(qp.f))), float(np.max(np.abs(qp.H)))
    p_scale = max(1.0, float(np.max(np.abs(h))))
    fscale = 1.0 + float(np.max(np.abs(f)))
    for it in range(1, max_iter + 1):
        Gx = rows.mul(x)
        r_d = H @ x - f + rows.tmul(lam)
        r_p = Gx + s - h
        sl = s * lam
        mu = sl.sum() / m
        obj = 0.5 * x @ H @ x - f @ x
        rd, rp = np.max(np.abs(r_d)) / cs, np.max(np.abs(r_p))
        merit = max(rd, rp, sl.max() / cs)
        if merit < 0.9 * best[0]:
            best_it = it
        if merit < best[0]:
            best = (merit, x, lam, s)
        if rd <= 0.5 * tol and rp <= 0.5 * tol and sl.max() / cs <= 0.5 * tol \
                and sl.sum() <= 1e-2 * tol * max(cs, abs(obj)):
            status = "optimal"
            break
        # badly scaled data: stop once the relative test holds and progress has stalled
        d_scale = max(1.0, f0, H0 * max(1.0, float(np.max(np.abs(x)))))
        if it - best_it >= 3 and rd <= 0.5 * tol * d_scale and rp <= 0.5 * tol * p_scale \
                and sl.max() / cs <= 0.5 * tol * d_scale * p_scale:
            break
        if w_max > 1e20:  # normal equations exhausted; keep the best iterate
            break
        if it - best_it >= 3:
            # a common step can cycle between degenerate rows; decouple primal and dual steps
            split = True

        lam_inf = float(lam.max())
        if lam_inf > 1e8 * fscale:
            lh = lam / lam_inf
            if h @ lh < -1e-9 and np.max(np.abs(rows.tmul(lh))) < 1e-6:
                status = "infeasible"
                break

        w = lam / s
        w_max = float(w.max())
        try:
            cf = _factor(Hreg + rows.gram(w))
        except LinAlgError:
            break

        # predictor
        dx = cho_solve(cf, -r_d - rows.tmul(w * r_p - lam))
        dlam = w * (rows.mul(dx) + r_p) - lam
        ds = -s - s / lam * dlam
        alpha = min(_max_step(s, ds), _max_step(lam, dlam))
        mu_aff = (s + alpha * ds) @ (lam + alpha * dlam) / m
        sigma = (mu_aff / mu) ** 3

        # corrector
        r_c = sl + ds * dlam - sigma * mu
        dx = cho_solve(cf, -r_d - rows.tmul(w * r_p - r_c / s))
        dlam = w * (rows.mul(dx) + r_p) - r_c / s
        ds = -(r_c + s * dlam) / lam

        a_p = 0.99 * _max_step_raw(s, ds)
        a_d = 0.99 * _max_step_raw(lam, dlam)
        if not split:
            a_p = a_d = min(a_p, a_d)
        a_p, a_d = min(1.0, a_p), min(1.0, a_d)
        x = x + a_p * dx
        s = s + a_p * ds
        lam = lam + a_d * dlam

    if status == "max-iterations":
        _, x, lam, s = best
        r_p = rows.mul(x) + s - h
        if np.max(np.abs(r_p)) > tol and lam.max() > 1e6 * fscale:
            status = "infeasible"

    lam = lam / cs
    sol = QpSolution(x=x, lam=lam, status=status, kkt=KktReport(0, 0, 0, 0), iterations=it,
                     solve_time=0.0, objective=qp.objective(x))
    sol.kkt = verify_kkt(qp, sol)
    if status != "infeasible":
        sol = _polish(qp, sol, s <= lam * cs, rows)  # larger multiplier than slack in the scaled problem
    sol.solve_time = (time.perf_counter() - t0) * 1e3
    ok = sol.kkt.passed(tol, *kkt_scales(qp, x))
    if status == "optimal" and not ok:
        sol.status = "max-iterations"
    elif status == "max-iterations" and ok:
        sol.status = "optimal"  # best iterate meets the (scaled) KKT tolerances
    return sol


def _worst(r: KktReport) -> float:
    return max(r.stationarity, r.primal_feasibility, r.complementarity, r.dual_feasibility)


def _polish(qp: QuadraticProgram, sol: QpSolution, active: np.ndarray, rows: _Rows) -> QpSolution:
    """Solve the equality KKT system on the identified active rows; keep it if the residuals improve.

    Active simple bounds fix their variable, so only the free variables and the
    active general rows enter the linear system.
    """
    n = qp.n
    act_b = rows.bnd[active[rows.bnd]]
    act_g = rows.gen[active[rows.gen]]
    cols = rows.bcol[active[rows.bnd]]
    if np.unique(cols).size != cols.size:
        return sol
    vals = rows.bval[active[rows.bnd]]
    free = np.ones(n, dtype=bool)
    free[cols] = False
    F = np.flatnonzero(free)
    if act_g.size > F.size:
        return sol
    x = np.zeros(n)
    x[cols] = qp.h[act_b] / vals
    GgF = qp.G[np.ix_(act_g, F)]
    K = np.block([[qp.H[np.ix_(F, F)], GgF.T], [GgF, np.zeros((act_g.size, act_g.size))]])
    rhs = np.concatenate([qp.f[F] - qp.H[np.ix_(F, cols)] @ x[cols], qp.h[act_g] - qp.G[np.ix_(act_g, cols)] @ x[cols]])
    try:
        z = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        return sol
    if not np.all(np.isfinite(z)):
        return sol
    x[F] = z[: F.size]
    lam = np.zeros(qp.m)
    lam[act_g] = z[F.size:]
    grad = qp.H @ x - qp.f + qp.G[act_g].T @ lam[act_g]
    lam[act_b] = -grad[cols] / vals
    cand = QpSolution(x, lam, sol.status, sol.kkt, sol.iterations, 0.0, qp.objective(x))
    cand.kkt = verify_kkt(qp, cand)
    return cand if _worst(cand.kkt) <= _worst(sol.kkt) else sol


def _max_step_raw(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))


# --- text dump ------------------------------------------------------------------

def dump_qp(qp: QuadraticProgram, path: str | Path) -> None:
    """Write a self-describing text dump: header with dimensions, then row-major blocks."""
    with open(path, "w") as fh:
        fh.write(f"# dense QP: min 1/2 x'Hx - f'x s.t. Gx <= h\nn {qp.n}\nm {qp.m}\n")
        for name, arr in (("H", qp.H), ("f", qp.f[None, :]), ("G", qp.G), ("h", qp.h[None, :])):
            fh.write(f"{name} {arr.shape[0]} {arr.shape[1]}\n")
            for row in arr:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_qp(path: str | Path) -> QuadraticProgram:
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln and not ln.startswith("#")]
    n = int(lines[0].split()[1])
    m = int(lines[1].split()[1])
    blocks, i = {}, 2
    while i < len(lines):
        name, r, c = lines[i].split()
        r, c = int(r), int(c)
        data = [list(map(float, lines[i + 1 + k].split())) for k in range(r)]
        blocks[name] = np.array(data, dtype=float).reshape(r, c)
        i += 1 + r
    return QuadraticProgram(H=blocks["H"], f=blocks["f"].ravel(), G=blocks["G"].reshape(m, n), h=blocks["h"].ravel())
