"""Brute-force QP reference by exhaustive active-set enumeration.

Deliberately independent of the active-set solver: every combination of
constraint statuses (each variable free / at lower / at upper, each general
row inactive / at lower / at upper) defines one square linear system

    fixed variable rows:     x_i = bound
    free variable rows:      (H x + C' lam)_i = -g_i
    active general rows:     C_j x = bound
    inactive general rows:   lam_j = 0

solved in batches; the feasible candidate with the smallest objective is
the global optimum of the strictly convex QP. Tractable only for small
n + m (3^(n+m) patterns), which is exactly the regime the random-problem
suite draws from.
"""

from __future__ import annotations

import time

import numpy as np

from .qp import DenseQpSolver, QpProblem, QpStatus

POW3 = 3 ** np.arange(21, dtype=np.int64)


def solve_by_enumeration(prob: QpProblem, tol: float = 1e-8,
                         chunk: int = 32768):
    """Global optimum by enumerating all 3^(n+m) status patterns.

    Returns (x_opt, objective); raises ValueError when no pattern yields a
    feasible candidate (infeasible problem).
    """
    n, m = prob.n, prob.m
    nm = n + m
    if nm > 16:
        raise ValueError("enumeration over 3^16 patterns is not tractable")
    h, g = prob.h, prob.g
    lb, ub = prob.lb, prob.ub
    c = prob.c if m else np.zeros((0, n))
    cl = prob.cl if m else np.zeros(0)
    cu = prob.cu if m else np.zeros(0)

    best_x = None
    best_obj = np.inf
    total = int(POW3[nm])
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total), dtype=np.int64)
        digits = (codes[:, None] // POW3[:nm]) % 3  # 0 free/inactive, 1 lower, 2 upper
        # patterns with more active rows than free variables are singular
        nfree = (digits[:, :n] == 0).sum(axis=1)
        nact = (digits[:, n:] != 0).sum(axis=1)
        digits = digits[nact <= nfree]
        if not digits.shape[0]:
            continue
        x = _solve_patterns(digits, h, g, lb, ub, c, cl, cu)
        feas = np.isfinite(x).all(axis=1)
        feas &= (x >= lb - tol).all(axis=1) & (x <= ub + tol).all(axis=1)
        if m:
            r = x @ c.T
            feas &= (r >= cl - tol).all(axis=1) & (r <= cu + tol).all(axis=1)
        if not feas.any():
            continue
        xf = x[feas]
        obj = 0.5 * np.einsum("pi,ij,pj->p", xf, h, xf) + xf @ g
        i = int(np.argmin(obj))
        if obj[i] < best_obj:
            best_obj = float(obj[i])
            best_x = xf[i].copy()
    if best_x is None:
        raise ValueError("no feasible status pattern: problem is infeasible")
    return best_x, best_obj


def _solve_patterns(digits, h, g, lb, ub, c, cl, cu):
    """Batched solve of the per-pattern square systems; NaN on singular."""
    p, nm = digits.shape
    n = g.size
    m = nm - n
    mat = np.zeros((p, nm, nm))
    rhs = np.zeros((p, nm))
    for i in range(n):
        di = digits[:, i]
        sel = di == 0
        mat[sel, i, :n] = h[i]
        if m:
            mat[sel, i, n:] = c[:, i]
        rhs[sel, i] = -g[i]
        sel = di == 1
        mat[sel, i, i] = 1.0
        rhs[sel, i] = lb[i]
        sel = di == 2
        mat[sel, i, i] = 1.0
        rhs[sel, i] = ub[i]
    for j in range(m):
        dj = digits[:, n + j]
        sel = dj == 0
        mat[sel, n + j, n + j] = 1.0
        sel = dj == 1
        mat[sel, n + j, :n] = c[j]
        rhs[sel, n + j] = cl[j]
        sel = dj == 2
        mat[sel, n + j, :n] = c[j]
        rhs[sel, n + j] = cu[j]
    try:
        with np.errstate(all="ignore"):
            z = np.linalg.solve(mat, rhs[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        z = np.full((p, nm), np.nan)
        for k in range(p):
            try:
                z[k] = np.linalg.solve(mat[k], rhs[k])
            except np.linalg.LinAlgError:
                pass
    return z[:, :n]


def generate_problem(rng: np.random.Generator, n: int, m: int) -> QpProblem:
    """Random strictly convex QP, feasible by construction.

    h = M'M + I per the benchmark recipe; bounds and row ranges straddle a
    drawn feasible point so active sets vary across draws.
    """
    mfac = rng.normal(size=(n, n))
    h = mfac.T @ mfac + np.eye(n)
    x_feas = rng.uniform(-1.0, 1.0, n)
    g = rng.normal(scale=3.0, size=n)
    lb = x_feas - rng.uniform(0.1, 1.2, n)
    ub = x_feas + rng.uniform(0.1, 1.2, n)
    if m:
        c = rng.normal(size=(m, n))
        r = c @ x_feas
        cl = r - rng.uniform(0.1, 1.5, m)
        cu = r + rng.uniform(0.1, 1.5, m)
        return QpProblem(h, g, lb, ub, c, cl, cu)
    return QpProblem(h, g, lb, ub)


def suite_sizes(count: int, n_cap: int, m_cap: int,
                rng: np.random.Generator):
    """Deterministic (n, m) schedule under the enumeration budget.

    Mostly small problems, a medium band, and a few corner problems that
    reach the requested caps while keeping 3^(n+m) tractable.
    """
    n_cap = max(2, int(n_cap))
    m_cap = max(0, int(m_cap))
    corner_pool = []
    for cand in (
        (n_cap, min(m_cap, max(0, 12 - n_cap))),
        (max(2, min(n_cap, 12 - m_cap)), m_cap),
        (min(n_cap, 12), 0),
        (max(2, min(n_cap, 10)), min(m_cap, 2)),
    ):
        if cand not in corner_pool:
            corner_pool.append(cand)
    n_corner = min(6, count)
    n_medium = min(count - n_corner, count // 10)
    n_small = count - n_corner - n_medium
    sizes = []
    for _ in range(n_small):
        n = int(rng.integers(2, min(n_cap, 6) + 1))
        m = int(rng.integers(0, min(m_cap, 3) + 1))
        sizes.append((n, m))
    for _ in range(n_medium):
        n = int(rng.integers(3, min(n_cap, 8) + 1))
        m = int(rng.integers(0, min(m_cap, 4) + 1))
        m = min(m, max(0, 11 - n))
        sizes.append((n, m))
    for i in range(n_corner):
        sizes.append(corner_pool[i % len(corner_pool)])
    return sizes


def run_suite(count: int, n_cap: int, m_cap: int, seed: int,
              backend_name: str | None = None) -> dict:
    """Solver vs enumeration oracle over a seeded random suite.

    Returns pass/fail counts plus worst-case deviations; used by both the
    acceptance tests and the bench-qp command.
    """
    rng = np.random.default_rng(seed)
    sizes = suite_sizes(count, n_cap, m_cap, rng)
    solver = DenseQpSolver(max(n_cap, 2), m_cap, backend_name)
    failures = []
    max_dx = 0.0
    max_kkt_rel = 0.0
    t0 = time.perf_counter()
    for idx, (n, m) in enumerate(sizes):
        prob = generate_problem(rng, n, m)
        sol = solver.solve(prob, warm=None)
        x_ref, _ = solve_by_enumeration(prob)
        dx = float(np.abs(sol.x_opt - x_ref).max())
        kkt_rel = sol.kkt_residual / (1.0 + float(np.abs(prob.g).max()))
        max_dx = max(max_dx, dx)
        max_kkt_rel = max(max_kkt_rel, kkt_rel)
        if sol.status is not QpStatus.SOLVED or dx > 1e-7 or kkt_rel > 1e-8:
            failures.append((idx, n, m, sol.status.name, dx, kkt_rel))
    elapsed = time.perf_counter() - t0
    return {
        "count": len(sizes),
        "passed": len(sizes) - len(failures),
        "failures": failures,
        "max_dx": max_dx,
        "max_kkt_rel": max_kkt_rel,
        "elapsed_s": elapsed,
    }
