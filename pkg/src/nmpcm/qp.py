"""Dense convex QP interface over the active-set backends.

    minimize    0.5 x' h x + g' x
    subject to  lb <= x <= ub          (box)
                cl <= c x <= cu        (general rows)

The solver is a primal active-set method with a fixed capacity chosen at
construction, warm-startable through the per-constraint status vector it
returns. `h` must be positive definite; the RTI layer guarantees that via
Levenberg regularization, standalone callers are expected to do the same.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from . import backend


class QpStatus(enum.Enum):
    SOLVED = 0
    MAX_ITER = 1
    INFEASIBLE = 2


class QpFailure(RuntimeError):
    """Raised by consumers when a QP solve did not reach optimality."""

    def __init__(self, reason: str, status: QpStatus):
        super().__init__(reason)
        self.status = status


@dataclass
class QpProblem:
    h: NDArray[np.float64]
    g: NDArray[np.float64]
    lb: NDArray[np.float64]
    ub: NDArray[np.float64]
    c: Optional[NDArray[np.float64]] = None
    cl: Optional[NDArray[np.float64]] = None
    cu: Optional[NDArray[np.float64]] = None

    def __post_init__(self):
        self.h = np.atleast_2d(np.asarray(self.h, dtype=float))
        self.g = np.asarray(self.g, dtype=float).ravel()
        self.lb = np.asarray(self.lb, dtype=float).ravel()
        self.ub = np.asarray(self.ub, dtype=float).ravel()
        n = self.g.size
        if self.h.shape != (n, n):
            raise ValueError("h must be n x n")
        if self.lb.size != n or self.ub.size != n:
            raise ValueError("bounds must be length n")
        if np.any(self.lb > self.ub):
            raise ValueError("lb must be <= ub")
        if not np.allclose(self.h, self.h.T, atol=1e-12):
            raise ValueError("h must be symmetric")
        if self.c is not None:
            self.c = np.atleast_2d(np.asarray(self.c, dtype=float))
            self.cl = np.asarray(self.cl, dtype=float).ravel()
            self.cu = np.asarray(self.cu, dtype=float).ravel()
            if self.c.shape[1] != n:
                raise ValueError("c must have n columns")
            m = self.c.shape[0]
            if self.cl.size != m or self.cu.size != m:
                raise ValueError("row bounds must match c")
            if np.any(self.cl > self.cu):
                raise ValueError("cl must be <= cu")

    @property
    def n(self) -> int:
        return self.g.size

    @property
    def m(self) -> int:
        return 0 if self.c is None else self.c.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.h @ x + self.g @ x)


@dataclass
class QpSolution:
    x_opt: NDArray[np.float64]
    var_status: NDArray[np.int8]      # 0 free, -1 at lower, +1 at upper
    gen_status: NDArray[np.int8]
    mu: NDArray[np.float64]           # bound multipliers
    lam: NDArray[np.float64]          # general-row multipliers
    iterations: int
    status: QpStatus
    kkt_residual: float = field(default=np.inf)

    @property
    def active_set(self):
        """(var_status, gen_status) pair usable as a warm start."""
        return self.var_status, self.gen_status


class DenseQpSolver:
    """Fixed-capacity dense active-set solver with persistent warm state.

    One instance per thread: the factorization workspace and the stored
    active set are not shareable. Construction is where all allocation
    happens; `solve` on the compiled backend performs none.
    """

    def __init__(self, capacity_n: int, capacity_m: int = 0,
                 backend_name: str | None = None):
        impl = backend.get_module(backend_name)
        self.backend = backend_name or backend.default_backend()
        self._core = impl.DenseQp(capacity_n, capacity_m)
        self.capacity_n = capacity_n
        self.capacity_m = capacity_m

    def solve(self, prob: QpProblem, warm=None) -> QpSolution:
        """Solve `prob`, optionally warm-starting from an active set.

        `warm` may be None (cold start), True (reuse the statuses stored
        from the previous solve), or an (var_status, gen_status) pair as
        returned in `QpSolution.active_set`.
        """
        core = self._core
        core.setup(prob.h, prob.g, prob.lb, prob.ub, prob.c, prob.cl, prob.cu)
        if warm is None:
            is_warm = False
        elif warm is True:
            is_warm = True
        else:
            vs, gs = warm
            core.var_status[: prob.n] = vs
            core.gen_status[: prob.m] = gs
            is_warm = True
        code = core.solve(is_warm)
        x, mu, lam = core.solution()
        return QpSolution(
            x_opt=x,
            var_status=core.var_status[: prob.n].copy(),
            gen_status=core.gen_status[: prob.m].copy(),
            mu=mu,
            lam=lam,
            iterations=int(core.iterations),
            status=QpStatus(code),
            kkt_residual=float(core.kkt_residual),
        )


def kkt_error(prob: QpProblem, sol: QpSolution) -> dict:
    """Post-hoc KKT check from the returned point and multipliers.

    Returns absolute stationarity and feasibility residuals; the sign
    convention (multipliers >= 0 at upper bounds, <= 0 at lower) is checked
    through the worst-signed violation.
    """
    x = sol.x_opt
    grad = prob.h @ x + prob.g
    if prob.m:
        grad = grad + prob.c.T @ sol.lam
    stationarity = float(np.abs(grad + sol.mu).max(initial=0.0))
    feas = float(
        np.maximum(prob.lb - x, x - prob.ub).max(initial=0.0)
    )
    sign = 0.0
    for i in range(prob.n):
        if sol.var_status[i] == 1:
            sign = max(sign, -sol.mu[i])
        elif sol.var_status[i] == -1:
            sign = max(sign, sol.mu[i])
        elif abs(sol.mu[i]) > 0:
            sign = max(sign, abs(sol.mu[i]))
    if prob.m:
        r = prob.c @ x
        feas = max(feas, float(np.maximum(prob.cl - r, r - prob.cu).max(initial=0.0)))
        for j in range(prob.m):
            if sol.gen_status[j] == 1:
                sign = max(sign, -sol.lam[j])
            elif sol.gen_status[j] == -1:
                sign = max(sign, sol.lam[j])
            elif abs(sol.lam[j]) > 0:
                sign = max(sign, abs(sol.lam[j]))
    return {
        "stationarity": stationarity,
        "feasibility": feas,
        "sign_violation": sign,
    }


def warm_solve_iterations(problems, capacity_n: int, capacity_m: int = 0,
                          backend_name: str | None = None):
    """Iteration counts for a problem stream, cold vs warm.

    Solves the sequence twice: once resetting the active set before every
    problem, once carrying it over (the RTI usage pattern). Returns
    ``(cold_counts, warm_counts)`` arrays of working-set-change counts.
    """
    cold = DenseQpSolver(capacity_n, capacity_m, backend_name)
    warm = DenseQpSolver(capacity_n, capacity_m, backend_name)
    cold_counts = []
    warm_counts = []
    for prob in problems:
        cold_counts.append(cold.solve(prob, warm=None).iterations)
        warm_counts.append(warm.solve(prob, warm=True).iterations)
    return np.array(cold_counts), np.array(warm_counts)


# ---------------------------------------------------------------------------
# Text serialization (row-major, whitespace separated; docs/qp_format.md)
# ---------------------------------------------------------------------------

def save_problem(path, prob: QpProblem) -> None:
    """Write a problem to the plain-text matrix format."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{prob.n} {prob.m}\n")
        for block in _problem_blocks(prob):
            fh.write(" ".join(f"{v:.17g}" for v in np.ravel(block)) + "\n")


def load_problem(path) -> QpProblem:
    """Read a problem written by `save_problem`."""
    with open(path, encoding="ascii") as fh:
        first = fh.readline().split()
        n, m = int(first[0]), int(first[1])
        rows = [np.array([float(t) for t in line.split()]) for line in fh]
    expect = 4 + (3 if m else 0)
    if len(rows) != expect:
        raise ValueError(f"expected {expect} data lines, found {len(rows)}")
    h = rows[0].reshape(n, n)
    g, lb, ub = rows[1], rows[2], rows[3]
    if m:
        return QpProblem(h, g, lb, ub, rows[4].reshape(m, n), rows[5], rows[6])
    return QpProblem(h, g, lb, ub)


def _problem_blocks(prob: QpProblem):
    blocks = [prob.h, prob.g, prob.lb, prob.ub]
    if prob.m:
        blocks += [prob.c, prob.cl, prob.cu]
    return blocks
