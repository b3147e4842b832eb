"""Numpy fallback backend.

Mirrors the interface of the compiled core (``nmpcm._core``): quadrotor
dynamics with exact discrete-map sensitivities, the condensing RTI workspace,
and the dense primal active-set QP. The algorithms are identical; this module
trades the fixed-allocation discipline of the compiled core for plain numpy,
so it is the correctness reference and the fallback on machines without a
C toolchain, not the path the timing contract is asserted on.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"

NX = 12
NU = 4

# Active-set status codes, shared with the compiled core.
FREE = 0
AT_LOWER = -1
AT_UPPER = 1

QP_SOLVED = 0
QP_MAX_ITER = 1
QP_INFEASIBLE = 2

# Fixed solver tolerances (deliberately not configurable; the RTI consumer
# needs predictable behavior).
FEAS_TOL = 1e-9
STEP_TOL = 1e-11
MULT_TOL = 1e-9
RATIO_TOL = 1e-12
PHASE1_EPS = 1e-6
PHASE1_TOL = 1e-7
REFACTOR_EVERY = 50  # used by the compiled core; kept here for parity


# ---------------------------------------------------------------------------
# Quadrotor dynamics
# ---------------------------------------------------------------------------

def dynamics(x, u, p, out=None):
    """Continuous-time state derivative of the 12-state quadrotor.

    State layout: position (3), Euler angles phi/theta/psi (3), linear
    velocity (3), angular rates (3). ``p`` is the parameter vector
    ``[m, l, ixx, iyy, izz, g]``.

    The thrust enters through the body-z direction expressed in world axes
    via the Z-Y-X Euler rotation; the vertical channel is written as
    ``(c_th*c_ph*u1 - m*g)/m`` so the hover equilibrium is an exact fixed
    point in floating point.
    """
    if out is None:
        out = np.empty(NX)
    m, _, ixx, iyy, izz, grav = p
    sph, cph = np.sin(x[3]), np.cos(x[3])
    sth, cth = np.sin(x[4]), np.cos(x[4])
    sps, cps = np.sin(x[5]), np.cos(x[5])
    out[0:6] = x[6:12]
    out[6] = (sps * sph + cps * sth * cph) * u[0] / m
    out[7] = (sps * sth * cph - cps * sph) * u[0] / m
    out[8] = (cth * cph * u[0] - m * grav) / m
    out[9] = (x[10] * x[11] * (iyy - izz) + u[1]) / ixx
    out[10] = (x[11] * x[9] * (izz - ixx) + u[2]) / iyy
    out[11] = (x[9] * x[10] * (ixx - iyy) + u[3]) / izz
    return out


def dynamics_jacobians(x, u, p):
    """Analytic Jacobians (d xdot / d x, d xdot / d u) of `dynamics`."""
    m, _, ixx, iyy, izz, _ = p
    sph, cph = np.sin(x[3]), np.cos(x[3])
    sth, cth = np.sin(x[4]), np.cos(x[4])
    sps, cps = np.sin(x[5]), np.cos(x[5])
    u1m = u[0] / m

    jx = np.zeros((NX, NX))
    jx[0:6, 6:12] = np.eye(6)
    # translational acceleration vs angles
    jx[6, 3] = (sps * cph - cps * sth * sph) * u1m
    jx[6, 4] = cps * cth * cph * u1m
    jx[6, 5] = (cps * sph - sps * sth * cph) * u1m
    jx[7, 3] = (-sps * sth * sph - cps * cph) * u1m
    jx[7, 4] = sps * cth * cph * u1m
    jx[7, 5] = (cps * sth * cph + sps * sph) * u1m
    jx[8, 3] = -cth * sph * u1m
    jx[8, 4] = -sth * cph * u1m
    # gyroscopic coupling vs rates
    jx[9, 10] = x[11] * (iyy - izz) / ixx
    jx[9, 11] = x[10] * (iyy - izz) / ixx
    jx[10, 9] = x[11] * (izz - ixx) / iyy
    jx[10, 11] = x[9] * (izz - ixx) / iyy
    jx[11, 9] = x[10] * (ixx - iyy) / izz
    jx[11, 10] = x[9] * (ixx - iyy) / izz

    ju = np.zeros((NX, NU))
    ju[6, 0] = (sps * sph + cps * sth * cph) / m
    ju[7, 0] = (sps * sth * cph - cps * sph) / m
    ju[8, 0] = cth * cph / m
    ju[9, 1] = 1.0 / ixx
    ju[10, 2] = 1.0 / iyy
    ju[11, 3] = 1.0 / izz
    return jx, ju


def rk4_step(x, u, p, dt, substeps=1):
    """Classical RK4 over `substeps` sub-intervals with zero-order-hold u."""
    h = dt / substeps
    y = np.array(x, dtype=float)
    for _ in range(substeps):
        k1 = dynamics(y, u, p)
        k2 = dynamics(y + 0.5 * h * k1, u, p)
        k3 = dynamics(y + 0.5 * h * k2, u, p)
        k4 = dynamics(y + h * k3, u, p)
        y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


def rk4_step_sens(x, u, p, dt, substeps=1):
    """RK4 step plus exact Jacobians of the discrete map.

    Propagates the variational equations through every RK4 stage: with
    stage derivatives k_i and their state/control derivatives D_i, E_i,

        D1 = J1,  D_i = J_i (I + h c_i D_{i-1}),
        E1 = Ju1, E_i = J_i (h c_i E_{i-1}) + Ju_i,

    the substep sensitivities are A_sub = I + h/6 (D1+2D2+2D3+D4) and
    B_sub = h/6 (E1+2E2+2E3+E4), chained across substeps as
    A <- A_sub A, B <- A_sub B + B_sub.
    """
    h = dt / substeps
    y = np.array(x, dtype=float)
    eye = np.eye(NX)
    a = np.eye(NX)
    b = np.zeros((NX, NU))
    for _ in range(substeps):
        k1 = dynamics(y, u, p)
        j1x, j1u = dynamics_jacobians(y, u, p)
        y2 = y + 0.5 * h * k1
        k2 = dynamics(y2, u, p)
        j2x, j2u = dynamics_jacobians(y2, u, p)
        y3 = y + 0.5 * h * k2
        k3 = dynamics(y3, u, p)
        j3x, j3u = dynamics_jacobians(y3, u, p)
        y4 = y + h * k3
        k4 = dynamics(y4, u, p)
        j4x, j4u = dynamics_jacobians(y4, u, p)

        d1 = j1x
        d2 = j2x @ (eye + 0.5 * h * d1)
        d3 = j3x @ (eye + 0.5 * h * d2)
        d4 = j4x @ (eye + h * d3)
        a_sub = eye + (h / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4)

        e1 = j1u
        e2 = j2x @ (0.5 * h * e1) + j2u
        e3 = j3x @ (0.5 * h * e2) + j3u
        e4 = j4x @ (h * e3) + j4u
        b_sub = (h / 6.0) * (e1 + 2.0 * e2 + 2.0 * e3 + e4)

        y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        a = a_sub @ a
        b = a_sub @ b + b_sub
    return y, a, b


# ---------------------------------------------------------------------------
# Dense primal active-set QP
# ---------------------------------------------------------------------------

class DenseQp:
    """Primal active-set solver for box + general linear inequality QPs.

    minimize 0.5 x'Hx + g'x  s.t.  lb <= x <= ub,  cl <= Cx <= cu

    H must be positive definite (the RTI layer guarantees this through
    Levenberg regularization). Capacities are fixed at construction; problem
    data lives in preallocated buffers that callers may fill directly
    (`refresh`) or copy into (`setup`). Active-set statuses persist across
    solves and act as the warm start.

    Multiplier convention: at the optimum, bound multipliers are
    mu = -(Hx + g + C'lam), nonnegative at upper bounds and nonpositive at
    lower bounds; general-row multipliers lam follow the same signs.
    """

    def __init__(self, cap_n, cap_m, _restoration=False):
        if cap_n < 1 or cap_m < 0:
            raise ValueError("capacities must satisfy cap_n >= 1, cap_m >= 0")
        self.cap_n = int(cap_n)
        self.cap_m = int(cap_m)
        self.Hb = np.zeros((cap_n, cap_n))
        self.gb = np.zeros(cap_n)
        self.lbb = np.full(cap_n, -np.inf)
        self.ubb = np.full(cap_n, np.inf)
        self.Cb = np.zeros((cap_m, cap_n))
        self.clb = np.full(cap_m, -np.inf)
        self.cub = np.full(cap_m, np.inf)
        self.xb = np.zeros(cap_n)
        self.var_status = np.zeros(cap_n, dtype=np.int8)
        self.gen_status = np.zeros(cap_m, dtype=np.int8)
        self.mub = np.zeros(cap_n)
        self.lamb = np.zeros(cap_m)
        self.n = 0
        self.m = 0
        self.iterations = 0
        self.kkt_residual = np.inf
        self.infeasibility = 0.0
        # Phase-1 restoration runs on a dedicated instance with a slack
        # variable per general row; its own start is feasible by
        # construction, so the recursion stops at depth one.
        self._restoration = _restoration
        if cap_m > 0 and not _restoration:
            self._aux = DenseQp(cap_n + cap_m, cap_m, _restoration=True)
        else:
            self._aux = None

    # -- data ingestion ---------------------------------------------------

    def refresh(self, n, m):
        """Declare problem dimensions after buffers were filled in place."""
        if not (1 <= n <= self.cap_n) or not (0 <= m <= self.cap_m):
            raise ValueError("problem size exceeds solver capacity")
        if n != self.n or m != self.m:
            self.var_status[:] = FREE
            self.gen_status[:] = FREE
            self.xb[:] = 0.0
        self.n = int(n)
        self.m = int(m)

    def setup(self, h, g, lb, ub, c=None, cl=None, cu=None):
        """Copy problem data into the solver buffers."""
        g = np.asarray(g, dtype=float)
        n = g.size
        m = 0 if c is None else np.asarray(c).shape[0]
        self.refresh(n, m)
        self.Hb[:n, :n] = h
        self.gb[:n] = g
        self.lbb[:n] = lb
        self.ubb[:n] = ub
        if m:
            self.Cb[:m, :n] = c
            self.clb[:m] = cl
            self.cub[:m] = cu

    def workspace_bytes(self):
        total = sum(
            arr.nbytes
            for arr in (
                self.Hb, self.gb, self.lbb, self.ubb, self.Cb, self.clb,
                self.cub, self.xb, self.var_status, self.gen_status,
                self.mub, self.lamb,
            )
        )
        if self._aux is not None:
            total += self._aux.workspace_bytes()
        return total

    # -- solve ------------------------------------------------------------

    def solve(self, warm=True):
        n, m = self.n, self.m
        if n == 0:
            raise RuntimeError("solve called before setup/refresh")
        h = self.Hb[:n, :n]
        g = self.gb[:n]
        lb = self.lbb[:n]
        ub = self.ubb[:n]
        c = self.Cb[:m, :n]
        cl = self.clb[:m]
        cu = self.cub[:m]
        vs = self.var_status[:n]
        gs = self.gen_status[:m]
        x = self.xb[:n]
        self.iterations = 0
        self.infeasibility = 0.0

        if not warm:
            vs[:] = FREE
            gs[:] = FREE
            x[:] = 0.0
        np.clip(x, lb, ub, out=x)
        at_lo = vs == AT_LOWER
        at_up = vs == AT_UPPER
        x[at_lo] = lb[at_lo]
        x[at_up] = ub[at_up]
        if not warm:
            # start from the clipped origin with the binding bounds in the
            # working set (deterministic cold start)
            vs[x <= lb] = AT_LOWER
            vs[(x >= ub) & (vs == FREE)] = AT_UPPER

        if m and not self._restoration:
            r = c @ x
            inact = gs == FREE
            viol = np.maximum(cl - r, r - cu)
            if inact.any() and np.max(viol[inact], initial=0.0) > 10.0 * FEAS_TOL:
                if not self._phase1():
                    self._store_multipliers(h, g, c, np.zeros(m))
                    return QP_INFEASIBLE

        max_changes = 20 * (n + m)
        mult_tol = MULT_TOL * (1.0 + np.abs(g).max(initial=0.0))
        status = QP_MAX_ITER
        lam = np.zeros(m)
        # `iterations` counts working-set changes only, so unblocked full
        # steps pass through uncounted; `passes` caps every trip through the
        # loop as a termination backstop.
        passes = 0
        force_check = False
        while True:
            passes += 1
            if passes > 2 * max_changes + 4:
                break
            p, lam_act, act_idx, singular = self._eqp(h, g, x, c, cl, cu, vs, gs)
            check_now = force_check
            force_check = False
            if singular:
                # redundant working set; deterministically drop the
                # highest-index active general row and retry
                drop = act_idx[-1]
                gs[drop] = FREE
                self.iterations += 1
                if self.iterations > max_changes:
                    break
                continue
            lam[:] = 0.0
            lam[act_idx] = lam_act
            step = np.abs(p).max(initial=0.0)
            if check_now or step <= STEP_TOL * (1.0 + np.abs(x).max(initial=0.0)):
                kind, idx = self._worst_multiplier(h, g, x, c, lam, vs, gs, mult_tol)
                if kind == 0:
                    status = QP_SOLVED
                    break
                if kind == 1:
                    vs[idx] = FREE
                else:
                    gs[idx] = FREE
                self.iterations += 1
                if self.iterations > max_changes:
                    break
                continue
            alpha, bkind, bidx, bside = self._ratio_test(x, p, lb, ub, c, cl, cu, vs, gs)
            if alpha > 0.0:
                x += alpha * p
            if bkind == 0:
                # An unblocked full step lands on the optimum of the current
                # working set, so go straight to the multiplier test next
                # pass. Re-measuring the step there can leave rounding noise
                # just above STEP_TOL whose sign flips each pass, which would
                # otherwise ping-pong forever without changing the set.
                force_check = True
                continue
            if bkind == 1:
                x[bidx] = ub[bidx] if bside == AT_UPPER else lb[bidx]
                vs[bidx] = bside
            else:
                gs[bidx] = bside
            self.iterations += 1
            if self.iterations > max_changes:
                break

        self._store_multipliers(h, g, c, lam)
        return status

    def solution(self):
        """Copy of (x, mu, lam) at the current sizes."""
        n, m = self.n, self.m
        return self.xb[:n].copy(), self.mub[:n].copy(), self.lamb[:m].copy()

    # -- internals --------------------------------------------------------

    def _eqp(self, h, g, x, c, cl, cu, vs, gs):
        """Solve the equality-constrained subproblem for the working set.

        Returns the full-space step p (zeros at fixed variables), the
        multipliers of the active general rows, the active row indices, and
        a singularity flag.
        """
        free_idx = np.flatnonzero(vs == FREE)
        act_idx = np.flatnonzero(gs != FREE)
        nf = free_idx.size
        na = act_idx.size
        p = np.zeros_like(x)
        if nf == 0 and na == 0:
            return p, np.zeros(0), act_idx, False
        if na > nf:
            return p, np.zeros(0), act_idx, True
        hx = h @ x + g
        if na == 0:
            try:
                pf = np.linalg.solve(h[np.ix_(free_idx, free_idx)], -hx[free_idx])
            except np.linalg.LinAlgError:
                return p, np.zeros(0), act_idx, True
            p[free_idx] = pf
            return p, np.zeros(0), act_idx, False
        bound = np.where(gs[act_idx] == AT_UPPER, cu[act_idx], cl[act_idx])
        resid = bound - c[act_idx] @ x
        cf = c[np.ix_(act_idx, free_idx)]
        kkt = np.zeros((nf + na, nf + na))
        kkt[:nf, :nf] = h[np.ix_(free_idx, free_idx)]
        kkt[:nf, nf:] = cf.T
        kkt[nf:, :nf] = cf
        rhs = np.concatenate([-hx[free_idx], resid])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            return p, np.zeros(0), act_idx, True
        p[free_idx] = sol[:nf]
        return p, sol[nf:], act_idx, False

    def _worst_multiplier(self, h, g, x, c, lam, vs, gs, tol):
        """Most violated working-set multiplier; ties break to the smallest
        index, boxes scanned before general rows. Returns (0, -1) if the
        current point is optimal."""
        grad = h @ x + g
        if lam.size:
            grad = grad + c.T @ lam
        mu = -grad
        worst = tol
        kind, idx = 0, -1
        for i in range(x.size):
            if vs[i] == AT_UPPER and mu[i] < -worst:
                worst = -mu[i]
                kind, idx = 1, i
            elif vs[i] == AT_LOWER and mu[i] > worst:
                worst = mu[i]
                kind, idx = 1, i
        for j in range(lam.size):
            if gs[j] == AT_UPPER and lam[j] < -worst:
                worst = -lam[j]
                kind, idx = 2, j
            elif gs[j] == AT_LOWER and lam[j] > worst:
                worst = lam[j]
                kind, idx = 2, j
        return kind, idx

    def _ratio_test(self, x, p, lb, ub, c, cl, cu, vs, gs):
        """Largest feasible step along p; ties break to the smallest index."""
        alpha = 1.0
        bkind, bidx, bside = 0, -1, 0
        for i in range(x.size):
            if vs[i] != FREE:
                continue
            pi = p[i]
            if pi > RATIO_TOL:
                a = (ub[i] - x[i]) / pi
                side = AT_UPPER
            elif pi < -RATIO_TOL:
                a = (lb[i] - x[i]) / pi
                side = AT_LOWER
            else:
                continue
            if a < alpha:
                alpha = a
                bkind, bidx, bside = 1, i, side
        for j in range(cl.size):
            if gs[j] != FREE:
                continue
            cp = float(c[j] @ p)
            if cp > RATIO_TOL:
                a = (cu[j] - float(c[j] @ x)) / cp
                side = AT_UPPER
            elif cp < -RATIO_TOL:
                a = (cl[j] - float(c[j] @ x)) / cp
                side = AT_LOWER
            else:
                continue
            if a < alpha:
                alpha = a
                bkind, bidx, bside = 2, j, side
        return max(alpha, 0.0), bkind, bidx, bside

    def _phase1(self):
        """Minimize constraint violation through per-row slacks.

        Feasible start by construction: s_j = C_j x - clip(C_j x). A tiny
        quadratic pull toward a reference point keeps the subproblem
        strictly convex in every variable, but also leaves a residual slack
        of order eps times the distance travelled, so the pull is recentered
        at the current iterate and the solve repeated until the residual
        either passes the tolerance or stops shrinking. A stalled residual
        is the infeasibility certificate, stored in `infeasibility`.
        """
        n, m = self.n, self.m
        aux = self._aux
        x = self.xb[:n]
        c = self.Cb[:m, :n]
        cl = self.clb[:m]
        cu = self.cub[:m]
        nn = n + m
        aux.refresh(nn, m)
        aux.Hb[:nn, :nn] = 0.0
        d = np.einsum("ii->i", aux.Hb[:nn, :nn])
        d[:n] = PHASE1_EPS
        d[n:] = 1.0
        aux.gb[:n] = -PHASE1_EPS * x
        aux.gb[n:nn] = 0.0
        aux.lbb[:n] = self.lbb[:n]
        aux.ubb[:n] = self.ubb[:n]
        aux.lbb[n:nn] = -np.inf
        aux.ubb[n:nn] = np.inf
        aux.Cb[:m, :n] = c
        aux.Cb[:m, n:nn] = -np.eye(m)
        aux.clb[:m] = cl
        aux.cub[:m] = cu
        r = c @ x
        rc = np.clip(r, cl, cu)
        aux.xb[:n] = x
        aux.xb[n:nn] = r - rc
        aux.var_status[:nn] = FREE
        aux.gen_status[:m] = FREE
        aux.gen_status[:m][r < cl] = AT_LOWER
        aux.gen_status[:m][r > cu] = AT_UPPER
        scale = 1.0 + np.abs(rc).max(initial=0.0)
        s = aux.xb[n:nn]
        st = QP_SOLVED
        prev = np.inf
        for _ in range(8):
            st = aux.solve(warm=True)
            self.infeasibility = float(np.abs(s).max(initial=0.0))
            if st != QP_SOLVED or self.infeasibility <= PHASE1_TOL * scale:
                break
            if self.infeasibility > 0.5 * prev:
                break  # stalled: genuinely infeasible
            prev = self.infeasibility
            aux.gb[:n] = -PHASE1_EPS * aux.xb[:n]
        if st != QP_SOLVED or self.infeasibility > PHASE1_TOL * scale:
            return False
        x[:] = aux.xb[:n]
        np.clip(x, self.lbb[:n], self.ubb[:n], out=x)
        vs = self.var_status[:n]
        gs = self.gen_status[:m]
        vs[:] = FREE
        vs[x <= self.lbb[:n]] = AT_LOWER
        vs[(x >= self.ubb[:n]) & (vs == FREE)] = AT_UPPER
        r = c @ x
        scale = 1.0 + np.abs(rc).max(initial=0.0)
        gs[:] = FREE
        gs[np.abs(r - cl) <= PHASE1_TOL * scale] = AT_LOWER
        gs[(np.abs(r - cu) <= PHASE1_TOL * scale) & (gs == FREE)] = AT_UPPER
        return True

    def _store_multipliers(self, h, g, c, lam):
        n, m = self.n, self.m
        x = self.xb[:n]
        grad = h @ x + g
        if m:
            grad = grad + c.T @ lam
        mu = np.where(self.var_status[:n] != FREE, -grad, 0.0)
        self.mub[:n] = mu
        self.lamb[:m] = lam
        self.kkt_residual = float(np.abs(grad + mu).max(initial=0.0))


# ---------------------------------------------------------------------------
# RTI workspace: linearize, condense, solve, shift
# ---------------------------------------------------------------------------

class RtiCore:
    """Multiple-shooting Gauss-Newton RTI workspace over control moves.

    Variables of the condensed QP are the stacked control corrections
    (4N, plus one soft-constraint slack when finite state bounds are
    configured). The linearized dynamics eliminate the state corrections:

        dx_{k+1} = A_k dx_k + B_k du_k + d_k

    giving dx_k = E_k dx_0 + Gamma_k du + c_k with dx_0 left symbolic, so
    `prepare` (integrate, linearize, condense) runs before the measurement
    and `feedback` only adds the G_x0 dx_0 gradient term, finalizes bounds,
    and solves the QP warm-started from the previous active set.

    Stage state costs apply at nodes 1..N (weight w_state), the terminal
    weight w_terminal is added at node N, and control costs apply at nodes
    0..N-1 — the right-endpoint quadrature of the continuous tracking cost.
    """

    def __init__(self, n_horizon, dt, substeps, params, w_state, w_control,
                 w_terminal, u_min, u_max, x_min, x_max, soft_penalty,
                 levenberg):
        n = int(n_horizon)
        if n < 1:
            raise ValueError("n_horizon must be >= 1")
        self.N = n
        self.dt = float(dt)
        self.substeps = int(substeps)
        self.params = np.array(params, dtype=float)
        self.w_state = np.array(w_state, dtype=float)
        self.w_control = np.array(w_control, dtype=float)
        self.w_terminal = np.array(w_terminal, dtype=float)
        self.u_min = np.array(u_min, dtype=float)
        self.u_max = np.array(u_max, dtype=float)
        self.x_min = np.array(x_min, dtype=float)
        self.x_max = np.array(x_max, dtype=float)
        self.soft_penalty = float(soft_penalty)
        self.levenberg = float(levenberg)

        # soft state-bound rows: node-major, lower rows before upper rows
        lo_states = np.flatnonzero(np.isfinite(self.x_min))
        up_states = np.flatnonzero(np.isfinite(self.x_max))
        rows = []
        for k in range(1, n + 1):
            for s in lo_states:
                rows.append((k, int(s), AT_LOWER))
            for s in up_states:
                rows.append((k, int(s), AT_UPPER))
        self.m_gen = len(rows)
        self.rows_per_node = len(lo_states) + len(up_states)
        self.soft_node = np.array([r[0] for r in rows], dtype=np.int32)
        self.soft_state = np.array([r[1] for r in rows], dtype=np.int32)
        self.soft_side = np.array([r[2] for r in rows], dtype=np.int8)

        self.nv = 4 * n + (1 if self.m_gen else 0)
        self.qp = DenseQp(self.nv, self.m_gen)

        self.states = np.zeros((n + 1, NX))
        self.controls = np.zeros((n, NU))
        self.x_ref = np.zeros((n + 1, NX))
        self.u_ref = np.zeros((n, NU))
        self.x_meas = np.zeros(NX)
        self.u_cmd = np.zeros(NU)

        self.A = np.zeros((n, NX, NX))
        self.B = np.zeros((n, NX, NU))
        self.d = np.zeros((n, NX))
        self.Gamma = np.zeros((n + 1, NX, 4 * n))
        self.G_x0 = np.zeros((4 * n, NX))
        self.g_const = np.zeros(self.nv)
        self._E = np.zeros((NX, NX))
        self._c = np.zeros(NX)
        self._soft_erow = np.zeros((self.m_gen, NX))
        self._soft_base = np.zeros(self.m_gen)
        self._dx = np.zeros(NX)

        self.qp_iterations = 0
        self._prepared = False

    # -- guess management -------------------------------------------------

    def reset(self, x0, u0):
        """Set every state node to x0 and every control node to u0."""
        self.states[:] = np.asarray(x0, dtype=float)
        self.controls[:] = np.asarray(u0, dtype=float)
        self.qp.var_status[:] = FREE
        self.qp.gen_status[:] = FREE
        self.qp.xb[:] = 0.0
        self._prepared = False

    def set_reference(self, x_ref, u_ref):
        self.x_ref[:] = x_ref
        self.u_ref[:] = u_ref

    # -- RTI phases -------------------------------------------------------

    def prepare(self):
        """Integrate, linearize, and condense along the current guess.

        Returns 0 on success, 1 when a non-finite linearization entry was
        produced (the caller resets the guess).
        """
        n = self.N
        nv = self.nv
        h = self.qp.Hb
        h[:nv, :nv] = 0.0
        self.g_const[:] = 0.0
        self.G_x0[:] = 0.0
        e = self._E
        e[:] = np.eye(NX)
        c = self._c
        c[:] = 0.0
        gamma = self.Gamma
        gamma[0][:] = 0.0
        row = 0
        for k in range(n):
            xn, ak, bk = rk4_step_sens(
                self.states[k], self.controls[k], self.params, self.dt,
                self.substeps,
            )
            self.A[k] = ak
            self.B[k] = bk
            self.d[k] = xn - self.states[k + 1]
            nxt = gamma[k + 1]
            if k:
                nxt[:, : 4 * k] = ak @ gamma[k][:, : 4 * k]
            nxt[:, 4 * k: 4 * k + 4] = bk
            nxt[:, 4 * k + 4:] = 0.0
            e[:] = ak @ e
            c[:] = ak @ c + self.d[k]
            node = k + 1
            w = self.w_state if node < n else self.w_state + self.w_terminal
            gk = nxt[:, : 4 * node]
            wg = w[:, None] * gk
            h[: 4 * node, : 4 * node] += gk.T @ wg
            resid = self.states[node] - self.x_ref[node] + c
            self.g_const[: 4 * node] += wg.T @ resid
            self.G_x0[: 4 * node] += wg.T @ e
            while row < self.m_gen and self.soft_node[row] == node:
                s = self.soft_state[row]
                self.qp.Cb[row, : 4 * node] = nxt[s, : 4 * node]
                self.qp.Cb[row, 4 * node:] = 0.0
                self.qp.Cb[row, 4 * n] = 1.0 if self.soft_side[row] == AT_LOWER else -1.0
                self._soft_erow[row] = e[s]
                self._soft_base[row] = self.states[node][s] + c[s]
                row += 1
        for k in range(n):
            i = 4 * k
            idx = np.arange(i, i + 4)
            h[idx, idx] += self.w_control
            self.g_const[i: i + 4] += self.w_control * (
                self.controls[k] - self.u_ref[k]
            )
        if self.m_gen:
            h[4 * n, 4 * n] += self.soft_penalty
        diag = np.einsum("ii->i", h[:nv, :nv])
        diag += self.levenberg
        # mirror the upper triangle so H is symmetric exactly
        upper = np.triu(h[:nv, :nv])
        h[:nv, :nv] = upper + upper.T - np.diag(np.diag(upper))
        if not (
            np.isfinite(self.A).all()
            and np.isfinite(self.B).all()
            and np.isfinite(self.d).all()
        ):
            self._prepared = False
            return 1
        self.qp.refresh(nv, self.m_gen)
        self._prepared = True
        return 0

    def feedback(self):
        """Plug in the measured state (from `x_meas`), solve, update guess.

        Returns the QP status; on success `u_cmd` holds the clipped first
        control and the trajectory guess has been updated by the linearized
        propagation. On failure the guess is left untouched.
        """
        if not self._prepared:
            raise RuntimeError("feedback called without a fresh prepare")
        n = self.N
        nv = self.nv
        qp = self.qp
        dx0 = self._dx
        np.subtract(self.x_meas, self.states[0], out=dx0)
        qp.gb[:nv] = self.g_const
        qp.gb[: 4 * n] += self.G_x0 @ dx0
        qp.lbb[: 4 * n] = (self.u_min[None, :] - self.controls).ravel()
        qp.ubb[: 4 * n] = (self.u_max[None, :] - self.controls).ravel()
        if self.m_gen:
            qp.lbb[4 * n] = 0.0
            qp.ubb[4 * n] = np.inf
            shift = self._soft_base + self._soft_erow @ dx0
            lo = self.soft_side == AT_LOWER
            qp.clb[: self.m_gen] = np.where(
                lo, self.x_min[self.soft_state] - shift, -np.inf
            )
            qp.cub[: self.m_gen] = np.where(
                lo, np.inf, self.x_max[self.soft_state] - shift
            )
        status = qp.solve(warm=True)
        self.qp_iterations = qp.iterations
        if status != QP_SOLVED:
            return status
        du = qp.xb[: 4 * n].reshape(n, NU)
        self.controls += du
        dx = dx0.copy()
        self.states[0] += dx
        for k in range(n):
            dx = self.A[k] @ dx + self.B[k] @ du[k] + self.d[k]
            self.states[k + 1] += dx
        np.clip(self.controls[0], self.u_min, self.u_max, out=self.u_cmd)
        self._prepared = False
        return QP_SOLVED

    def shift(self):
        """Advance the guess one node; duplicate and re-integrate the tail."""
        n = self.N
        self.states[:-1] = self.states[1:]
        self.controls[:-1] = self.controls[1:]
        self.states[n] = rk4_step(
            self.states[n - 1], self.controls[n - 1], self.params, self.dt,
            self.substeps,
        )
        vs = self.qp.var_status
        vs[: 4 * (n - 1)] = vs[4: 4 * n]
        rpn = self.rows_per_node
        if self.m_gen and n > 1:
            gs = self.qp.gen_status
            gs[: self.m_gen - rpn] = gs[rpn: self.m_gen]
        self._prepared = False

    def workspace_bytes(self):
        """Bytes held by the fixed-capacity numeric buffers."""
        total = sum(
            arr.nbytes
            for arr in (
                self.states, self.controls, self.x_ref, self.u_ref,
                self.x_meas, self.u_cmd, self.A, self.B, self.d, self.Gamma,
                self.G_x0, self.g_const, self._E, self._c, self._soft_erow,
                self._soft_base, self._dx,
            )
        )
        return total + self.qp.workspace_bytes()


def run_cycles(core, cycles):
    """Run prepare/feedback/shift repeatedly against `core.x_meas`.

    Returns the worst QP status seen. The compiled twin of this entry point
    is the zero-allocation benchmark surface; here it simply mirrors the
    call sequence.
    """
    worst = 0
    for _ in range(cycles):
        if core.prepare() != 0:
            return -1
        st = core.feedback()
        if st > worst:
            worst = st
        core.shift()
    return worst
