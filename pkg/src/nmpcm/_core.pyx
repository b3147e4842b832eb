# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled core: quadrotor kernels, dense active-set QP, RTI workspace.

Twin of ``nmpcm._purepy`` with the same interface and the same algorithmic
decisions (tolerances, tie-breaking, status codes). Differences are purely
mechanical: fixed-capacity C loops instead of numpy temporaries, and an
incrementally updated Cholesky factorization of the free-variable block
(column append by forward substitution, deletion by a positive rank-one
update of the trailing block, full refactorization every REFACTOR_EVERY
working-set changes to bound drift). All hot paths run without the GIL and
allocate nothing after construction.
"""

import numpy as np

from libc.math cimport cos, fabs, isfinite, sin, sqrt
from libc.string cimport memcpy, memset

BACKEND_NAME = "compiled"

NX = 12
NU = 4

FREE = 0
AT_LOWER = -1
AT_UPPER = 1

QP_SOLVED = 0
QP_MAX_ITER = 1
QP_INFEASIBLE = 2

FEAS_TOL = 1e-9
STEP_TOL = 1e-11
MULT_TOL = 1e-9
RATIO_TOL = 1e-12
PHASE1_EPS = 1e-6
PHASE1_TOL = 1e-7
REFACTOR_EVERY = 50

cdef double INF = float("inf")

cdef enum:
    CNX = 12
    CNU = 4
    C_SOLVED = 0
    C_MAX_ITER = 1
    C_INFEASIBLE = 2

cdef double C_FEAS_TOL = 1e-9
cdef double C_STEP_TOL = 1e-11
cdef double C_MULT_TOL = 1e-9
cdef double C_RATIO_TOL = 1e-12
cdef double C_PHASE1_EPS = 1e-6
cdef double C_PHASE1_TOL = 1e-7
cdef int C_REFACTOR_EVERY = 50

cdef signed char C_FREE = 0
cdef signed char C_AT_LOWER = -1
cdef signed char C_AT_UPPER = 1


# ---------------------------------------------------------------------------
# Quadrotor dynamics kernels
# ---------------------------------------------------------------------------

cdef void c_dyn(const double* x, const double* u, const double* p,
                double* out) noexcept nogil:
    cdef double m = p[0]
    cdef double ixx = p[2]
    cdef double iyy = p[3]
    cdef double izz = p[4]
    cdef double grav = p[5]
    cdef double sph = sin(x[3])
    cdef double cph = cos(x[3])
    cdef double sth = sin(x[4])
    cdef double cth = cos(x[4])
    cdef double sps = sin(x[5])
    cdef double cps = cos(x[5])
    cdef int i
    for i in range(6):
        out[i] = x[6 + i]
    out[6] = (sps * sph + cps * sth * cph) * u[0] / m
    out[7] = (sps * sth * cph - cps * sph) * u[0] / m
    out[8] = (cth * cph * u[0] - m * grav) / m
    out[9] = (x[10] * x[11] * (iyy - izz) + u[1]) / ixx
    out[10] = (x[11] * x[9] * (izz - ixx) + u[2]) / iyy
    out[11] = (x[9] * x[10] * (ixx - iyy) + u[3]) / izz


cdef void c_jac(const double* x, const double* u, const double* p,
                double* jx, double* ju) noexcept nogil:
    # jx is 12x12 row-major, ju is 12x4 row-major; both fully overwritten
    cdef double m = p[0]
    cdef double ixx = p[2]
    cdef double iyy = p[3]
    cdef double izz = p[4]
    cdef double sph = sin(x[3])
    cdef double cph = cos(x[3])
    cdef double sth = sin(x[4])
    cdef double cth = cos(x[4])
    cdef double sps = sin(x[5])
    cdef double cps = cos(x[5])
    cdef double u1m = u[0] / m
    cdef int i
    memset(jx, 0, CNX * CNX * sizeof(double))
    memset(ju, 0, CNX * CNU * sizeof(double))
    for i in range(6):
        jx[i * CNX + 6 + i] = 1.0
    jx[6 * CNX + 3] = (sps * cph - cps * sth * sph) * u1m
    jx[6 * CNX + 4] = cps * cth * cph * u1m
    jx[6 * CNX + 5] = (cps * sph - sps * sth * cph) * u1m
    jx[7 * CNX + 3] = (-sps * sth * sph - cps * cph) * u1m
    jx[7 * CNX + 4] = sps * cth * cph * u1m
    jx[7 * CNX + 5] = (cps * sth * cph + sps * sph) * u1m
    jx[8 * CNX + 3] = -cth * sph * u1m
    jx[8 * CNX + 4] = -sth * cph * u1m
    jx[9 * CNX + 10] = x[11] * (iyy - izz) / ixx
    jx[9 * CNX + 11] = x[10] * (iyy - izz) / ixx
    jx[10 * CNX + 9] = x[11] * (izz - ixx) / iyy
    jx[10 * CNX + 11] = x[9] * (izz - ixx) / iyy
    jx[11 * CNX + 9] = x[10] * (ixx - iyy) / izz
    jx[11 * CNX + 10] = x[9] * (ixx - iyy) / izz
    ju[6 * CNU + 0] = (sps * sph + cps * sth * cph) / m
    ju[7 * CNU + 0] = (sps * sth * cph - cps * sph) / m
    ju[8 * CNU + 0] = cth * cph / m
    ju[9 * CNU + 1] = 1.0 / ixx
    ju[10 * CNU + 2] = 1.0 / iyy
    ju[11 * CNU + 3] = 1.0 / izz


cdef void c_rk4(double* y, const double* u, const double* p, double dt,
                int substeps) noexcept nogil:
    cdef double h = dt / substeps
    cdef double k1[12]
    cdef double k2[12]
    cdef double k3[12]
    cdef double k4[12]
    cdef double yt[12]
    cdef int s, i
    for s in range(substeps):
        c_dyn(y, u, p, k1)
        for i in range(CNX):
            yt[i] = y[i] + 0.5 * h * k1[i]
        c_dyn(yt, u, p, k2)
        for i in range(CNX):
            yt[i] = y[i] + 0.5 * h * k2[i]
        c_dyn(yt, u, p, k3)
        for i in range(CNX):
            yt[i] = y[i] + h * k3[i]
        c_dyn(yt, u, p, k4)
        for i in range(CNX):
            y[i] = y[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


cdef void mat12_mul(const double* a, const double* b, double* out) noexcept nogil:
    # out = a @ b for 12x12 row-major; out must not alias a or b
    cdef int i, j, k
    cdef double s
    for i in range(CNX):
        for j in range(CNX):
            s = 0.0
            for k in range(CNX):
                s += a[i * CNX + k] * b[k * CNX + j]
            out[i * CNX + j] = s


cdef void c_rk4_sens(double* y, const double* u, const double* p, double dt,
                     int substeps, double* a, double* b) noexcept nogil:
    # a: 12x12, b: 12x4, overwritten with the Jacobians of the discrete map
    cdef double h = dt / substeps
    cdef double k1[12]
    cdef double k2[12]
    cdef double k3[12]
    cdef double k4[12]
    cdef double y2[12]
    cdef double y3[12]
    cdef double y4[12]
    cdef double j1x[144]
    cdef double j2x[144]
    cdef double j3x[144]
    cdef double j4x[144]
    cdef double j1u[48]
    cdef double j2u[48]
    cdef double j3u[48]
    cdef double j4u[48]
    cdef double d2[144]
    cdef double d3[144]
    cdef double d4[144]
    cdef double e2[48]
    cdef double e3[48]
    cdef double e4[48]
    cdef double a_sub[144]
    cdef double b_sub[48]
    cdef double tmm[144]
    cdef double tmb[48]
    cdef int s, i, j, k
    cdef double acc
    for i in range(CNX):
        for j in range(CNX):
            a[i * CNX + j] = 1.0 if i == j else 0.0
    memset(b, 0, CNX * CNU * sizeof(double))
    for s in range(substeps):
        c_dyn(y, u, p, k1)
        c_jac(y, u, p, j1x, j1u)
        for i in range(CNX):
            y2[i] = y[i] + 0.5 * h * k1[i]
        c_dyn(y2, u, p, k2)
        c_jac(y2, u, p, j2x, j2u)
        for i in range(CNX):
            y3[i] = y[i] + 0.5 * h * k2[i]
        c_dyn(y3, u, p, k3)
        c_jac(y3, u, p, j3x, j3u)
        for i in range(CNX):
            y4[i] = y[i] + h * k3[i]
        c_dyn(y4, u, p, k4)
        c_jac(y4, u, p, j4x, j4u)

        # d1 = j1x; d_i = j_ix (I + h c_i d_{i-1})
        for i in range(144):
            tmm[i] = 0.5 * h * j1x[i]
        for i in range(CNX):
            tmm[i * CNX + i] += 1.0
        mat12_mul(j2x, tmm, d2)
        for i in range(144):
            tmm[i] = 0.5 * h * d2[i]
        for i in range(CNX):
            tmm[i * CNX + i] += 1.0
        mat12_mul(j3x, tmm, d3)
        for i in range(144):
            tmm[i] = h * d3[i]
        for i in range(CNX):
            tmm[i * CNX + i] += 1.0
        mat12_mul(j4x, tmm, d4)
        for i in range(144):
            a_sub[i] = (h / 6.0) * (j1x[i] + 2.0 * d2[i] + 2.0 * d3[i] + d4[i])
        for i in range(CNX):
            a_sub[i * CNX + i] += 1.0

        # e1 = j1u; e_i = j_ix (h c_i e_{i-1}) + j_iu
        for i in range(CNX):
            for j in range(CNU):
                acc = 0.0
                for k in range(CNX):
                    acc += j2x[i * CNX + k] * (0.5 * h * j1u[k * CNU + j])
                e2[i * CNU + j] = acc + j2u[i * CNU + j]
        for i in range(CNX):
            for j in range(CNU):
                acc = 0.0
                for k in range(CNX):
                    acc += j3x[i * CNX + k] * (0.5 * h * e2[k * CNU + j])
                e3[i * CNU + j] = acc + j3u[i * CNU + j]
        for i in range(CNX):
            for j in range(CNU):
                acc = 0.0
                for k in range(CNX):
                    acc += j4x[i * CNX + k] * (h * e3[k * CNU + j])
                e4[i * CNU + j] = acc + j4u[i * CNU + j]
        for i in range(48):
            b_sub[i] = (h / 6.0) * (j1u[i] + 2.0 * e2[i] + 2.0 * e3[i] + e4[i])

        for i in range(CNX):
            y[i] = y[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        # a <- a_sub @ a ; b <- a_sub @ b + b_sub
        mat12_mul(a_sub, a, tmm)
        memcpy(a, tmm, 144 * sizeof(double))
        for i in range(CNX):
            for j in range(CNU):
                acc = b_sub[i * CNU + j]
                for k in range(CNX):
                    acc += a_sub[i * CNX + k] * b[k * CNU + j]
                tmb[i * CNU + j] = acc
        memcpy(b, tmb, 48 * sizeof(double))


# -- python-facing wrappers --------------------------------------------------

def dynamics(x, u, p, out=None):
    """Continuous-time state derivative; see the fallback for the layout."""
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    if out is None:
        out = np.empty(NX)
    cdef double[::1] ov = out
    c_dyn(&xv[0], &uv[0], &pv[0], &ov[0])
    return out


def dynamics_jacobians(x, u, p):
    """Analytic Jacobians (d xdot / d x, d xdot / d u)."""
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    jx = np.empty((NX, NX))
    ju = np.empty((NX, NU))
    cdef double[:, ::1] jxv = jx
    cdef double[:, ::1] juv = ju
    c_jac(&xv[0], &uv[0], &pv[0], &jxv[0, 0], &juv[0, 0])
    return jx, ju


def rk4_step(x, u, p, dt, substeps=1):
    """Classical RK4 over `substeps` sub-intervals with zero-order-hold u."""
    cdef double[::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    y = np.array(x, dtype=np.float64)
    cdef double[::1] yv = y
    c_rk4(&yv[0], &uv[0], &pv[0], dt, substeps)
    return y


def rk4_step_sens(x, u, p, dt, substeps=1):
    """RK4 step plus exact Jacobians of the discrete map."""
    cdef double[::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    y = np.array(x, dtype=np.float64)
    a = np.empty((NX, NX))
    b = np.empty((NX, NU))
    cdef double[::1] yv = y
    cdef double[:, ::1] av = a
    cdef double[:, ::1] bv = b
    c_rk4_sens(&yv[0], &uv[0], &pv[0], dt, substeps, &av[0, 0], &bv[0, 0])
    return y, a, b


# ---------------------------------------------------------------------------
# Dense primal active-set QP
# ---------------------------------------------------------------------------

cdef class DenseQp:
    """Primal active-set solver; see the fallback's docstring for semantics.

    The free-variable block of H carries an incrementally maintained Cholesky
    factor; active general rows are handled through a Schur complement built
    fresh per equality-constrained subproblem.
    """

    cdef readonly int cap_n, cap_m
    cdef public int n, m, iterations
    cdef public double kkt_residual, infeasibility
    cdef readonly object Hb, gb, lbb, ubb, Cb, clb, cub, xb
    cdef readonly object var_status, gen_status, mub, lamb
    cdef double[:, ::1] _H, _C, _L, _V, _S, _LS
    cdef double[::1] _g, _lb, _ub, _cl, _cu, _x, _mu, _lam
    cdef double[::1] _hx, _p, _rhs, _q, _wv, _resid, _r2, _lamfull
    cdef signed char[::1] _vs, _gs
    cdef int[::1] _fl, _pos, _act
    cdef int _nf, _updates
    cdef bint _restoration
    cdef DenseQp _aux

    def __init__(self, cap_n, cap_m, _restoration=False):
        if cap_n < 1 or cap_m < 0:
            raise ValueError("capacities must satisfy cap_n >= 1, cap_m >= 0")
        self.cap_n = int(cap_n)
        self.cap_m = int(cap_m)
        self.Hb = np.zeros((self.cap_n, self.cap_n))
        self.gb = np.zeros(self.cap_n)
        self.lbb = np.full(self.cap_n, -np.inf)
        self.ubb = np.full(self.cap_n, np.inf)
        self.Cb = np.zeros((self.cap_m, self.cap_n))
        self.clb = np.full(self.cap_m, -np.inf)
        self.cub = np.full(self.cap_m, np.inf)
        self.xb = np.zeros(self.cap_n)
        self.var_status = np.zeros(self.cap_n, dtype=np.int8)
        self.gen_status = np.zeros(self.cap_m, dtype=np.int8)
        self.mub = np.zeros(self.cap_n)
        self.lamb = np.zeros(self.cap_m)
        self._H = self.Hb
        self._g = self.gb
        self._lb = self.lbb
        self._ub = self.ubb
        self._C = self.Cb if self.cap_m else np.zeros((1, self.cap_n))
        self._cl = self.clb if self.cap_m else np.zeros(1)
        self._cu = self.cub if self.cap_m else np.zeros(1)
        self._x = self.xb
        self._vs = self.var_status
        self._gs = self.gen_status if self.cap_m else np.zeros(1, dtype=np.int8)
        self._mu = self.mub
        self._lam = self.lamb if self.cap_m else np.zeros(1)
        cdef int mm = self.cap_m if self.cap_m else 1
        self._L = np.zeros((self.cap_n, self.cap_n))
        self._V = np.zeros((mm, self.cap_n))
        self._S = np.zeros((mm, mm))
        self._LS = np.zeros((mm, mm))
        self._hx = np.zeros(self.cap_n)
        self._p = np.zeros(self.cap_n)
        self._rhs = np.zeros(self.cap_n)
        self._q = np.zeros(self.cap_n)
        self._wv = np.zeros(self.cap_n)
        self._resid = np.zeros(mm)
        self._r2 = np.zeros(mm)
        self._lamfull = np.zeros(mm)
        self._fl = np.zeros(self.cap_n, dtype=np.intc)
        self._pos = np.full(self.cap_n, -1, dtype=np.intc)
        self._act = np.zeros(mm, dtype=np.intc)
        self._nf = 0
        self._updates = 0
        self.n = 0
        self.m = 0
        self.iterations = 0
        self.kkt_residual = np.inf
        self.infeasibility = 0.0
        self._restoration = bool(_restoration)
        if self.cap_m > 0 and not self._restoration:
            self._aux = DenseQp(self.cap_n + self.cap_m, self.cap_m,
                                _restoration=True)
        else:
            self._aux = None

    # -- data ingestion ---------------------------------------------------

    def refresh(self, n, m):
        """Declare problem dimensions after buffers were filled in place."""
        if not (1 <= n <= self.cap_n) or not (0 <= m <= self.cap_m):
            raise ValueError("problem size exceeds solver capacity")
        self.c_refresh(n, m)

    cdef void c_refresh(self, int n, int m) noexcept nogil:
        cdef int i
        if n != self.n or m != self.m:
            for i in range(self.cap_n):
                self._vs[i] = C_FREE
                self._x[i] = 0.0
            for i in range(self.cap_m):
                self._gs[i] = C_FREE
        self.n = n
        self.m = m

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
        mm = self.cap_m if self.cap_m else 1
        total += (
            self._L.shape[0] * self._L.shape[1]
            + self._V.shape[0] * self._V.shape[1]
            + self._S.shape[0] * self._S.shape[1]
            + self._LS.shape[0] * self._LS.shape[1]
        ) * sizeof(double)
        total += 5 * self.cap_n * sizeof(double) + 3 * mm * sizeof(double)
        total += 2 * self.cap_n * sizeof(int) + mm * sizeof(int)
        if self._aux is not None:
            total += self._aux.workspace_bytes()
        return total

    # -- solve ------------------------------------------------------------

    def solve(self, warm=True):
        if self.n == 0:
            raise RuntimeError("solve called before setup/refresh")
        cdef bint w = bool(warm)
        cdef int st
        with nogil:
            st = self.c_solve(w)
        return st

    def solution(self):
        """Copy of (x, mu, lam) at the current sizes."""
        n, m = self.n, self.m
        return self.xb[:n].copy(), self.mub[:n].copy(), self.lamb[:m].copy()

    cdef int c_solve(self, bint warm) noexcept nogil:
        cdef int n = self.n
        cdef int m = self.m
        cdef int i, j, kind, idx, bkind, bidx, na, drop, max_changes, passes
        cdef signed char bside
        cdef double step, alpha, mult_tol, gmax, xmax, viol, r
        cdef bint singular, any_inact_viol, force_check, check_now

        self.iterations = 0
        self.infeasibility = 0.0

        if not warm:
            for i in range(n):
                self._vs[i] = C_FREE
                self._x[i] = 0.0
            for j in range(m):
                self._gs[j] = C_FREE
        for i in range(n):
            if self._x[i] < self._lb[i]:
                self._x[i] = self._lb[i]
            elif self._x[i] > self._ub[i]:
                self._x[i] = self._ub[i]
            if self._vs[i] == C_AT_LOWER:
                self._x[i] = self._lb[i]
            elif self._vs[i] == C_AT_UPPER:
                self._x[i] = self._ub[i]
        if not warm:
            for i in range(n):
                if self._x[i] <= self._lb[i]:
                    self._vs[i] = C_AT_LOWER
                elif self._x[i] >= self._ub[i]:
                    self._vs[i] = C_AT_UPPER

        if m and not self._restoration:
            any_inact_viol = False
            for j in range(m):
                if self._gs[j] != C_FREE:
                    continue
                r = 0.0
                for i in range(n):
                    r += self._C[j, i] * self._x[i]
                viol = self._cl[j] - r
                if r - self._cu[j] > viol:
                    viol = r - self._cu[j]
                if viol > 10.0 * C_FEAS_TOL:
                    any_inact_viol = True
                    break
            if any_inact_viol:
                if not self._phase1():
                    for j in range(m):
                        self._lamfull[j] = 0.0
                    self._store_multipliers()
                    return C_INFEASIBLE

        max_changes = 20 * (n + m)
        gmax = 0.0
        for i in range(n):
            if fabs(self._g[i]) > gmax:
                gmax = fabs(self._g[i])
        mult_tol = C_MULT_TOL * (1.0 + gmax)
        cdef int status = C_MAX_ITER
        for j in range(m):
            self._lamfull[j] = 0.0
        self._refactor()

        # `iterations` counts working-set changes only, so unblocked full
        # steps pass through uncounted; `passes` caps every trip through the
        # loop as a termination backstop.
        passes = 0
        force_check = False
        while True:
            passes += 1
            if passes > 2 * max_changes + 4:
                break
            singular = self._eqp(&na)
            check_now = force_check
            force_check = False
            if singular:
                if na == 0:
                    break
                drop = self._act[na - 1]
                self._gs[drop] = C_FREE
                self.iterations += 1
                if self.iterations > max_changes:
                    break
                continue
            for j in range(m):
                self._lamfull[j] = 0.0
            for j in range(na):
                self._lamfull[self._act[j]] = self._r2[j]
            step = 0.0
            for i in range(n):
                if fabs(self._p[i]) > step:
                    step = fabs(self._p[i])
            xmax = 0.0
            for i in range(n):
                if fabs(self._x[i]) > xmax:
                    xmax = fabs(self._x[i])
            if check_now or step <= C_STEP_TOL * (1.0 + xmax):
                kind = self._worst_multiplier(mult_tol, &idx)
                if kind == 0:
                    status = C_SOLVED
                    break
                if kind == 1:
                    self._vs[idx] = C_FREE
                    if self._fact_append(idx):
                        self._refactor()
                else:
                    self._gs[idx] = C_FREE
                self.iterations += 1
                if self.iterations > max_changes:
                    break
                continue
            alpha = self._ratio_test(&bkind, &bidx, &bside)
            if alpha > 0.0:
                for i in range(n):
                    self._x[i] += alpha * self._p[i]
            if bkind == 0:
                # An unblocked full step lands on the optimum of the current
                # working set, so go straight to the multiplier test next
                # pass. Re-measuring the step there can leave rounding noise
                # just above STEP_TOL whose sign flips each pass, which would
                # otherwise ping-pong forever without changing the set.
                force_check = True
                continue
            if bkind == 1:
                self._x[bidx] = self._ub[bidx] if bside == C_AT_UPPER else self._lb[bidx]
                self._vs[bidx] = bside
                self._fact_delete(self._pos[bidx])
            else:
                self._gs[bidx] = bside
            self.iterations += 1
            if self.iterations > max_changes:
                break

        self._store_multipliers()
        return status

    # -- factorization maintenance ----------------------------------------

    cdef int _refactor(self) noexcept nogil:
        """Rebuild the free list (ascending) and chol(H_ff) from scratch."""
        cdef int n = self.n
        cdef int i, j, k, vi, vj
        cdef double s
        self._nf = 0
        for i in range(n):
            if self._vs[i] == C_FREE:
                self._fl[self._nf] = i
                self._pos[i] = self._nf
                self._nf += 1
            else:
                self._pos[i] = -1
        for i in range(self._nf):
            vi = self._fl[i]
            for j in range(i + 1):
                vj = self._fl[j]
                s = self._H[vi, vj]
                for k in range(j):
                    s -= self._L[i, k] * self._L[j, k]
                if i == j:
                    if s <= 0.0 or not isfinite(s):
                        return 1
                    self._L[i, i] = sqrt(s)
                else:
                    self._L[i, j] = s / self._L[j, j]
        self._updates = 0
        return 0

    cdef int _fact_append(self, int var) noexcept nogil:
        """Add a variable to the free list: new trailing Cholesky column."""
        cdef int nf = self._nf
        cdef int j, k
        cdef double s, diag
        for j in range(nf):
            s = self._H[self._fl[j], var]
            for k in range(j):
                s -= self._L[j, k] * self._wv[k]
            self._wv[j] = s / self._L[j, j]
        diag = self._H[var, var]
        for j in range(nf):
            diag -= self._wv[j] * self._wv[j]
        if diag <= 0.0 or not isfinite(diag):
            return 1
        for j in range(nf):
            self._L[nf, j] = self._wv[j]
        self._L[nf, nf] = sqrt(diag)
        self._fl[nf] = var
        self._pos[var] = nf
        self._nf = nf + 1
        self._updates += 1
        if self._updates >= C_REFACTOR_EVERY:
            return self._refactor()
        return 0

    cdef void _fact_delete(self, int k) noexcept nogil:
        """Remove free-list position k; positive rank-one trailing update."""
        cdef int nf = self._nf
        cdef int t = nf - 1 - k
        cdef int i, j
        cdef double a, b, r, c, s
        for i in range(t):
            self._wv[i] = self._L[k + 1 + i, k]
        self._pos[self._fl[k]] = -1
        for i in range(k + 1, nf):
            for j in range(k):
                self._L[i - 1, j] = self._L[i, j]
            for j in range(k + 1, i + 1):
                self._L[i - 1, j - 1] = self._L[i, j]
        for i in range(k, nf - 1):
            self._fl[i] = self._fl[i + 1]
            self._pos[self._fl[i]] = i
        self._nf = nf - 1
        for j in range(t):
            a = self._L[k + j, k + j]
            b = self._wv[j]
            r = sqrt(a * a + b * b)
            c = r / a
            s = b / a
            self._L[k + j, k + j] = r
            for i in range(j + 1, t):
                self._L[k + i, k + j] = (self._L[k + i, k + j] + s * self._wv[i]) / c
                self._wv[i] = c * self._wv[i] - s * self._L[k + i, k + j]
        self._updates += 1
        if self._updates >= C_REFACTOR_EVERY:
            self._refactor()

    cdef void _trisolve(self, double[::1] rhs, double[::1] out) noexcept nogil:
        """out = H_ff^-1 rhs in free-list order via the maintained factor."""
        cdef int nf = self._nf
        cdef int i, k
        cdef double s
        for i in range(nf):
            s = rhs[i]
            for k in range(i):
                s -= self._L[i, k] * out[k]
            out[i] = s / self._L[i, i]
        for i in range(nf - 1, -1, -1):
            s = out[i]
            for k in range(i + 1, nf):
                s -= self._L[k, i] * out[k]
            out[i] = s / self._L[i, i]

    # -- subproblem and line search ----------------------------------------

    cdef bint _eqp(self, int* na_out) noexcept nogil:
        """Equality-constrained step for the working set.

        Fills self._p (full-space step, zeros at fixed variables) and
        self._r2[:na] (multipliers of the active rows, ascending row order);
        returns True when the working set is singular.
        """
        cdef int n = self.n
        cdef int m = self.m
        cdef int nf = self._nf
        cdef int i, j, k, a, na, vi
        cdef double s, bound
        for i in range(n):
            s = self._g[i]
            for k in range(n):
                s += self._H[i, k] * self._x[k]
            self._hx[i] = s
        na = 0
        for j in range(m):
            if self._gs[j] != C_FREE:
                self._act[na] = j
                na += 1
        na_out[0] = na
        for i in range(n):
            self._p[i] = 0.0
        if nf == 0 and na == 0:
            return False
        if na > nf:
            return True
        for i in range(nf):
            self._rhs[i] = -self._hx[self._fl[i]]
        if na == 0:
            self._trisolve(self._rhs, self._q)
            for i in range(nf):
                self._p[self._fl[i]] = self._q[i]
            return False
        self._trisolve(self._rhs, self._q)
        for a in range(na):
            j = self._act[a]
            for i in range(nf):
                self._rhs[i] = self._C[j, self._fl[i]]
            self._trisolve(self._rhs, self._wv)
            for i in range(nf):
                self._V[a, i] = self._wv[i]
        for a in range(na):
            j = self._act[a]
            bound = self._cu[j] if self._gs[j] == C_AT_UPPER else self._cl[j]
            s = bound
            for i in range(n):
                s -= self._C[j, i] * self._x[i]
            self._resid[a] = s
        for a in range(na):
            j = self._act[a]
            for k in range(a + 1):
                s = 0.0
                for i in range(nf):
                    s += self._C[j, self._fl[i]] * self._V[k, i]
                self._S[a, k] = s
                self._S[k, a] = s
        for a in range(na):
            j = self._act[a]
            s = -self._resid[a]
            for i in range(nf):
                s += self._C[j, self._fl[i]] * self._q[i]
            self._r2[a] = s
        # chol of S, then two triangular solves for the row multipliers
        for a in range(na):
            for k in range(a + 1):
                s = self._S[a, k]
                for i in range(k):
                    s -= self._LS[a, i] * self._LS[k, i]
                if a == k:
                    if s <= 0.0 or not isfinite(s):
                        return True
                    self._LS[a, a] = sqrt(s)
                else:
                    self._LS[a, k] = s / self._LS[k, k]
        for a in range(na):
            s = self._r2[a]
            for k in range(a):
                s -= self._LS[a, k] * self._r2[k]
            self._r2[a] = s / self._LS[a, a]
        for a in range(na - 1, -1, -1):
            s = self._r2[a]
            for k in range(a + 1, na):
                s -= self._LS[k, a] * self._r2[k]
            self._r2[a] = s / self._LS[a, a]
        for i in range(nf):
            s = self._q[i]
            for a in range(na):
                s -= self._V[a, i] * self._r2[a]
            self._p[self._fl[i]] = s
        return False

    cdef int _worst_multiplier(self, double tol, int* idx_out) noexcept nogil:
        """Most violated working-set multiplier; 0 means optimal."""
        cdef int n = self.n
        cdef int m = self.m
        cdef int i, j, kind, idx
        cdef double worst, mu_i, grad
        worst = tol
        kind = 0
        idx = -1
        for i in range(n):
            grad = self._hx[i]
            for j in range(m):
                if self._lamfull[j] != 0.0:
                    grad += self._C[j, i] * self._lamfull[j]
            mu_i = -grad
            if self._vs[i] == C_AT_UPPER and mu_i < -worst:
                worst = -mu_i
                kind = 1
                idx = i
            elif self._vs[i] == C_AT_LOWER and mu_i > worst:
                worst = mu_i
                kind = 1
                idx = i
        for j in range(m):
            if self._gs[j] == C_AT_UPPER and self._lamfull[j] < -worst:
                worst = -self._lamfull[j]
                kind = 2
                idx = j
            elif self._gs[j] == C_AT_LOWER and self._lamfull[j] > worst:
                worst = self._lamfull[j]
                kind = 2
                idx = j
        idx_out[0] = idx
        return kind

    cdef double _ratio_test(self, int* bkind, int* bidx,
                            signed char* bside) noexcept nogil:
        """Largest feasible step along p; ties break to the smallest index."""
        cdef int n = self.n
        cdef int m = self.m
        cdef int i, j
        cdef double alpha = 1.0
        cdef double pi, a, cp, cx
        cdef signed char side
        bkind[0] = 0
        bidx[0] = -1
        bside[0] = 0
        for i in range(n):
            if self._vs[i] != C_FREE:
                continue
            pi = self._p[i]
            if pi > C_RATIO_TOL:
                a = (self._ub[i] - self._x[i]) / pi
                side = C_AT_UPPER
            elif pi < -C_RATIO_TOL:
                a = (self._lb[i] - self._x[i]) / pi
                side = C_AT_LOWER
            else:
                continue
            if a < alpha:
                alpha = a
                bkind[0] = 1
                bidx[0] = i
                bside[0] = side
        for j in range(m):
            if self._gs[j] != C_FREE:
                continue
            cp = 0.0
            for i in range(n):
                cp += self._C[j, i] * self._p[i]
            if cp > C_RATIO_TOL:
                cx = 0.0
                for i in range(n):
                    cx += self._C[j, i] * self._x[i]
                a = (self._cu[j] - cx) / cp
                side = C_AT_UPPER
            elif cp < -C_RATIO_TOL:
                cx = 0.0
                for i in range(n):
                    cx += self._C[j, i] * self._x[i]
                a = (self._cl[j] - cx) / cp
                side = C_AT_LOWER
            else:
                continue
            if a < alpha:
                alpha = a
                bkind[0] = 2
                bidx[0] = j
                bside[0] = side
        if alpha < 0.0:
            alpha = 0.0
        return alpha

    cdef bint _phase1(self) noexcept nogil:
        """Slack restoration; see the fallback for the recentering scheme."""
        cdef int n = self.n
        cdef int m = self.m
        cdef int nn = n + m
        cdef int i, j, it, st
        cdef double r, rc, scale, prev, infeas, v
        self._aux.c_refresh(nn, m)
        for i in range(nn):
            for j in range(nn):
                self._aux._H[i, j] = 0.0
        for i in range(n):
            self._aux._H[i, i] = C_PHASE1_EPS
            self._aux._g[i] = -C_PHASE1_EPS * self._x[i]
            self._aux._lb[i] = self._lb[i]
            self._aux._ub[i] = self._ub[i]
        for j in range(m):
            self._aux._H[n + j, n + j] = 1.0
            self._aux._g[n + j] = 0.0
            self._aux._lb[n + j] = -INF
            self._aux._ub[n + j] = INF
        for j in range(m):
            for i in range(n):
                self._aux._C[j, i] = self._C[j, i]
            for i in range(m):
                self._aux._C[j, n + i] = -1.0 if i == j else 0.0
            self._aux._cl[j] = self._cl[j]
            self._aux._cu[j] = self._cu[j]
        scale = 0.0
        for i in range(n):
            self._aux._x[i] = self._x[i]
            self._aux._vs[i] = C_FREE
        for j in range(m):
            self._aux._vs[n + j] = C_FREE
            r = 0.0
            for i in range(n):
                r += self._C[j, i] * self._x[i]
            rc = r
            if rc < self._cl[j]:
                rc = self._cl[j]
            elif rc > self._cu[j]:
                rc = self._cu[j]
            self._aux._x[n + j] = r - rc
            if r < self._cl[j]:
                self._aux._gs[j] = C_AT_LOWER
            elif r > self._cu[j]:
                self._aux._gs[j] = C_AT_UPPER
            else:
                self._aux._gs[j] = C_FREE
            if fabs(rc) > scale:
                scale = fabs(rc)
        scale = 1.0 + scale
        st = C_SOLVED
        prev = INF
        infeas = 0.0
        for it in range(8):
            st = self._aux.c_solve(True)
            infeas = 0.0
            for j in range(m):
                if fabs(self._aux._x[n + j]) > infeas:
                    infeas = fabs(self._aux._x[n + j])
            self.infeasibility = infeas
            if st != C_SOLVED or infeas <= C_PHASE1_TOL * scale:
                break
            if infeas > 0.5 * prev:
                break  # stalled: genuinely infeasible
            prev = infeas
            for i in range(n):
                self._aux._g[i] = -C_PHASE1_EPS * self._aux._x[i]
        if st != C_SOLVED or self.infeasibility > C_PHASE1_TOL * scale:
            return False
        for i in range(n):
            v = self._aux._x[i]
            if v < self._lb[i]:
                v = self._lb[i]
            elif v > self._ub[i]:
                v = self._ub[i]
            self._x[i] = v
            if v <= self._lb[i]:
                self._vs[i] = C_AT_LOWER
            elif v >= self._ub[i]:
                self._vs[i] = C_AT_UPPER
            else:
                self._vs[i] = C_FREE
        for j in range(m):
            r = 0.0
            for i in range(n):
                r += self._C[j, i] * self._x[i]
            if fabs(r - self._cl[j]) <= C_PHASE1_TOL * scale:
                self._gs[j] = C_AT_LOWER
            elif fabs(r - self._cu[j]) <= C_PHASE1_TOL * scale:
                self._gs[j] = C_AT_UPPER
            else:
                self._gs[j] = C_FREE
        return True

    cdef void _store_multipliers(self) noexcept nogil:
        cdef int n = self.n
        cdef int m = self.m
        cdef int i, j
        cdef double grad, resid
        resid = 0.0
        for i in range(n):
            grad = self._g[i]
            for j in range(n):
                grad += self._H[i, j] * self._x[j]
            for j in range(m):
                if self._lamfull[j] != 0.0:
                    grad += self._C[j, i] * self._lamfull[j]
            if self._vs[i] != C_FREE:
                self._mu[i] = -grad
            else:
                self._mu[i] = 0.0
                if fabs(grad) > resid:
                    resid = fabs(grad)
        for j in range(m):
            self._lam[j] = self._lamfull[j]
        self.kkt_residual = resid


# ---------------------------------------------------------------------------
# RTI workspace: linearize, condense, solve, shift
# ---------------------------------------------------------------------------

cdef class RtiCore:
    """Multiple-shooting Gauss-Newton RTI workspace over control moves.

    Same condensing scheme, cost convention, and shift semantics as the
    fallback; all per-cycle work runs in fixed preallocated buffers.
    """

    cdef readonly int N, substeps, m_gen, rows_per_node, nv
    cdef readonly double dt, soft_penalty, levenberg
    cdef readonly object params, w_state, w_control, w_terminal
    cdef readonly object u_min, u_max, x_min, x_max
    cdef readonly object soft_node, soft_state, soft_side
    cdef readonly object states, controls, x_ref, u_ref, x_meas, u_cmd
    cdef readonly object A, B, d, Gamma, G_x0, g_const
    cdef readonly DenseQp qp
    cdef public int qp_iterations
    cdef object _E_arr, _c_arr, _soft_erow_arr, _soft_base_arr, _dx_arr
    cdef double[::1] _prm, _wstage, _wlast, _wctl, _umin, _umax, _xmin, _xmax
    cdef double[:, ::1] _xs, _us, _xr, _ur
    cdef double[::1] _xm, _ucmd
    cdef double[:, :, ::1] _A, _B, _Gm
    cdef double[:, ::1] _d, _Gx0, _E, _serow
    cdef double[::1] _gc, _c, _sbase, _dx
    cdef int[::1] _snode, _sstate
    cdef signed char[::1] _sside
    cdef double[:, ::1] _tE
    cdef double[::1] _tc, _dx2
    cdef bint _prepared

    def __init__(self, n_horizon, dt, substeps, params, w_state, w_control,
                 w_terminal, u_min, u_max, x_min, x_max, soft_penalty,
                 levenberg):
        cdef int n = int(n_horizon)
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

        lo_states = np.flatnonzero(np.isfinite(self.x_min))
        up_states = np.flatnonzero(np.isfinite(self.x_max))
        rows = []
        for k in range(1, n + 1):
            for s in lo_states:
                rows.append((k, int(s), -1))
            for s in up_states:
                rows.append((k, int(s), 1))
        self.m_gen = len(rows)
        self.rows_per_node = len(lo_states) + len(up_states)
        self.soft_node = np.array([r[0] for r in rows], dtype=np.intc)
        self.soft_state = np.array([r[1] for r in rows], dtype=np.intc)
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
        self._E_arr = np.zeros((NX, NX))
        self._c_arr = np.zeros(NX)
        mg = self.m_gen if self.m_gen else 1
        self._soft_erow_arr = np.zeros((mg, NX))
        self._soft_base_arr = np.zeros(mg)
        self._dx_arr = np.zeros(NX)

        self._prm = self.params
        self._wstage = self.w_state
        self._wlast = self.w_state + self.w_terminal
        self._wctl = self.w_control
        self._umin = self.u_min
        self._umax = self.u_max
        self._xmin = self.x_min
        self._xmax = self.x_max
        self._xs = self.states
        self._us = self.controls
        self._xr = self.x_ref
        self._ur = self.u_ref
        self._xm = self.x_meas
        self._ucmd = self.u_cmd
        self._A = self.A
        self._B = self.B
        self._Gm = self.Gamma
        self._d = self.d
        self._Gx0 = self.G_x0
        self._gc = self.g_const
        self._E = self._E_arr
        self._c = self._c_arr
        self._serow = self._soft_erow_arr
        self._sbase = self._soft_base_arr
        self._dx = self._dx_arr
        self._snode = self.soft_node if self.m_gen else np.zeros(1, dtype=np.intc)
        self._sstate = self.soft_state if self.m_gen else np.zeros(1, dtype=np.intc)
        self._sside = self.soft_side if self.m_gen else np.zeros(1, dtype=np.int8)
        self._tE = np.zeros((NX, NX))
        self._tc = np.zeros(NX)
        self._dx2 = np.zeros(NX)

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
        cdef int st
        with nogil:
            st = self.c_prepare()
        return st

    cdef int c_prepare(self) noexcept nogil:
        cdef int n = self.N
        cdef int nv = self.nv
        cdef int k, node, i, j, r, row, w4, s, cidx
        cdef double acc, wi
        cdef double[:, ::1] H = self.qp._H

        for i in range(nv):
            for j in range(nv):
                H[i, j] = 0.0
            self._gc[i] = 0.0
        for i in range(4 * n):
            for j in range(CNX):
                self._Gx0[i, j] = 0.0
        for i in range(CNX):
            for j in range(CNX):
                self._E[i, j] = 1.0 if i == j else 0.0
            self._c[i] = 0.0
            for j in range(4 * n):
                self._Gm[0, i, j] = 0.0
        row = 0
        for k in range(n):
            for i in range(CNX):
                self._tc[i] = self._xs[k, i]
            c_rk4_sens(&self._tc[0], &self._us[k, 0], &self._prm[0], self.dt,
                       self.substeps, &self._A[k, 0, 0], &self._B[k, 0, 0])
            for i in range(CNX):
                self._d[k, i] = self._tc[i] - self._xs[k + 1, i]
            # Gamma[k+1] = [A_k Gamma_k[:, :4k], B_k, 0]
            for i in range(CNX):
                for j in range(4 * k):
                    acc = 0.0
                    for r in range(CNX):
                        acc += self._A[k, i, r] * self._Gm[k, r, j]
                    self._Gm[k + 1, i, j] = acc
                for j in range(CNU):
                    self._Gm[k + 1, i, 4 * k + j] = self._B[k, i, j]
                for j in range(4 * k + 4, 4 * n):
                    self._Gm[k + 1, i, j] = 0.0
            # E <- A_k E ; c <- A_k c + d_k
            for i in range(CNX):
                for j in range(CNX):
                    acc = 0.0
                    for r in range(CNX):
                        acc += self._A[k, i, r] * self._E[r, j]
                    self._tE[i, j] = acc
            for i in range(CNX):
                acc = self._d[k, i]
                for r in range(CNX):
                    acc += self._A[k, i, r] * self._c[r]
                self._tc[i] = acc
            for i in range(CNX):
                self._c[i] = self._tc[i]
                for j in range(CNX):
                    self._E[i, j] = self._tE[i, j]
            node = k + 1
            w4 = 4 * node
            # H[:w4, :w4] += Gamma_node' W Gamma_node (upper triangle)
            for i in range(w4):
                for j in range(i, w4):
                    acc = 0.0
                    for r in range(CNX):
                        wi = self._wstage[r] if node < n else self._wlast[r]
                        acc += self._Gm[node, r, i] * wi * self._Gm[node, r, j]
                    H[i, j] += acc
            # g_const[:w4] += Gamma' W (x - x_ref + c); G_x0 += Gamma' W E
            for i in range(w4):
                acc = 0.0
                for r in range(CNX):
                    wi = self._wstage[r] if node < n else self._wlast[r]
                    acc += self._Gm[node, r, i] * wi * (
                        self._xs[node, r] - self._xr[node, r] + self._c[r])
                self._gc[i] += acc
                for j in range(CNX):
                    acc = 0.0
                    for r in range(CNX):
                        wi = self._wstage[r] if node < n else self._wlast[r]
                        acc += self._Gm[node, r, i] * wi * self._E[r, j]
                    self._Gx0[i, j] += acc
            while row < self.m_gen and self._snode[row] == node:
                s = self._sstate[row]
                for j in range(w4):
                    self.qp._C[row, j] = self._Gm[node, s, j]
                for j in range(w4, 4 * n):
                    self.qp._C[row, j] = 0.0
                self.qp._C[row, 4 * n] = 1.0 if self._sside[row] == C_AT_LOWER else -1.0
                for j in range(CNX):
                    self._serow[row, j] = self._E[s, j]
                self._sbase[row] = self._xs[node, s] + self._c[s]
                row += 1
        for k in range(n):
            for i in range(CNU):
                cidx = 4 * k + i
                H[cidx, cidx] += self._wctl[i]
                self._gc[cidx] += self._wctl[i] * (self._us[k, i] - self._ur[k, i])
        if self.m_gen:
            H[4 * n, 4 * n] += self.soft_penalty
        for i in range(nv):
            H[i, i] += self.levenberg
        # mirror the upper triangle so H is symmetric exactly
        for i in range(nv):
            for j in range(i + 1, nv):
                H[j, i] = H[i, j]
        for k in range(n):
            for i in range(CNX):
                if not isfinite(self._d[k, i]):
                    self._prepared = False
                    return 1
                for j in range(CNX):
                    if not isfinite(self._A[k, i, j]):
                        self._prepared = False
                        return 1
                for j in range(CNU):
                    if not isfinite(self._B[k, i, j]):
                        self._prepared = False
                        return 1
        self.qp.c_refresh(nv, self.m_gen)
        self._prepared = True
        return 0

    def feedback(self):
        if not self._prepared:
            raise RuntimeError("feedback called without a fresh prepare")
        cdef int st
        with nogil:
            st = self.c_feedback()
        return st

    cdef int c_feedback(self) noexcept nogil:
        cdef int n = self.N
        cdef int nv = self.nv
        cdef int i, j, k, status
        cdef double acc, shift_j
        if not self._prepared:
            return C_MAX_ITER
        for i in range(CNX):
            self._dx[i] = self._xm[i] - self._xs[0, i]
        for i in range(nv):
            self.qp._g[i] = self._gc[i]
        for i in range(4 * n):
            acc = 0.0
            for j in range(CNX):
                acc += self._Gx0[i, j] * self._dx[j]
            self.qp._g[i] += acc
        for k in range(n):
            for i in range(CNU):
                self.qp._lb[4 * k + i] = self._umin[i] - self._us[k, i]
                self.qp._ub[4 * k + i] = self._umax[i] - self._us[k, i]
        if self.m_gen:
            self.qp._lb[4 * n] = 0.0
            self.qp._ub[4 * n] = INF
            for j in range(self.m_gen):
                shift_j = self._sbase[j]
                for i in range(CNX):
                    shift_j += self._serow[j, i] * self._dx[i]
                if self._sside[j] == C_AT_LOWER:
                    self.qp._cl[j] = self._xmin[self._sstate[j]] - shift_j
                    self.qp._cu[j] = INF
                else:
                    self.qp._cl[j] = -INF
                    self.qp._cu[j] = self._xmax[self._sstate[j]] - shift_j
        status = self.qp.c_solve(True)
        self.qp_iterations = self.qp.iterations
        if status != C_SOLVED:
            return status
        for k in range(n):
            for i in range(CNU):
                self._us[k, i] += self.qp._x[4 * k + i]
        for i in range(CNX):
            self._xs[0, i] += self._dx[i]
        for k in range(n):
            for i in range(CNX):
                acc = self._d[k, i]
                for j in range(CNX):
                    acc += self._A[k, i, j] * self._dx[j]
                for j in range(CNU):
                    acc += self._B[k, i, j] * self.qp._x[4 * k + j]
                self._dx2[i] = acc
            for i in range(CNX):
                self._dx[i] = self._dx2[i]
                self._xs[k + 1, i] += self._dx[i]
        for i in range(CNU):
            acc = self._us[0, i]
            if acc < self._umin[i]:
                acc = self._umin[i]
            elif acc > self._umax[i]:
                acc = self._umax[i]
            self._ucmd[i] = acc
        self._prepared = False
        return C_SOLVED

    def shift(self):
        with nogil:
            self.c_shift()

    cdef void c_shift(self) noexcept nogil:
        cdef int n = self.N
        cdef int i, k, rpn
        for k in range(n):
            for i in range(CNX):
                self._xs[k, i] = self._xs[k + 1, i]
        for k in range(n - 1):
            for i in range(CNU):
                self._us[k, i] = self._us[k + 1, i]
        for i in range(CNX):
            self._tc[i] = self._xs[n - 1, i]
        c_rk4(&self._tc[0], &self._us[n - 1, 0], &self._prm[0], self.dt,
              self.substeps)
        for i in range(CNX):
            self._xs[n, i] = self._tc[i]
        for i in range(4 * (n - 1)):
            self.qp._vs[i] = self.qp._vs[i + 4]
        rpn = self.rows_per_node
        if self.m_gen and n > 1:
            for i in range(self.m_gen - rpn):
                self.qp._gs[i] = self.qp._gs[i + rpn]
        self._prepared = False

    def workspace_bytes(self):
        """Bytes held by the fixed-capacity numeric buffers."""
        total = sum(
            arr.nbytes
            for arr in (
                self.states, self.controls, self.x_ref, self.u_ref,
                self.x_meas, self.u_cmd, self.A, self.B, self.d, self.Gamma,
                self.G_x0, self.g_const, self._E_arr, self._c_arr,
                self._soft_erow_arr, self._soft_base_arr, self._dx_arr,
            )
        )
        total += (self._tE.shape[0] * self._tE.shape[1]
                  + self._tc.shape[0] + self._dx2.shape[0]) * sizeof(double)
        return total + self.qp.workspace_bytes()


def run_cycles(RtiCore core, int cycles):
    """Run prepare/feedback/shift repeatedly against `core.x_meas`.

    The zero-allocation benchmark surface: the loop body is pure C on the
    preallocated workspace. Returns the worst QP status seen, -1 on a
    non-finite linearization.
    """
    cdef int i, st
    cdef int worst = 0
    cdef int bad = 0
    with nogil:
        for i in range(cycles):
            if core.c_prepare() != 0:
                bad = 1
                break
            st = core.c_feedback()
            if st > worst:
                worst = st
            core.c_shift()
    if bad:
        return -1
    return worst
