# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stepping kernel.

Operation-for-operation mirror of ``pykernel.py``: identical expressions in
identical order, scalar math through libm, so both backends produce
bitwise-identical results on the same noise stream. See pykernel.py for
the commentary; this file only repeats structural remarks.
"""

from libc.math cimport exp, floor, log, sqrt
from libc.stdint cimport int64_t

import numpy as np

from . import descriptors as D

BACKEND = "compiled"

cdef double _TINY = 1e-12

# descriptor slot constants, captured once as C ints
cdef int B_CONST = D.B_CONST
cdef int CK_SPLINE1D = D.CK_SPLINE1D
cdef int DI_KIND = D.DI_KIND
cdef int DI_DIM = D.DI_DIM
cdef int DI_ENFORCE = D.DI_ENFORCE
cdef int DI_N0 = D.DI_N0
cdef int DI_N2 = D.DI_N2
cdef int DI_HAS_TAB = D.DI_HAS_TAB
cdef int DI_K = D.DI_K
cdef int DI_SP_M = D.DI_SP_M
cdef int DI_TAB_M = D.DI_TAB_M
cdef int DF_A_A = D.DF_A_A
cdef int DF_W1 = D.DF_W1
cdef int DF_T_SWITCH = D.DF_T_SWITCH
cdef int DF_SP_X0 = D.DF_SP_X0
cdef int DF_SP_DX = D.DF_SP_DX
cdef int DF_TAB_X0 = D.DF_TAB_X0
cdef int DF_TAB_DX = D.DF_TAB_DX
cdef int CI_NDONE = D.CI_NDONE
cdef int CI_REFLECT = D.CI_REFLECT
cdef int CI_STATUS = D.CI_STATUS
cdef int CI_TAU_INDEX = D.CI_TAU_INDEX
cdef int CI_SNAP_NEXT = D.CI_SNAP_NEXT
cdef int CI_START_INTERIOR = D.CI_START_INTERIOR
cdef int STATUS_RUNNING = D.STATUS_RUNNING
cdef int STATUS_HIT = D.STATUS_HIT
cdef int STATUS_EXHAUSTED = D.STATUS_EXHAUSTED


cdef double* _ptr(arr):
    cdef double[::1] mv
    if arr.size == 0:
        return NULL
    mv = arr
    return &mv[0]


cdef class CommCtx:
    """Unpacked committor descriptor plus evaluation scratch."""

    cdef public int kind, dim, enforce, n0, n2, has_tab, k, sp_m, tab_m
    cdef public double a_A, w1, t_switch, sp_x0, sp_dx, tab_x0, tab_dx
    cdef double* theta
    cdef double* rows0
    cdef double* rows2
    cdef double* sp_c
    cdef double* tab_c
    cdef double* bv0
    cdef double* bg0
    cdef double* bl0
    cdef double* bv2
    cdef double* bg2
    cdef double* bl2
    cdef double* bd2
    cdef double* g2
    cdef public double t, w, lapw, d00w, flq
    cdef double* gw
    cdef double* dw
    cdef double* dflq
    cdef object _own  # keeps the backing arrays alive

    def __init__(self, desc):
        di, df = desc.desc_i, desc.desc_f
        self.kind = int(di[DI_KIND])
        self.dim = int(di[DI_DIM])
        self.enforce = int(di[DI_ENFORCE])
        self.n0 = int(di[DI_N0])
        self.n2 = int(di[DI_N2])
        self.has_tab = int(di[DI_HAS_TAB])
        self.k = int(di[DI_K])
        self.sp_m = int(di[DI_SP_M])
        self.tab_m = int(di[DI_TAB_M])
        self.a_A = float(df[DF_A_A])
        self.w1 = float(df[DF_W1])
        self.t_switch = float(df[DF_T_SWITCH])
        self.sp_x0 = float(df[DF_SP_X0])
        self.sp_dx = float(df[DF_SP_DX])
        self.tab_x0 = float(df[DF_TAB_X0])
        self.tab_dx = float(df[DF_TAB_DX])
        cdef int d = self.dim
        cdef int nd0 = max(d - 1, 1)
        own = []

        def keep(a):
            a = np.ascontiguousarray(a, dtype=np.float64)
            own.append(a)
            return a

        self.theta = _ptr(keep(desc.theta))
        self.rows0 = _ptr(keep(np.asarray(desc.rows0).reshape(-1)))
        self.rows2 = _ptr(keep(np.asarray(desc.rows2).reshape(-1)))
        self.sp_c = _ptr(keep(np.asarray(desc.sp_c).reshape(-1)))
        self.tab_c = _ptr(keep(np.asarray(desc.tab_c).reshape(-1)))
        self.bv0 = _ptr(keep(np.zeros(max(self.n0, 1))))
        self.bg0 = _ptr(keep(np.zeros(max(self.n0 * nd0, 1))))
        self.bl0 = _ptr(keep(np.zeros(max(self.n0, 1))))
        self.bv2 = _ptr(keep(np.zeros(self.n2 + 1)))
        self.bg2 = _ptr(keep(np.zeros((self.n2 + 1) * d)))
        self.bl2 = _ptr(keep(np.zeros(self.n2 + 1)))
        self.bd2 = _ptr(keep(np.zeros(self.n2 + 1)))
        self.g2 = _ptr(keep(np.zeros(d)))
        self.gw = _ptr(keep(np.zeros(d)))
        self.dw = _ptr(keep(np.zeros(max(self.k, 1))))
        self.dflq = _ptr(keep(np.zeros(max(self.k, 1))))
        self._own = own
        self.t = 0.0
        self.w = 0.0
        self.lapw = 0.0
        self.d00w = 0.0
        self.flq = 0.0

    cdef (double, double, double) _row_eval(self, double* row, double* x,
                                            int x_off, int nd, double* grad,
                                            int g_off) nogil:
        cdef int i
        cdef double e, z, v, lap, d00, sdev, s2, u, term
        if <int> row[0] == B_CONST:
            for i in range(nd):
                grad[g_off + i] = 0.0
            return 1.0, 0.0, 0.0
        e = 0.0
        for i in range(nd):
            z = (x[x_off + i] - row[1 + i]) / row[3 + i]
            e += z * z
        v = exp(-0.5 * e)
        lap = 0.0
        d00 = 0.0
        for i in range(nd):
            sdev = row[3 + i]
            s2 = sdev * sdev
            u = (x[x_off + i] - row[1 + i]) / s2
            grad[g_off + i] = -v * u
            term = u * u - 1.0 / s2
            lap += term
            if i == 0:
                d00 = v * term
        return v, v * lap, d00

    cdef (double, double, double) _spline3(self, double* coef, int m, double x0,
                                           double dx, double xq) nogil:
        cdef int j = <int> floor((xq - x0) / dx)
        if j < 0:
            j = 0
        elif j > m - 1:
            j = m - 1
        cdef double u = xq - (x0 + j * dx)
        cdef double c0 = coef[0 * m + j]
        cdef double c1 = coef[1 * m + j]
        cdef double c2 = coef[2 * m + j]
        cdef double c3 = coef[3 * m + j]
        cdef double v = ((c0 * u + c1) * u + c2) * u + c3
        cdef double vp = (3.0 * c0 * u + 2.0 * c1) * u + c2
        cdef double vpp = 6.0 * c0 * u + 2.0 * c1
        return v, vp, vpp

    cdef void eval(self, double* x, double* gU, double h00U, double eps,
                   bint want_theta) nogil:
        cdef int d = self.dim
        cdef double t = x[0] - self.a_A
        self.t = t
        cdef double* gw = self.gw
        cdef int i, j, jt, nd0, st0, n2t, jj
        cdef double wv, wp, wpp, v, lp, dd, vp, vpp
        cdef double w0, lap0, w2, lap2, d002, a, b, w1
        cdef double lw, gwsq, tt, num
        cdef double* g2
        cdef double acc, gb, g0, gq0, lapq, gqi

        if self.kind == CK_SPLINE1D:
            wv, wp, wpp = self._spline3(self.sp_c, self.sp_m, self.sp_x0, self.sp_dx, x[0])
            self.w = wv
            gw[0] = wp
            self.lapw = wpp
            self.d00w = wpp
        else:
            w0 = 0.0
            lap0 = 0.0
            nd0 = d - 1
            st0 = max(nd0, 1)
            for j in range(self.n0):
                v, lp, dd = self._row_eval(&self.rows0[6 * j], x, 1, nd0, self.bg0, j * st0)
                self.bv0[j] = v
                self.bl0[j] = lp
                a = self.theta[j]
                w0 += a * v
                lap0 += a * lp
            w2 = 0.0
            lap2 = 0.0
            d002 = 0.0
            g2 = self.g2
            for i in range(d):
                g2[i] = 0.0
            for j in range(self.n2):
                v, lp, dd = self._row_eval(&self.rows2[6 * j], x, 0, d, self.bg2, j * d)
                self.bv2[j] = v
                self.bl2[j] = lp
                self.bd2[j] = dd
                b = self.theta[self.n0 + j]
                w2 += b * v
                lap2 += b * lp
                d002 += b * dd
                for i in range(d):
                    g2[i] += b * self.bg2[j * d + i]
            if self.has_tab:
                v, vp, vpp = self._spline3(self.tab_c, self.tab_m, self.tab_x0, self.tab_dx, x[0])
                jt = self.n2
                self.bv2[jt] = v
                self.bl2[jt] = vpp
                self.bd2[jt] = vpp
                self.bg2[jt * d] = vp
                for i in range(1, d):
                    self.bg2[jt * d + i] = 0.0
                b = self.theta[self.n0 + self.n2]
                w2 += b * v
                lap2 += b * vpp
                d002 += b * vpp
                g2[0] += b * vp
            w1 = self.w1
            self.w = w0 + t * w1 + t * t * w2
            gw[0] = w1 + 2.0 * t * w2 + t * t * g2[0]
            for i in range(1, d):
                acc = 0.0
                for j in range(self.n0):
                    acc += self.theta[j] * self.bg0[j * st0 + (i - 1)]
                gw[i] = acc + t * t * g2[i]
            self.d00w = 2.0 * w2 + 4.0 * t * g2[0] + t * t * d002
            self.lapw = lap0 + self.d00w + t * t * (lap2 - d002)
            # lap(T^2 w2) = d00(T^2 w2) + T^2 * lap_tangential(w2)

        lw = 0.0
        gwsq = 0.0
        for i in range(d):
            lw -= gU[i] * gw[i]
            gwsq += gw[i] * gw[i]
        lw += eps * self.lapw
        if self.enforce and t < self.t_switch:
            self.flq = (-h00U + 2.0 * eps * self.d00w) + lw + eps * gwsq
        else:
            tt = t if t > _TINY else _TINY
            num = -gU[0] + 2.0 * eps * gw[0] + t * (lw + eps * gwsq)
            self.flq = num / tt

        if not want_theta or self.k == 0:
            return

        cdef double* dw = self.dw
        cdef double* dflq = self.dflq
        nd0 = d - 1
        st0 = max(nd0, 1)
        for j in range(self.n0):
            dw[j] = self.bv0[j]
            acc = eps * self.bl0[j]
            for i in range(1, d):
                gb = self.bg0[j * st0 + (i - 1)]
                acc += (-gU[i] + 2.0 * eps * gw[i]) * gb
            dflq[j] = acc
        n2t = self.n2 + self.has_tab
        for j in range(n2t):
            jj = self.n0 + j
            v = self.bv2[j]
            g0 = self.bg2[j * d]
            dw[jj] = t * t * v
            gq0 = 2.0 * t * v + t * t * g0
            lapq = 2.0 * v + 4.0 * t * g0 + t * t * self.bl2[j]
            acc = 2.0 * eps * (2.0 * v + t * g0) + eps * lapq
            acc += (-gU[0] + 2.0 * eps * gw[0]) * gq0
            for i in range(1, d):
                gqi = t * t * self.bg2[j * d + i]
                acc += (-gU[i] + 2.0 * eps * gw[i]) * gqi
            dflq[jj] = acc


cdef double _pot_eval(int pkind, double p0, double p1, double* x, int d,
                      double* gU) nogil:
    """Potential gradient into gU; returns the second x0-derivative of U."""
    cdef int i
    cdef double x0, s, h00
    if pkind == 0:  # flat
        for i in range(d):
            gU[i] = 0.0
        return 0.0
    if pkind == 1:  # isotropic quadratic
        for i in range(d):
            gU[i] = p0 * x[i]
        return p0
    x0 = x[0]
    s = x0 * x0 - 1.0
    gU[0] = 4.0 * p0 * s * x0
    h00 = 4.0 * p0 * (3.0 * x0 * x0 - 1.0)
    if pkind == 3:  # 2d double well
        gU[1] = p1 * x[1]
    return h00


def eval_point(pot_i, pot_f, desc, x, want_theta=False, ctx=None):
    """Single-point committor evaluation.

    Returns (t, w, gw, flq, dw, dflq) with numpy arrays for vector parts.
    """
    cdef CommCtx c
    if ctx is None:
        c = CommCtx(desc)
    else:
        c = <CommCtx> ctx
    cdef int d = c.dim
    cdef double[::1] xv = np.asarray(x, dtype=np.float64).reshape(d).copy()
    cdef double gU[8]
    cdef double h00 = _pot_eval(int(pot_i[0]), float(pot_f[0]), float(pot_f[1]),
                                &xv[0], d, gU)
    c.eval(&xv[0], gU, h00, float(pot_f[2]), want_theta)
    cdef int k = c.k if want_theta else 0
    cdef int i
    gw = np.empty(d)
    for i in range(d):
        gw[i] = c.gw[i]
    dw = np.empty(k)
    dflq = np.empty(k)
    for i in range(k):
        dw[i] = c.dw[i]
        dflq[i] = c.dflq[i]
    return c.t, c.w, gw, c.flq, dw, dflq


def eval_points(pot_i, pot_f, desc, xs, want_theta=False):
    """Batch committor evaluation over points xs with shape (n, dim)."""
    ctx = CommCtx(desc)
    xs = np.asarray(xs, dtype=np.float64)
    cdef int n = xs.shape[0]
    cdef int k = (<CommCtx> ctx).k if want_theta else 0
    t = np.empty(n)
    w = np.empty(n)
    gw = np.empty((n, (<CommCtx> ctx).dim))
    flq = np.empty(n)
    dw = np.empty((n, k))
    dflq = np.empty((n, k))
    cdef int i
    for i in range(n):
        r = eval_point(pot_i, pot_f, desc, xs[i], want_theta, ctx=ctx)
        t[i], w[i], gw[i], flq[i] = r[0], r[1], r[2], r[3]
        if k:
            dw[i] = r[4]
            dflq[i] = r[5]
    return t, w, gw, flq, dw, dflq


cdef class TppRunner:
    """Resumable transition-path stepping for one model family.

    One runner holds the unpacked descriptors and scratch; it can advance
    any number of paths (one at a time) through their carry arrays. Not
    shareable across threads.
    """

    cdef public int pkind, dim, k, max_steps
    cdef public double p0, p1, eps, a_B, dt
    cdef public CommCtx main
    cdef public object s_ctx, meas, lay
    cdef CommCtx _s, _m
    cdef bint _with_alt, _with_meas
    cdef double* _gU
    cdef double* _xa
    cdef double* _xb
    cdef double* _disp
    cdef double* _ytau
    cdef double* _thp
    cdef double* _tha
    cdef object _own
    # carry layout offsets
    cdef int o_fprev, o_accdir, o_aprev, o_accds, o_accito, o_wdiff0
    cdef int o_measprev, o_accmeas, o_tau, o_logqtau, o_wdifftau, o_ytau
    cdef int o_thprev, o_thacc, o_thlogq

    def __init__(self, pot_i, pot_f, main_desc, s_desc=None, meas_desc=None,
                 a_B=1.0, dt=1e-4, max_steps=10_000_000):
        self.pkind = int(pot_i[0])
        self.p0 = float(pot_f[0])
        self.p1 = float(pot_f[1])
        self.eps = float(pot_f[2])
        self.main = CommCtx(main_desc)
        self.s_ctx = CommCtx(s_desc) if s_desc is not None else None
        self.meas = CommCtx(meas_desc) if meas_desc is not None else None
        self._s = <CommCtx> self.s_ctx if self.s_ctx is not None else None
        self._m = <CommCtx> self.meas if self.meas is not None else None
        self._with_alt = self.s_ctx is not None
        self._with_meas = self.meas is not None
        self.a_B = float(a_B)
        self.dt = float(dt)
        self.max_steps = int(max_steps)
        self.dim = self.main.dim
        self.k = self.main.k
        lay = D.carry_layout(self.dim, self.k)
        self.lay = lay
        self.o_fprev = lay.f_prev
        self.o_accdir = lay.acc_dir
        self.o_aprev = lay.a_prev
        self.o_accds = lay.acc_ds
        self.o_accito = lay.acc_ito
        self.o_wdiff0 = lay.wdiff0
        self.o_tau = lay.tau
        self.o_logqtau = lay.logq_tau
        self.o_wdifftau = lay.wdiff_tau
        self.o_ytau = lay.y_tau
        self.o_thprev = lay.th_prev
        self.o_thacc = lay.th_acc
        self.o_thlogq = lay.th_logq
        cdef int d = self.dim
        own = []

        def keep(m):
            a = np.zeros(m)
            own.append(a)
            return a

        self._gU = _ptr(keep(d))
        self._xa = _ptr(keep(d))
        self._xb = _ptr(keep(d))
        self._disp = _ptr(keep(d))
        self._ytau = _ptr(keep(d))
        self._thp = _ptr(keep(max(self.k, 1)))
        self._tha = _ptr(keep(max(self.k, 1)))
        self._own = own

    cdef double _alt_ds(self) nogil:
        """Time integrand of the alternative functional form."""
        cdef double g2 = 0.0
        cdef double gd
        cdef int i
        for i in range(self.dim):
            gd = self.main.gw[i] - self._s.gw[i]
            g2 += gd * gd
        return self._s.flq - self.eps * g2

    def run_block(self, double[::1] carry_f, int64_t[::1] carry_i,
                  double[:, ::1] noise, store_states=None,
                  snap_steps=None, snap_logr=None, snap_int=None):
        """Advance by up to noise.shape[0] steps; returns rows consumed."""
        cdef CommCtx main = self.main
        cdef CommCtx s_ctx = self._s
        cdef CommCtx meas = self._m
        cdef int d = self.dim
        cdef int k = self.k
        cdef double dt = self.dt
        cdef double eps = self.eps
        cdef double a_A = main.a_A
        cdef double a_B = self.a_B
        cdef double s = sqrt(2.0 * eps * dt)
        cdef double cap = 4.0 * s
        cdef bint with_alt = self._with_alt
        cdef bint with_meas = self._with_meas
        cdef CommCtx func = meas if with_meas else main

        cdef bint has_store = store_states is not None
        cdef double[:, ::1] store_mv
        if has_store:
            store_mv = store_states
        cdef int n_snap = 0
        cdef int64_t[::1] snap_steps_mv
        cdef double[::1] snap_logr_mv
        cdef double[::1] snap_int_mv
        if snap_steps is not None:
            n_snap = len(snap_steps)
            snap_steps_mv = np.ascontiguousarray(snap_steps, dtype=np.int64)
            snap_logr_mv = snap_logr
            snap_int_mv = snap_int

        cdef double* x = self._xa
        cdef double* xn = self._xb
        cdef double* disp = self._disp
        cdef double* ytau = self._ytau
        cdef double* gU = self._gU
        cdef double* th_prev = self._thp
        cdef double* th_acc = self._tha
        cdef double* tmp

        cdef int i, j
        for i in range(d):
            x[i] = carry_f[i]
        cdef double f_prev = carry_f[self.o_fprev]
        cdef double acc_dir = carry_f[self.o_accdir]
        cdef double a_prev = carry_f[self.o_aprev]
        cdef double acc_ds = carry_f[self.o_accds]
        cdef double acc_ito = carry_f[self.o_accito]
        for j in range(k):
            th_prev[j] = carry_f[self.o_thprev + j]
            th_acc[j] = carry_f[self.o_thacc + j]
        cdef long n = <long> carry_i[CI_NDONE]
        cdef long reflections = <long> carry_i[CI_REFLECT]
        cdef int status = <int> carry_i[CI_STATUS]
        cdef int snap_next = <int> carry_i[CI_SNAP_NEXT]
        cdef int interior = <int> carry_i[CI_START_INTERIOR]

        cdef long nrows = noise.shape[0]
        cdef bint want_theta = k > 0
        cdef long used = 0
        cdef long r = 0
        cdef double h00, f_cur, a_cur, xi0, nrm2, v, v0, sc, t, tt
        cdef double ito_inc, frac, tau, h00_t, f_tau, delta, a_tau

        while r < nrows and status == STATUS_RUNNING:
            if n >= self.max_steps:
                status = STATUS_EXHAUSTED
                break
            used = r + 1

            h00 = _pot_eval(self.pkind, self.p0, self.p1, x, d, gU)
            main.eval(x, gU, h00, eps, want_theta)
            if with_meas:
                meas.eval(x, gU, h00, eps, False)
            if with_alt:
                s_ctx.eval(x, gU, h00, eps, False)

            f_cur = func.flq
            if n > 0:
                if n == 1 and not func.enforce and not interior:
                    # integrable singularity at the boundary start:
                    # right-endpoint rule on the first interval
                    acc_dir += dt * f_cur
                else:
                    acc_dir += 0.5 * dt * (f_prev + f_cur)
                for j in range(k):
                    th_acc[j] += 0.5 * dt * (th_prev[j] + main.dflq[j])
                if with_alt:
                    a_cur = self._alt_ds()
                    acc_ds += 0.5 * dt * (a_prev + a_cur)
                    a_prev = a_cur
            else:
                carry_f[self.o_wdiff0] = (main.w - s_ctx.w) if with_alt else 0.0
                if with_alt:
                    a_prev = self._alt_ds()
            f_prev = f_cur
            for j in range(k):
                th_prev[j] = main.dflq[j]

            if snap_next < n_snap and n == snap_steps_mv[snap_next]:
                snap_logr_mv[snap_next] = func.w - main.w
                snap_int_mv[snap_next] = acc_dir
                snap_next += 1

            ito_inc = 0.0
            if n == 0 and not interior:
                # boundary start: reflected normal increment plus
                # tangential Euler-Maruyama update
                xi0 = noise[r, 0] if noise[r, 0] >= 0.0 else -noise[r, 0]
                xn[0] = a_A + s * xi0
                if d > 1:
                    nrm2 = 0.0
                    for i in range(1, d):
                        v = -gU[i] + 2.0 * eps * main.gw[i]
                        disp[i] = v * dt
                        nrm2 += disp[i] * disp[i]
                    if nrm2 > cap * cap:
                        sc = cap / sqrt(nrm2)
                        for i in range(1, d):
                            disp[i] *= sc
                    for i in range(1, d):
                        xn[i] = x[i] + disp[i] + s * noise[r, i]
                if with_alt:
                    ito_inc = (main.gw[0] - s_ctx.gw[0]) * xi0
                    for i in range(1, d):
                        ito_inc += (main.gw[i] - s_ctx.gw[i]) * noise[r, i]
            else:
                t = main.t
                tt = t if t > _TINY else _TINY
                v0 = -gU[0] + 2.0 * eps * (1.0 / tt + main.gw[0])
                disp[0] = v0 * dt
                nrm2 = disp[0] * disp[0]
                for i in range(1, d):
                    v = -gU[i] + 2.0 * eps * main.gw[i]
                    disp[i] = v * dt
                    nrm2 += disp[i] * disp[i]
                if nrm2 > cap * cap:
                    sc = cap / sqrt(nrm2)
                    for i in range(d):
                        disp[i] *= sc
                for i in range(d):
                    xn[i] = x[i] + disp[i] + s * noise[r, i]
                if xn[0] < a_A:
                    xn[0] = 2.0 * a_A - xn[0]
                    reflections += 1
                if with_alt:
                    for i in range(d):
                        ito_inc += (main.gw[i] - s_ctx.gw[i]) * noise[r, i]

            if has_store:
                for i in range(d):
                    store_mv[r, i] = xn[i]

            if xn[0] >= a_B:
                frac = (a_B - x[0]) / (xn[0] - x[0])
                tau = (n + frac) * dt
                ytau[0] = a_B
                for i in range(1, d):
                    ytau[i] = x[i] + frac * (xn[i] - x[i])
                h00_t = _pot_eval(self.pkind, self.p0, self.p1, ytau, d, gU)
                main.eval(ytau, gU, h00_t, eps, want_theta)
                if with_meas:
                    meas.eval(ytau, gU, h00_t, eps, False)
                if with_alt:
                    s_ctx.eval(ytau, gU, h00_t, eps, False)
                f_tau = func.flq
                delta = frac * dt
                if n == 0 and not func.enforce and not interior:
                    acc_dir += delta * f_tau
                else:
                    acc_dir += 0.5 * delta * (f_prev + f_tau)
                for j in range(k):
                    th_acc[j] += 0.5 * delta * (th_prev[j] + main.dflq[j])
                if with_alt:
                    a_tau = self._alt_ds()
                    acc_ds += 0.5 * delta * (a_prev + a_tau)
                    acc_ito += frac * ito_inc
                    carry_f[self.o_wdifftau] = main.w - s_ctx.w
                carry_f[self.o_tau] = tau
                carry_f[self.o_logqtau] = log(a_B - a_A) + func.w
                for i in range(d):
                    carry_f[self.o_ytau + i] = ytau[i]
                for j in range(k):
                    carry_f[self.o_thlogq + j] = main.dw[j]
                while snap_next < n_snap:
                    snap_logr_mv[snap_next] = func.w - main.w
                    snap_int_mv[snap_next] = acc_dir
                    snap_next += 1
                status = STATUS_HIT
                carry_i[CI_TAU_INDEX] = n + 1
                n += 1
                break

            if with_alt:
                acc_ito += ito_inc
            tmp = x
            x = xn
            xn = tmp
            n += 1
            r += 1

        for i in range(d):
            carry_f[i] = x[i]
        carry_f[self.o_fprev] = f_prev
        carry_f[self.o_accdir] = acc_dir
        carry_f[self.o_aprev] = a_prev
        carry_f[self.o_accds] = acc_ds
        carry_f[self.o_accito] = acc_ito
        for j in range(k):
            carry_f[self.o_thprev + j] = th_prev[j]
            carry_f[self.o_thacc + j] = th_acc[j]
        carry_i[CI_NDONE] = n
        carry_i[CI_REFLECT] = reflections
        carry_i[CI_STATUS] = status
        carry_i[CI_SNAP_NEXT] = snap_next
        return used


cdef class LangevinRunner:
    """Plain Euler-Maruyama stepping with optional segment harvesting."""

    cdef public int pkind, dim
    cdef public double p0, p1, eps, dt
    cdef double* _gU
    cdef double* _x
    cdef object _own

    def __init__(self, pot_i, pot_f, dt):
        self.pkind = int(pot_i[0])
        self.p0 = float(pot_f[0])
        self.p1 = float(pot_f[1])
        self.eps = float(pot_f[2])
        self.dim = int(pot_i[1])
        self.dt = float(dt)
        a = np.zeros(self.dim)
        b = np.zeros(self.dim)
        self._own = (a, b)
        self._gU = _ptr(a)
        self._x = _ptr(b)

    def run_block(self, double[::1] carry_f, int64_t[::1] carry_i,
                  double[:, ::1] noise, store_states=None, harvest=None):
        """Advance noise.shape[0] steps.

        carry_i = [n_done, phase, last_a, n_segments]; when ``harvest`` is
        given as (a_A, a_B, seg_buf), segments of the A -> B alternation
        are written as index pairs (last time in A, first time in B).
        Returns (rows consumed, buffer_full).
        """
        cdef int d = self.dim
        cdef double dt = self.dt
        cdef double s = sqrt(2.0 * self.eps * dt)
        cdef int pkind = self.pkind
        cdef double p0 = self.p0
        cdef double p1 = self.p1

        cdef double* x = self._x
        cdef double* gU = self._gU
        cdef int i
        for i in range(d):
            x[i] = carry_f[i]
        cdef long n = <long> carry_i[0]
        cdef int phase = <int> carry_i[1]
        cdef long last_a = <long> carry_i[2]
        cdef long nseg = <long> carry_i[3]

        cdef bint has_harvest = harvest is not None
        cdef double a_A = 0.0, a_B = 0.0
        cdef int64_t[:, ::1] seg_mv
        cdef long seg_cap = 0
        if has_harvest:
            a_A, a_B, seg_buf = harvest
            seg_mv = seg_buf
            seg_cap = seg_mv.shape[0]
        cdef bint has_store = store_states is not None
        cdef double[:, ::1] store_mv
        if has_store:
            store_mv = store_states

        cdef bint full = False
        cdef long used = 0
        cdef long nrows = noise.shape[0]
        cdef long r

        for r in range(nrows):
            _pot_eval(pkind, p0, p1, x, d, gU)
            for i in range(d):
                x[i] = x[i] - gU[i] * dt + s * noise[r, i]
            n += 1
            used = r + 1
            if has_store:
                for i in range(d):
                    store_mv[r, i] = x[i]
            if has_harvest:
                if x[0] <= a_A:
                    phase = 1
                    last_a = n
                elif phase == 1 and x[0] >= a_B:
                    seg_mv[nseg, 0] = last_a
                    seg_mv[nseg, 1] = n
                    nseg += 1
                    phase = 0
                    if nseg >= seg_cap:
                        full = True
                        break

        for i in range(d):
            carry_f[i] = x[i]
        carry_i[0] = n
        carry_i[1] = phase
        carry_i[2] = last_a
        carry_i[3] = nseg
        return used, bool(full)
