"""Pure-Python stepping kernel.

Reference implementation of committor evaluation and path stepping. The
compiled kernel in ``_ck.pyx`` mirrors this file operation for operation;
scalar math goes through libm (``math.exp`` and friends) so both backends
produce bitwise-identical results on the same noise stream.

Committors are ``q(x) = T(x) * exp(w(x))`` with ``T(x) = x[0] - a_A``.
``flq`` denotes the generator quotient Lq/q.
"""

from __future__ import annotations

import math

import numpy as np

from . import descriptors as D

BACKEND = "python"

_TINY = 1e-12  # guards 1/T when a step lands exactly on the reactant boundary


class CommCtx:
    """Unpacked committor descriptor plus evaluation scratch.

    Evaluation results are exposed as attributes so repeated stepping does
    not allocate: t, w, gw (length dim), lapw, d00w, flq and, when
    requested, dw / dflq (length k).
    """

    def __init__(self, desc: D.CommittorDesc):
        di, df = desc.desc_i, desc.desc_f
        self.kind = int(di[D.DI_KIND])
        self.dim = int(di[D.DI_DIM])
        self.enforce = int(di[D.DI_ENFORCE])
        self.n0 = int(di[D.DI_N0])
        self.n2 = int(di[D.DI_N2])
        self.has_tab = int(di[D.DI_HAS_TAB])
        self.k = int(di[D.DI_K])
        self.sp_m = int(di[D.DI_SP_M])
        self.tab_m = int(di[D.DI_TAB_M])
        self.a_A = float(df[D.DF_A_A])
        self.w1 = float(df[D.DF_W1])
        self.t_switch = float(df[D.DF_T_SWITCH])
        self.sp_x0 = float(df[D.DF_SP_X0])
        self.sp_dx = float(df[D.DF_SP_DX])
        self.tab_x0 = float(df[D.DF_TAB_X0])
        self.tab_dx = float(df[D.DF_TAB_DX])
        self.theta = [float(v) for v in desc.theta]
        self.rows0 = [[float(v) for v in r] for r in desc.rows0]
        self.rows2 = [[float(v) for v in r] for r in desc.rows2]
        self.sp_c = [[float(v) for v in r] for r in desc.sp_c]
        self.tab_c = [[float(v) for v in r] for r in desc.tab_c]
        d = self.dim
        nd0 = max(d - 1, 1)
        # per-basis scratch: value, gradient, laplacian, second x0-derivative
        self.bv0 = [0.0] * max(self.n0, 1)
        self.bg0 = [0.0] * max(self.n0 * nd0, 1)
        self.bl0 = [0.0] * max(self.n0, 1)
        self.bv2 = [0.0] * (self.n2 + 1)
        self.bg2 = [0.0] * ((self.n2 + 1) * d)
        self.bl2 = [0.0] * (self.n2 + 1)
        self.bd2 = [0.0] * (self.n2 + 1)
        self.g2 = [0.0] * d
        # outputs
        self.t = 0.0
        self.w = 0.0
        self.gw = [0.0] * d
        self.lapw = 0.0
        self.d00w = 0.0
        self.flq = 0.0
        self.dw = [0.0] * max(self.k, 1)
        self.dflq = [0.0] * max(self.k, 1)

    def _row_eval(self, row, x, x_off, nd, grad, g_off):
        """Evaluate one basis row on x[x_off : x_off + nd].

        Returns (value, laplacian, d00); the gradient is written into
        grad[g_off : g_off + nd]. d00 is the second derivative along the
        first of the nd variables.
        """
        if int(row[0]) == D.B_CONST:
            for i in range(nd):
                grad[g_off + i] = 0.0
            return 1.0, 0.0, 0.0
        e = 0.0
        for i in range(nd):
            z = (x[x_off + i] - row[1 + i]) / row[3 + i]
            e += z * z
        v = math.exp(-0.5 * e)
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

    def _spline3(self, coef, m, x0, dx, xq):
        """Cubic cell polynomial: value and first two derivatives."""
        j = int(math.floor((xq - x0) / dx))
        if j < 0:
            j = 0
        elif j > m - 1:
            j = m - 1
        u = xq - (x0 + j * dx)
        c0 = coef[0][j]
        c1 = coef[1][j]
        c2 = coef[2][j]
        c3 = coef[3][j]
        v = ((c0 * u + c1) * u + c2) * u + c3
        vp = (3.0 * c0 * u + 2.0 * c1) * u + c2
        vpp = 6.0 * c0 * u + 2.0 * c1
        return v, vp, vpp

    def eval(self, x, gU, h00U, eps, want_theta):
        """Evaluate at point x given potential gradient and curvature.

        Near the reactant boundary the generator quotient switches to its
        analytic limit when the boundary condition is enforced; otherwise
        the raw quotient is returned (infinite scale at T = 0, where only
        the right-endpoint quadrature rule ever samples it).
        """
        d = self.dim
        t = x[0] - self.a_A
        self.t = t
        gw = self.gw

        if self.kind == D.CK_SPLINE1D:
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
                v, lp, _ = self._row_eval(self.rows0[j], x, 1, nd0, self.bg0, j * st0)
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
                v, lp, dd = self._row_eval(self.rows2[j], x, 0, d, self.bg2, j * d)
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
                gt = 0.0
                for j in range(self.n0):
                    gt += self.theta[j] * self.bg0[j * st0 + (i - 1)]
                gw[i] = gt + t * t * g2[i]
            self.d00w = 2.0 * w2 + 4.0 * t * g2[0] + t * t * d002
            self.lapw = lap0 + self.d00w + t * t * (lap2 - d002)
            # note lap(T^2 w2) = d00(T^2 w2) + T^2 * lap_tangential(w2)

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

        dw = self.dw
        dflq = self.dflq
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


def _pot_eval(pkind, p0, p1, x, d, gU):
    """Potential gradient into gU; returns the second x0-derivative of U."""
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
    if ctx is None:
        ctx = CommCtx(desc)
    d = ctx.dim
    xl = [float(v) for v in np.asarray(x, dtype=np.float64).reshape(d)]
    gU = [0.0] * d
    h00 = _pot_eval(int(pot_i[0]), float(pot_f[0]), float(pot_f[1]), xl, d, gU)
    ctx.eval(xl, gU, h00, float(pot_f[2]), want_theta)
    k = ctx.k if want_theta else 0
    dw = np.array(ctx.dw[:k]) if k else np.zeros(0)
    dflq = np.array(ctx.dflq[:k]) if k else np.zeros(0)
    return ctx.t, ctx.w, np.array(ctx.gw), ctx.flq, dw, dflq


def eval_points(pot_i, pot_f, desc, xs, want_theta=False):
    """Batch committor evaluation over points xs with shape (n, dim)."""
    ctx = CommCtx(desc)
    xs = np.asarray(xs, dtype=np.float64)
    n = xs.shape[0]
    k = ctx.k if want_theta else 0
    t = np.empty(n)
    w = np.empty(n)
    gw = np.empty((n, ctx.dim))
    flq = np.empty(n)
    dw = np.empty((n, k))
    dflq = np.empty((n, k))
    for i in range(n):
        r = eval_point(pot_i, pot_f, desc, xs[i], want_theta, ctx=ctx)
        t[i], w[i], gw[i], flq[i] = r[0], r[1], r[2], r[3]
        if k:
            dw[i] = r[4]
            dflq[i] = r[5]
    return t, w, gw, flq, dw, dflq


class TppRunner:
    """Resumable transition-path stepping for one model family.

    One runner holds the unpacked descriptors and scratch; it can advance
    any number of paths (one at a time) through their carry arrays. Not
    shareable across threads.
    """

    def __init__(self, pot_i, pot_f, main_desc, s_desc=None, meas_desc=None,
                 a_B=1.0, dt=1e-4, max_steps=10_000_000):
        self.pkind = int(pot_i[0])
        self.p0 = float(pot_f[0])
        self.p1 = float(pot_f[1])
        self.eps = float(pot_f[2])
        self.main = CommCtx(main_desc)
        self.s_ctx = CommCtx(s_desc) if s_desc is not None else None
        self.meas = CommCtx(meas_desc) if meas_desc is not None else None
        self.a_B = float(a_B)
        self.dt = float(dt)
        self.max_steps = int(max_steps)
        self.dim = self.main.dim
        self.k = self.main.k
        self.lay = D.carry_layout(self.dim, self.k)
        self._gU = [0.0] * self.dim

    def _alt_ds(self):
        """Time integrand of the alternative functional form."""
        g2 = 0.0
        for i in range(self.dim):
            gd = self.main.gw[i] - self.s_ctx.gw[i]
            g2 += gd * gd
        return self.s_ctx.flq - self.eps * g2

    def run_block(self, carry_f, carry_i, noise, store_states=None,
                  snap_steps=None, snap_logr=None, snap_int=None):
        """Advance by up to noise.shape[0] steps; returns rows consumed."""
        main = self.main
        s_ctx = self.s_ctx
        meas = self.meas
        lay = self.lay
        d = self.dim
        k = self.k
        dt = self.dt
        eps = self.eps
        a_A = main.a_A
        a_B = self.a_B
        s = math.sqrt(2.0 * eps * dt)
        cap = 4.0 * s
        with_alt = s_ctx is not None
        with_meas = meas is not None
        func = meas if with_meas else main
        n_snap = len(snap_steps) if snap_steps is not None else 0

        x = [float(carry_f[i]) for i in range(d)]
        f_prev = float(carry_f[lay.f_prev])
        acc_dir = float(carry_f[lay.acc_dir])
        a_prev = float(carry_f[lay.a_prev])
        acc_ds = float(carry_f[lay.acc_ds])
        acc_ito = float(carry_f[lay.acc_ito])
        th_prev = [float(carry_f[lay.th_prev + j]) for j in range(k)]
        th_acc = [float(carry_f[lay.th_acc + j]) for j in range(k)]
        n = int(carry_i[D.CI_NDONE])
        reflections = int(carry_i[D.CI_REFLECT])
        status = int(carry_i[D.CI_STATUS])
        snap_next = int(carry_i[D.CI_SNAP_NEXT])
        interior = int(carry_i[D.CI_START_INTERIOR])

        noise_l = noise.tolist()
        nrows = len(noise_l)
        gU = self._gU
        want_theta = k > 0
        used = 0

        r = 0
        while r < nrows and status == D.STATUS_RUNNING:
            if n >= self.max_steps:
                status = D.STATUS_EXHAUSTED
                break
            xi = noise_l[r]
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
                carry_f[lay.wdiff0] = (main.w - s_ctx.w) if with_alt else 0.0
                if with_alt:
                    a_prev = self._alt_ds()
            f_prev = f_cur
            for j in range(k):
                th_prev[j] = main.dflq[j]

            if snap_next < n_snap and n == snap_steps[snap_next]:
                snap_logr[snap_next] = func.w - main.w
                snap_int[snap_next] = acc_dir
                snap_next += 1

            ito_inc = 0.0
            if n == 0 and not interior:
                # boundary start: reflected normal increment plus
                # tangential Euler-Maruyama update
                xi0 = xi[0] if xi[0] >= 0.0 else -xi[0]
                xn = [0.0] * d
                xn[0] = a_A + s * xi0
                if d > 1:
                    nrm2 = 0.0
                    disp = [0.0] * d
                    for i in range(1, d):
                        v = -gU[i] + 2.0 * eps * main.gw[i]
                        disp[i] = v * dt
                        nrm2 += disp[i] * disp[i]
                    if nrm2 > cap * cap:
                        sc = cap / math.sqrt(nrm2)
                        for i in range(1, d):
                            disp[i] *= sc
                    for i in range(1, d):
                        xn[i] = x[i] + disp[i] + s * xi[i]
                if with_alt:
                    ito_inc = (main.gw[0] - s_ctx.gw[0]) * xi0
                    for i in range(1, d):
                        ito_inc += (main.gw[i] - s_ctx.gw[i]) * xi[i]
            else:
                t = main.t
                tt = t if t > _TINY else _TINY
                disp = [0.0] * d
                v0 = -gU[0] + 2.0 * eps * (1.0 / tt + main.gw[0])
                disp[0] = v0 * dt
                nrm2 = disp[0] * disp[0]
                for i in range(1, d):
                    v = -gU[i] + 2.0 * eps * main.gw[i]
                    disp[i] = v * dt
                    nrm2 += disp[i] * disp[i]
                if nrm2 > cap * cap:
                    sc = cap / math.sqrt(nrm2)
                    for i in range(d):
                        disp[i] *= sc
                xn = [0.0] * d
                for i in range(d):
                    xn[i] = x[i] + disp[i] + s * xi[i]
                if xn[0] < a_A:
                    xn[0] = 2.0 * a_A - xn[0]
                    reflections += 1
                if with_alt:
                    for i in range(d):
                        ito_inc += (main.gw[i] - s_ctx.gw[i]) * xi[i]

            if store_states is not None:
                for i in range(d):
                    store_states[r, i] = xn[i]

            if xn[0] >= a_B:
                frac = (a_B - x[0]) / (xn[0] - x[0])
                tau = (n + frac) * dt
                ytau = [0.0] * d
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
                    carry_f[lay.wdiff_tau] = main.w - s_ctx.w
                carry_f[lay.tau] = tau
                carry_f[lay.logq_tau] = math.log(a_B - a_A) + func.w
                for i in range(d):
                    carry_f[lay.y_tau + i] = ytau[i]
                for j in range(k):
                    carry_f[lay.th_logq + j] = main.dw[j]
                while snap_next < n_snap:
                    snap_logr[snap_next] = func.w - main.w
                    snap_int[snap_next] = acc_dir
                    snap_next += 1
                status = D.STATUS_HIT
                carry_i[D.CI_TAU_INDEX] = n + 1
                n += 1
                break

            if with_alt:
                acc_ito += ito_inc
            x = xn
            n += 1
            r += 1

        for i in range(d):
            carry_f[i] = x[i]
        carry_f[lay.f_prev] = f_prev
        carry_f[lay.acc_dir] = acc_dir
        carry_f[lay.a_prev] = a_prev
        carry_f[lay.acc_ds] = acc_ds
        carry_f[lay.acc_ito] = acc_ito
        for j in range(k):
            carry_f[lay.th_prev + j] = th_prev[j]
            carry_f[lay.th_acc + j] = th_acc[j]
        carry_i[D.CI_NDONE] = n
        carry_i[D.CI_REFLECT] = reflections
        carry_i[D.CI_STATUS] = status
        carry_i[D.CI_SNAP_NEXT] = snap_next
        return used


class LangevinRunner:
    """Plain Euler-Maruyama stepping with optional segment harvesting."""

    def __init__(self, pot_i, pot_f, dt):
        self.pkind = int(pot_i[0])
        self.p0 = float(pot_f[0])
        self.p1 = float(pot_f[1])
        self.eps = float(pot_f[2])
        self.dim = int(pot_i[1])
        self.dt = float(dt)
        self._gU = [0.0] * self.dim

    def run_block(self, carry_f, carry_i, noise, store_states=None, harvest=None):
        """Advance noise.shape[0] steps.

        carry_i = [n_done, phase, last_a, n_segments]; when ``harvest`` is
        given as (a_A, a_B, seg_buf), segments of the A -> B alternation
        are written as index pairs (last time in A, first time in B).
        Returns (rows consumed, buffer_full).
        """
        d = self.dim
        dt = self.dt
        s = math.sqrt(2.0 * self.eps * dt)
        pkind, p0, p1 = self.pkind, self.p0, self.p1

        x = [float(carry_f[i]) for i in range(d)]
        n = int(carry_i[0])
        phase = int(carry_i[1])
        last_a = int(carry_i[2])
        nseg = int(carry_i[3])

        if harvest is not None:
            a_A, a_B, seg_buf = harvest
            seg_cap = seg_buf.shape[0]
        noise_l = noise.tolist()
        gU = self._gU
        full = False
        used = 0
        for r in range(len(noise_l)):
            xi = noise_l[r]
            _pot_eval(pkind, p0, p1, x, d, gU)
            for i in range(d):
                x[i] = x[i] - gU[i] * dt + s * xi[i]
            n += 1
            used = r + 1
            if store_states is not None:
                for i in range(d):
                    store_states[r, i] = x[i]
            if harvest is not None:
                if x[0] <= a_A:
                    phase = 1
                    last_a = n
                elif phase == 1 and x[0] >= a_B:
                    seg_buf[nseg, 0] = last_a
                    seg_buf[nseg, 1] = n
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
        return used, full
