# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot loops; same signatures as ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, sqrt, log, fabs, isfinite

cnp.import_array()

BACKEND = "cython"

# coupling modes: held neighbor samples, full network, held samples for all angles
cdef enum:
    MODE_HELD = 0
    MODE_COUPLED = 1
    MODE_HELD_ANGLES = 2

DEF NSLOT = 5
DEF MAXDEG = 16


cdef inline double _ipow(double x, long e) noexcept nogil:
    cdef double r = 1.0
    while e > 0:
        if e & 1:
            r *= x
        x *= x
        e >>= 1
    return r


def poly_eval_arrays(long[:, ::1] exps, double[::1] coeffs, pts_in):
    cdef double[:, ::1] pts = np.ascontiguousarray(pts_in, dtype=np.float64)
    cdef Py_ssize_t n = pts.shape[0], d = pts.shape[1], T = coeffs.shape[0]
    cdef Py_ssize_t r, t, k, e
    cdef long dmax = max(int(np.max(exps)) if exps.shape[0] and d else 0, 0)
    cdef double acc, term
    out = np.zeros(n)
    cdef double[::1] o = out
    # per-point table of x_k ** e, reused by every term
    cdef double[:, ::1] pw = np.ones((d, dmax + 1))
    with nogil:
        for r in range(n):
            for k in range(d):
                for e in range(1, dmax + 1):
                    pw[k, e] = pw[k, e - 1] * pts[r, k]
            acc = 0.0
            for t in range(T):
                term = coeffs[t]
                for k in range(d):
                    term *= pw[k, exps[t, k]]
                acc += term
            o[r] = acc
    return out


def filter_interval(a, b, R):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    R = np.asarray(R, dtype=float)
    if a.ndim == 1 and a.shape == b.shape == R.shape:
        return _interval1d(np.ascontiguousarray(a), np.ascontiguousarray(b),
                           np.ascontiguousarray(R))
    disc = np.sqrt((a - b) ** 2 + 4.0 * R)
    return 0.5 * ((a + b) - disc), 0.5 * ((a + b) + disc)


cdef tuple _interval1d(double[::1] a, double[::1] b, double[::1] R):
    cdef Py_ssize_t i, n = a.shape[0]
    cdef double disc, mid
    lo = np.empty(n)
    hi = np.empty(n)
    cdef double[::1] lv = lo, hv = hi
    with nogil:
        for i in range(n):
            disc = sqrt((a[i] - b[i]) * (a[i] - b[i]) + 4.0 * R[i])
            mid = a[i] + b[i]
            lv[i] = 0.5 * (mid - disc)
            hv[i] = 0.5 * (mid + disc)
    return lo, hi


cdef inline double _eval2(long[:, :, :, ::1] exps, double[:, :, ::1] coefs, Py_ssize_t i,
                          Py_ssize_t slot, double w, double v) noexcept nogil:
    cdef Py_ssize_t t, T = coefs.shape[2]
    cdef double acc = 0.0, c
    for t in range(T):
        c = coefs[i, slot, t]
        if c != 0.0:
            acc += c * _ipow(w, exps[i, slot, t, 0]) * _ipow(v, exps[i, slot, t, 1])
    return acc


cdef void _rhs(Py_ssize_t n, double[:, ::1] G, double[:, ::1] Bm, double[::1] delta,
               double[::1] V0, double[::1] lp, double[::1] lq, double[::1] tau,
               double[::1] P0, double[::1] Q0, double* th, double* tho, double* w,
               double* v, double* thn, double w0, double* vn, double* u,
               double* dth, double* dw, double* dv) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef double Vi, Vk, P, Q, ang, c, s
    for i in range(n):
        Vi = V0[i] + v[i]
        P = Vi * Vi * G[i, i]
        Q = -Vi * Vi * Bm[i, i]
        for k in range(n):
            if k == i or (G[i, k] == 0.0 and Bm[i, k] == 0.0):
                continue
            Vk = V0[k] + vn[k]
            ang = delta[i] - delta[k] + tho[i] - thn[k]
            c = cos(ang)
            s = sin(ang)
            P += Vi * Vk * (G[i, k] * c + Bm[i, k] * s)
            Q += Vi * Vk * (G[i, k] * s - Bm[i, k] * c)
        dth[i] = w[i] - w0 if i != 0 else 0.0
        dw[i] = (-w[i] + lp[i] * (P0[i] + u[2 * i] - P)) / tau[i]
        dv[i] = (-v[i] + lq[i] * (Q0[i] + u[2 * i + 1] - Q)) / tau[i]


def simulate(model, x0_in, samples_in, long period_steps, int mode, req_steps_in, req_in,
             int filt_on, fdata, double v_lo, double v_hi, double blowup, long steps,
             double h, long stride):
    G_, Bm_, delta_, V0_, lp_, lq_, tau_, P0_, Q0_ = [np.ascontiguousarray(m_, dtype=np.float64)
                                                      for m_ in model]
    cdef double[:, ::1] G = G_, Bm = Bm_
    cdef double[::1] delta = delta_, V0 = V0_, lp = lp_, lq = lq_, tau = tau_, P0 = P0_, Q0 = Q0_
    cdef double[:, :, ::1] x0 = np.ascontiguousarray(x0_in, dtype=np.float64)
    cdef double[:, :, :, ::1] samples = np.ascontiguousarray(samples_in, dtype=np.float64)
    cdef long[::1] req_steps = np.ascontiguousarray(req_steps_in, dtype=np.int64)
    cdef double[:, :, ::1] req = np.ascontiguousarray(req_in, dtype=np.float64)
    cdef long[:, :, :, ::1] exps = np.ascontiguousarray(fdata[0], dtype=np.int64)
    cdef double[:, :, ::1] coefs = np.ascontiguousarray(fdata[1], dtype=np.float64)
    cdef double[::1] beta = np.ascontiguousarray(fdata[2], dtype=np.float64)
    cdef double[::1] gamma = np.ascontiguousarray(fdata[3], dtype=np.float64)
    cdef double[::1] cl = np.ascontiguousarray(fdata[4], dtype=np.float64)
    cdef double[::1] rmax = np.ascontiguousarray(fdata[5], dtype=np.float64)
    cdef double[:, ::1] ulim = np.ascontiguousarray(fdata[6], dtype=np.float64)
    cdef double[:, ::1] gg = np.ascontiguousarray(fdata[7], dtype=np.float64)

    cdef Py_ssize_t R_ = x0.shape[0], n = x0.shape[1], P_ = samples.shape[1]
    cdef Py_ssize_t nseg = req_steps.shape[0]
    cdef Py_ssize_t nrec = steps // stride + 1

    trace_a = np.zeros((R_, nrec, n, 3))
    brec_a = np.zeros((R_, nrec, n))
    urec_a = np.zeros((R_, nrec, n, 2))
    minB_a = np.full((R_, n), np.inf)
    viol_a = np.zeros((R_, n), dtype=np.int64)
    act_a = np.zeros((R_, n), dtype=np.int64)
    ng_a = np.zeros((R_, n), dtype=np.int64)
    blown_a = np.full(R_, -1, dtype=np.int64)
    cdef double[:, :, :, ::1] trace = trace_a
    cdef double[:, :, ::1] brec = brec_a
    cdef double[:, :, :, ::1] urec = urec_a
    cdef double[:, ::1] minB = minB_a
    cdef long[:, ::1] viol = viol_a, actn = act_a, ngn = ng_a
    cdef long[::1] blown = blown_a

    buf_a = np.zeros((22, n))
    cdef double[:, ::1] buf = buf_a
    cdef double* th = &buf[0, 0]
    cdef double* w = &buf[1, 0]
    cdef double* v = &buf[2, 0]
    cdef double* thn = &buf[3, 0]
    cdef double* vn = &buf[4, 0]
    cdef double* k1 = &buf[5, 0]       # 3 rows each
    cdef double* k2 = &buf[8, 0]
    cdef double* k3 = &buf[11, 0]
    cdef double* k4 = &buf[14, 0]
    cdef double* tmp = &buf[17, 0]     # 3 rows
    u_a = np.zeros(2 * n)
    rq_a = np.zeros(2 * n)
    cdef double[::1] u_m = u_a, rq_m = rq_a
    cdef double* u = &u_m[0]
    cdef double* rq = &rq_m[0]

    cdef Py_ssize_t r, k, i, ch, seg, p, rr
    cdef double w0, Bi, dBw, dBv, a, gb, bb, Rv, disc, lo, hi, L, lo2, hi2, val, bmax
    cdef bint outside, act, bad

    with nogil:
        for r in range(R_):
            for i in range(n):
                th[i] = x0[r, i, 0] if i != 0 else 0.0
                w[i] = x0[r, i, 1]
                v[i] = x0[r, i, 2]
            seg = 0
            for k in range(steps + 1):
                while seg + 1 < nseg and req_steps[seg + 1] <= k:
                    seg += 1
                if mode == MODE_COUPLED:
                    for i in range(n):
                        thn[i] = th[i]
                        vn[i] = v[i]
                    w0 = w[0]
                else:
                    p = k // period_steps
                    if p > P_ - 1:
                        p = P_ - 1
                    for i in range(n):
                        thn[i] = samples[r, p, i, 0] if i != 0 else 0.0
                        vn[i] = samples[r, p, i, 2]
                    w0 = samples[r, p, 0, 1]
                for i in range(n):
                    Bi = _eval2(exps, coefs, i, 0, w[i], v[i])
                    outside = Bi < cl[i]
                    act = False
                    if filt_on:
                        dBw = _eval2(exps, coefs, i, 1, w[i], v[i])
                        dBv = _eval2(exps, coefs, i, 2, w[i], v[i])
                        if outside:
                            Rv = 0.0
                        elif Bi >= 1.0 - 1e-9:
                            Rv = rmax[i]
                        else:
                            Rv = gamma[i] * log((1.0 - cl[i]) / (1.0 - Bi))
                            if Rv > rmax[i]:
                                Rv = rmax[i]
                        for ch in range(2):
                            a = _eval2(exps, coefs, i, 3 + ch, w[i], v[i])
                            gb = gg[i, ch] * (dBw if ch == 0 else dBv)
                            bb = a + beta[i] * gb
                            disc = sqrt((a - bb) * (a - bb) + 4.0 * Rv)
                            lo = 0.5 * ((a + bb) - disc)
                            hi = 0.5 * ((a + bb) + disc)
                            L = ulim[i, ch]
                            lo2 = lo if lo > -L else -L
                            hi2 = hi if hi < L else L
                            if lo2 > hi2:
                                lo2 = hi if hi < -L else lo
                                hi2 = lo2
                            val = req[seg, i, ch]
                            if val < lo2:
                                val = lo2
                            if val > hi2:
                                val = hi2
                            if val != req[seg, i, ch]:
                                act = True
                            u[2 * i + ch] = val
                    else:
                        u[2 * i] = req[seg, i, 0]
                        u[2 * i + 1] = req[seg, i, 1]
                    if Bi < minB[r, i]:
                        minB[r, i] = Bi
                    if v[i] < v_lo or v[i] > v_hi:
                        viol[r, i] += 1
                    if act:
                        actn[r, i] += 1
                    if outside:
                        ngn[r, i] += 1
                    if k % stride == 0:
                        rr = k // stride
                        trace[r, rr, i, 0] = th[i]
                        trace[r, rr, i, 1] = w[i]
                        trace[r, rr, i, 2] = v[i]
                        brec[r, rr, i] = Bi
                        urec[r, rr, i, 0] = u[2 * i]
                        urec[r, rr, i, 1] = u[2 * i + 1]
                if k == steps:
                    break
                # RK4 stages
                _stage(n, G, Bm, delta, V0, lp, lq, tau, P0, Q0, mode, th, w, v, thn, w0, vn,
                       u, k1, NULL, 0.0, tmp)
                _stage(n, G, Bm, delta, V0, lp, lq, tau, P0, Q0, mode, th, w, v, thn, w0, vn,
                       u, k2, k1, 0.5 * h, tmp)
                _stage(n, G, Bm, delta, V0, lp, lq, tau, P0, Q0, mode, th, w, v, thn, w0, vn,
                       u, k3, k2, 0.5 * h, tmp)
                _stage(n, G, Bm, delta, V0, lp, lq, tau, P0, Q0, mode, th, w, v, thn, w0, vn,
                       u, k4, k3, h, tmp)
                bad = False
                for i in range(n):
                    th[i] = th[i] + h / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])
                    w[i] = w[i] + h / 6.0 * (k1[n + i] + 2 * k2[n + i] + 2 * k3[n + i] + k4[n + i])
                    v[i] = v[i] + h / 6.0 * (k1[2 * n + i] + 2 * k2[2 * n + i]
                                             + 2 * k3[2 * n + i] + k4[2 * n + i])
                    if (fabs(th[i]) > blowup or fabs(w[i]) > blowup or fabs(v[i]) > blowup
                            or not isfinite(w[i])):
                        bad = True
                if bad:
                    blown[r] = k + 1
                    break
    return {"trace": trace_a, "B": brec_a, "u": urec_a, "minB": minB_a, "violations": viol_a,
            "active": act_a, "no_guarantee": ng_a, "blown": blown_a}


cdef void _stage(Py_ssize_t n, double[:, ::1] G, double[:, ::1] Bm, double[::1] delta,
                 double[::1] V0, double[::1] lp, double[::1] lq, double[::1] tau,
                 double[::1] P0, double[::1] Q0, int mode, double* th, double* w, double* v,
                 double* thn, double w0, double* vn, double* u, double* out, double* prev,
                 double scale, double* tmp) noexcept nogil:
    """``out = rhs(x + scale * prev)``; ``out`` and ``prev`` hold 3 rows of length n."""
    cdef Py_ssize_t i
    cdef double* ts = tmp
    cdef double* ws = tmp + n
    cdef double* vs = tmp + 2 * n
    for i in range(n):
        if prev != NULL:
            ts[i] = th[i] + scale * prev[i]
            ws[i] = w[i] + scale * prev[n + i]
            vs[i] = v[i] + scale * prev[2 * n + i]
        else:
            ts[i] = th[i]
            ws[i] = w[i]
            vs[i] = v[i]
    if mode == MODE_COUPLED:
        _rhs(n, G, Bm, delta, V0, lp, lq, tau, P0, Q0, ts, ts, ws, vs, ts, ws[0], vs, u,
             out, out + n, out + 2 * n)
    elif mode == MODE_HELD_ANGLES:
        _rhs(n, G, Bm, delta, V0, lp, lq, tau, P0, Q0, ts, thn, ws, vs, thn, w0, vn, u,
             out, out + n, out + 2 * n)
    else:
        _rhs(n, G, Bm, delta, V0, lp, lq, tau, P0, Q0, ts, ts, ws, vs, thn, w0, vn, u,
             out, out + n, out + 2 * n)
