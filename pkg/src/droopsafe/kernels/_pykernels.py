"""Pure-numpy implementations of the hot loops (fallback when the extension is absent)."""

from __future__ import annotations

import numpy as np

BACKEND = "python"

# polynomial slots per inverter in the packed filter tables
SLOT_B, SLOT_DW, SLOT_DV, SLOT_UP, SLOT_UQ = range(5)

# coupling modes: held neighbor samples, full network, held samples for all angles
MODE_HELD, MODE_COUPLED, MODE_HELD_ANGLES = range(3)


def poly_eval_arrays(exps: np.ndarray, coeffs: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Evaluate ``sum_t coeffs[t] prod_k pts[:, k] ** exps[t, k]`` for every row of ``pts``."""
    pts = np.ascontiguousarray(pts, dtype=float)
    n = pts.shape[0]
    out = np.zeros(n)
    if len(coeffs) == 0:
        return out
    dmax = int(exps.max()) if exps.size else 0
    powers = np.ones((pts.shape[1], dmax + 1, n))
    for k in range(pts.shape[1]):
        for d in range(1, dmax + 1):
            powers[k, d] = powers[k, d - 1] * pts[:, k]
    for t in range(len(coeffs)):
        term = np.full(n, coeffs[t])
        for k in range(pts.shape[1]):
            e = exps[t, k]
            if e:
                term = term * powers[k, e]
        out += term
    return out


def filter_interval(a, b, R):
    """Root interval of ``(a - u)(b - u) <= R`` per channel."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    disc = np.sqrt((a - b) ** 2 + 4.0 * np.asarray(R, dtype=float))
    return 0.5 * ((a + b) - disc), 0.5 * ((a + b) + disc)


def _eval2(exps, coeffs, w, v):
    """Evaluate packed 2-variable polynomials; exps (T, 2), w/v any shape."""
    out = np.zeros_like(w)
    for t in range(len(coeffs)):
        c = coeffs[t]
        if c == 0.0:
            continue
        out = out + c * w ** int(exps[t, 0]) * v ** int(exps[t, 1])
    return out


def _powers(G, Bm, delta, V0, th, v, th_nb, v_nb):
    """(P_i, Q_i) with own angle/voltage (th, v) and neighbor values (th_nb, v_nb); shape (R, n)."""
    n = G.shape[0]
    Vi = V0 + v
    Vk = V0 + v_nb
    P = Vi * Vi * np.diag(G)
    Q = -Vi * Vi * np.diag(Bm)
    for k in range(n):
        for i in range(n):
            if i == k or (G[i, k] == 0.0 and Bm[i, k] == 0.0):
                continue
            ang = delta[i] - delta[k] + th[:, i] - th_nb[:, k]
            c, s = np.cos(ang), np.sin(ang)
            P[:, i] += Vi[:, i] * Vk[:, k] * (G[i, k] * c + Bm[i, k] * s)
            Q[:, i] += Vi[:, i] * Vk[:, k] * (G[i, k] * s - Bm[i, k] * c)
    return P, Q


def _rhs(model, th, th_own, w, v, th_nb, w0, v_nb, u):
    """Right-hand side; ``th_own`` is the angle entering the couplings."""
    G, Bm, delta, V0, lp, lq, tau, P0, Q0 = model
    P, Q = _powers(G, Bm, delta, V0, th_own, v, th_nb, v_nb)
    dth = w - w0[:, None]
    dth[:, 0] = 0.0
    dw = (-w + lp * (P0 + u[..., 0] - P)) / tau
    dv = (-v + lq * (Q0 + u[..., 1] - Q)) / tau
    return dth, dw, dv


def _filter(fdata, w, v, req):
    exps, coefs, beta, gamma, c, rmax, ulim, g = fdata
    R_, n = w.shape
    adm = req.copy()
    Bv = np.empty((R_, n))
    active = np.zeros((R_, n), dtype=bool)
    noguar = np.zeros((R_, n), dtype=bool)
    for i in range(n):
        Bi = _eval2(exps[i, SLOT_B], coefs[i, SLOT_B], w[:, i], v[:, i])
        dBw = _eval2(exps[i, SLOT_DW], coefs[i, SLOT_DW], w[:, i], v[:, i])
        dBv = _eval2(exps[i, SLOT_DV], coefs[i, SLOT_DV], w[:, i], v[:, i])
        up = _eval2(exps[i, SLOT_UP], coefs[i, SLOT_UP], w[:, i], v[:, i])
        uq = _eval2(exps[i, SLOT_UQ], coefs[i, SLOT_UQ], w[:, i], v[:, i])
        Bv[:, i] = Bi
        gp = g[i, 0] * dBw
        gq = g[i, 1] * dBv
        outside = Bi < c[i]
        deep = Bi >= 1.0 - 1e-9
        with np.errstate(divide="ignore", invalid="ignore"):
            Rv = gamma[i] * np.log((1.0 - c[i]) / (1.0 - Bi))
        Rv = np.where(deep, rmax[i], np.minimum(Rv, rmax[i]))
        Rv = np.where(outside, 0.0, Rv)
        noguar[:, i] = outside
        for ch, (a, gb) in enumerate(((up, gp), (uq, gq))):
            lo, hi = filter_interval(a, a + beta[i] * gb, Rv)
            L = ulim[i, ch]
            lo2 = np.maximum(lo, -L)
            hi2 = np.minimum(hi, L)
            empty = lo2 > hi2
            # empty intersection: the interval endpoint nearest the actuator box
            near = np.where(hi < -L, hi, lo)
            lo2 = np.where(empty, near, lo2)
            hi2 = np.where(empty, near, hi2)
            r = req[:, i, ch]
            val = np.minimum(np.maximum(r, lo2), hi2)
            active[:, i] |= val != r
            adm[:, i, ch] = val
    return adm, Bv, active, noguar


def simulate(model, x0, samples, period_steps, mode, req_steps, req, filt_on, fdata,
             v_lo, v_hi, blowup, steps, h, stride):
    """Fixed-step RK4 of the droop network with the safety filter in the loop.

    Runs are advanced in lockstep (vectorized over the leading axis of ``x0``).
    """
    x0 = np.asarray(x0, dtype=float)
    R_, n, _ = x0.shape
    th, w, v = (x0[..., 0].copy(), x0[..., 1].copy(), x0[..., 2].copy())
    th[:, 0] = 0.0
    nrec = steps // stride + 1
    trace = np.zeros((R_, nrec, n, 3))
    brec = np.zeros((R_, nrec, n))
    urec = np.zeros((R_, nrec, n, 2))
    minB = np.full((R_, n), np.inf)
    viol = np.zeros((R_, n), dtype=np.int64)
    active_n = np.zeros((R_, n), dtype=np.int64)
    noguar_n = np.zeros((R_, n), dtype=np.int64)
    blown = np.full(R_, -1, dtype=np.int64)
    alive = np.ones(R_, dtype=bool)
    seg = 0
    exps = fdata[0]
    for k in range(steps + 1):
        while seg + 1 < len(req_steps) and req_steps[seg + 1] <= k:
            seg += 1
        request = np.broadcast_to(req[seg], (R_, n, 2)).copy()
        if mode == MODE_COUPLED:
            th_nb, w0, v_nb = th, w[:, 0], v
        else:
            p = min(k // period_steps, samples.shape[1] - 1)
            th_nb = samples[:, p, :, 0].copy()
            th_nb[:, 0] = 0.0
            w0 = samples[:, p, 0, 1]
            v_nb = samples[:, p, :, 2]
        if filt_on:
            u, Bv, act, ng = _filter(fdata, w, v, request)
        else:
            u = request
            Bv = np.stack([_eval2(exps[i, SLOT_B], fdata[1][i, SLOT_B], w[:, i], v[:, i])
                           for i in range(n)], axis=1)
            act = np.zeros((R_, n), dtype=bool)
            ng = Bv < fdata[4]
        live = alive[:, None]
        minB = np.where(live, np.minimum(minB, Bv), minB)
        viol += (live & ((v < v_lo) | (v > v_hi))).astype(np.int64)
        active_n += (live & act).astype(np.int64)
        noguar_n += (live & ng).astype(np.int64)
        if k % stride == 0:
            r = k // stride
            # dead runs keep zeros, as in the compiled loop
            trace[alive, r, :, 0], trace[alive, r, :, 1] = th[alive], w[alive]
            trace[alive, r, :, 2] = v[alive]
            brec[alive, r] = Bv[alive]
            urec[alive, r] = u[alive]
        if k == steps:
            break

        def f(th_, w_, v_):
            if mode == MODE_COUPLED:
                return _rhs(model, th_, th_, w_, v_, th_, w_[:, 0], v_, u)
            if mode == MODE_HELD_ANGLES:
                return _rhs(model, th_, th_nb, w_, v_, th_nb, w0, v_nb, u)
            return _rhs(model, th_, th_, w_, v_, th_nb, w0, v_nb, u)

        k1 = f(th, w, v)
        k2 = f(th + 0.5 * h * k1[0], w + 0.5 * h * k1[1], v + 0.5 * h * k1[2])
        k3 = f(th + 0.5 * h * k2[0], w + 0.5 * h * k2[1], v + 0.5 * h * k2[2])
        k4 = f(th + h * k3[0], w + h * k3[1], v + h * k3[2])
        nth = th + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        nw = w + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        nv = v + h / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        m = alive[:, None]
        th, w, v = np.where(m, nth, th), np.where(m, nw, w), np.where(m, nv, v)
        big = (np.max(np.abs(th), axis=1) > blowup) | (np.max(np.abs(w), axis=1) > blowup) \
            | (np.max(np.abs(v), axis=1) > blowup) | ~np.all(np.isfinite(w), axis=1)
        newly = alive & big
        blown[newly] = k + 1
        alive &= ~big
    return {"trace": trace, "B": brec, "u": urec, "minB": minB, "violations": viol,
            "active": active_n, "no_guarantee": noguar_n, "blown": blown}
