"""Dense primal-dual interior-point solver for small linear matrix inequalities.

Problem form (one symmetric block per entry of ``block_sizes``)::

    minimize    c^T y
    subject to  F0_b + sum_i y_i F_ib  >= 0   (PSD, every block b)
                E y = f                       (optional)

Internally this is the conic pair ``min c^T x  s.t.  Gx + s = h, Ax = b,
s >= 0`` with ``G x = -sum x_i F_i`` and ``h = F0``.  The iteration runs on the
homogeneous self-dual embedding (so an infeasible LMI terminates with a dual
improving ray instead of diverging), uses Nesterov-Todd scaling and a
Mehrotra predictor-corrector step.

Near the optimum the scaled KKT system can lose accuracy before the strict
tolerances are met.  The best iterate is tracked, and when the residuals
stall the solver stops with ``near-optimal`` if that iterate meets the looser
``near_tol``.  Callers that need guarantees should re-check the returned point.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITERATIONS = "max-iterations"
NEAR_OPTIMAL = "near-optimal"
SOLVED = (OPTIMAL, NEAR_OPTIMAL)


@dataclass
class SdpOptions:
    feastol: float = 1e-8
    abstol: float = 1e-8
    reltol: float = 1e-8
    max_iters: int = 200
    step: float = 0.99
    near_tol: float = 1e-6
    stall_iters: int = 5
    refine: int = 2


class SdpProblem:
    """LMI problem ``F0 + sum_i y_i F_i >= 0`` with optional equalities on ``y``.

    Coefficient matrices are accumulated with :meth:`add` and stored per block
    as ``(variable indices, stacked matrices)`` so that blocks only carry the
    variables that actually touch them.
    """

    def __init__(self, block_sizes, nvars: int):
        self.block_sizes = [int(n) for n in block_sizes]
        if any(n <= 0 for n in self.block_sizes):
            raise ValueError("block sizes must be positive")
        self.nvars = int(nvars)
        self.offsets = [np.zeros((n, n)) for n in self.block_sizes]
        self._terms: list[dict[int, np.ndarray]] = [{} for _ in self.block_sizes]
        self.objective = np.zeros(self.nvars)
        self.eq_matrix = np.zeros((0, self.nvars))
        self.eq_rhs = np.zeros(0)

    @classmethod
    def from_dense(cls, offsets, coeffs, objective=None, eq_matrix=None, eq_rhs=None):
        """``coeffs[i][b]`` is the matrix multiplying ``y_i`` in block ``b``."""
        offsets = [np.atleast_2d(np.asarray(F, dtype=float)) for F in offsets]
        prob = cls([F.shape[0] for F in offsets], len(coeffs))
        for b, F in enumerate(offsets):
            prob.set_offset(b, F)
        for i, blocks in enumerate(coeffs):
            for b, M in enumerate(blocks):
                M = np.atleast_2d(np.asarray(M, dtype=float))
                if np.any(M):
                    prob.add(i, b, M)
        if objective is not None:
            prob.objective = np.asarray(objective, dtype=float).copy()
        if eq_matrix is not None:
            prob.set_equalities(eq_matrix, eq_rhs)
        return prob

    def set_offset(self, block: int, matrix) -> None:
        self.offsets[block] = np.array(matrix, dtype=float).reshape(
            self.block_sizes[block], self.block_sizes[block])

    def add(self, var: int, block: int, matrix) -> None:
        M = np.asarray(matrix, dtype=float)
        n = self.block_sizes[block]
        if M.shape != (n, n):
            raise ValueError(f"block {block} expects {n}x{n}, got {M.shape}")
        terms = self._terms[block]
        if var in terms:
            terms[var] = terms[var] + M
        else:
            terms[var] = M.copy()

    def add_entry(self, var: int, block: int, i: int, j: int, value: float) -> None:
        """Add ``value`` at (i, j) and (j, i) of the matrix multiplying ``var``."""
        n = self.block_sizes[block]
        terms = self._terms[block]
        M = terms.get(var)
        if M is None:
            M = terms[var] = np.zeros((n, n))
        M[i, j] += value
        if i != j:
            M[j, i] += value

    def set_equalities(self, matrix, rhs) -> None:
        E = np.atleast_2d(np.asarray(matrix, dtype=float))
        if E.size == 0:
            E = np.zeros((0, self.nvars))
        if E.shape[1] != self.nvars:
            raise ValueError("equality matrix has wrong number of columns")
        self.eq_matrix = E
        self.eq_rhs = np.asarray(rhs, dtype=float).reshape(E.shape[0])

    def block_terms(self, block: int) -> tuple[np.ndarray, np.ndarray]:
        terms = self._terms[block]
        idx = np.array(sorted(terms), dtype=np.int64)
        n = self.block_sizes[block]
        mats = np.array([terms[i] for i in idx]).reshape(len(idx), n, n)
        return idx, mats

    def validate(self, tol: float = 1e-12) -> None:
        for b, n in enumerate(self.block_sizes):
            F0 = self.offsets[b]
            if np.max(np.abs(F0 - F0.T), initial=0.0) > tol:
                raise ValueError(f"offset of block {b} is not symmetric")
            for var, M in self._terms[b].items():
                if not 0 <= var < self.nvars:
                    raise ValueError(f"variable index {var} out of range")
                if np.max(np.abs(M - M.T), initial=0.0) > tol:
                    raise ValueError(f"matrix of variable {var} in block {b} is not symmetric")
        if self.objective.shape != (self.nvars,):
            raise ValueError("objective has wrong length")

    def lmi_value(self, y) -> list[np.ndarray]:
        """``F0 + sum y_i F_i`` per block."""
        y = np.asarray(y, dtype=float)
        out = []
        for b in range(len(self.block_sizes)):
            idx, mats = self.block_terms(b)
            S = self.offsets[b].copy()
            if len(idx):
                S += np.tensordot(y[idx], mats, axes=1)
            out.append(S)
        return out


@dataclass
class SdpSolution:
    status: str
    y: np.ndarray
    primal_objective: float = float("nan")
    dual_objective: float = float("nan")
    primal_residual: float = float("nan")
    dual_residual: float = float("nan")
    gap: float = float("nan")
    iterations: int = 0
    min_eig: list[float] = field(default_factory=list)
    dual: list[np.ndarray] = field(default_factory=list)
    ray_residual: float = float("nan")
    message: str = ""

    @property
    def margin(self) -> float:
        return min(self.min_eig) if self.min_eig else float("inf")


def min_eig(block) -> float:
    A = np.atleast_2d(np.asarray(block, dtype=float))
    if np.max(np.abs(A - A.T), initial=0.0) > 1e-9 * max(1.0, np.max(np.abs(A), initial=0.0)):
        raise ValueError("matrix is not symmetric")
    return float(np.linalg.eigvalsh(0.5 * (A + A.T))[0])


# --- block helpers --------------------------------------------------------

def _inner(U, V) -> float:
    return float(sum(np.vdot(u, v) for u, v in zip(U, V)))


def _norm(U) -> float:
    return float(np.sqrt(sum(np.vdot(u, u) for u in U)))


def _sym(M):
    return 0.5 * (M + M.T)


class _Scaling:
    """Nesterov-Todd scaling ``W z = R^T Z R = R^{-1} S R^{-T} = diag(lam)``.

    Kept in product form: after each step the scaling is refreshed from the
    scaled iterates, which stay well conditioned as ``mu -> 0``.
    """

    def __init__(self, S, Z):
        self.R, self.Rinv, self.lam = [], [], []
        for Sb, Zb in zip(S, Z):
            R, Rinv, lam = _nt_factor(Sb, Zb)
            self.R.append(R)
            self.Rinv.append(Rinv)
            self.lam.append(lam)

    def update(self, s_scaled, z_scaled):
        for k, (Sb, Zb) in enumerate(zip(s_scaled, z_scaled)):
            Rt, Rtinv, lam = _nt_factor(_sym(Sb), _sym(Zb))
            self.R[k] = self.R[k] @ Rt
            self.Rinv[k] = Rtinv @ self.Rinv[k]
            self.lam[k] = lam

    def s(self):
        return [_sym((R * l) @ R.T) for R, l in zip(self.R, self.lam)]

    def z(self):
        return [_sym((Ri.T * l) @ Ri) for Ri, l in zip(self.Rinv, self.lam)]

    def scale_z(self, Z):  # W z
        return [R.T @ Zb @ R for R, Zb in zip(self.R, Z)]

    def scale_s(self, S):  # W^{-T} s
        return [Ri @ Sb @ Ri.T for Ri, Sb in zip(self.Rinv, S)]

    def unscale_s(self, V):  # W^T v
        return [R @ Vb @ R.T for R, Vb in zip(self.R, V)]

    def inv_wtw(self, V):  # (W^T W)^{-1} v
        return [Ri.T @ (Ri @ Vb @ Ri.T) @ Ri for Ri, Vb in zip(self.Rinv, V)]

    def wtw(self, V):  # W^T W v
        return [R @ (R.T @ Vb @ R) @ R.T for R, Vb in zip(self.R, V)]


def _nt_factor(S, Z):
    Ls = np.linalg.cholesky(S)
    Lz = np.linalg.cholesky(Z)
    _, lam, Vt = np.linalg.svd(Lz.T @ Ls)
    R = Ls @ Vt.T / np.sqrt(lam)
    Rinv = (np.sqrt(lam)[:, None] * Vt) @ sla.solve_triangular(Ls, np.eye(len(lam)), lower=True)
    return R, Rinv, lam


def _lam_prod(lam, V):
    return [0.5 * (l[:, None] + l[None, :]) * Vb for l, Vb in zip(lam, V)]


def _lam_div(lam, V):
    return [2.0 * Vb / (l[:, None] + l[None, :]) for l, Vb in zip(lam, V)]


def _sprod(U, V):
    return [0.5 * (Ub @ Vb + Vb @ Ub) for Ub, Vb in zip(U, V)]


def _max_step(lam, D) -> float:
    """Largest alpha with diag(lam) + alpha*D >= 0 in every block."""
    amax = np.inf
    for l, Db in zip(lam, D):
        s = 1.0 / np.sqrt(l)
        ev = np.linalg.eigvalsh(_sym(s[:, None] * Db * s[None, :]))[0]
        if ev < 0:
            amax = min(amax, -1.0 / ev)
    return amax


def _shift_into_cone(U):
    worst = max(-np.linalg.eigvalsh(_sym(Ub))[0] for Ub in U)
    nrm = _norm(U)
    if worst >= -1e-8 * max(nrm, 1.0):
        return [Ub + (1.0 + worst) * np.eye(Ub.shape[0]) for Ub in U]
    return [Ub.copy() for Ub in U]


def _reduce_equalities(E, f, tol=1e-10):
    """Drop dependent rows of ``E y = f``; return (E, f, consistent)."""
    if E.shape[0] == 0:
        return E, f, True
    scale = max(1.0, np.max(np.abs(E)))
    Q, Rr, piv = sla.qr(E.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(Rr))
    rank = int(np.sum(diag > tol * scale * max(E.shape)))
    keep = np.sort(piv[:rank])
    E2, f2 = E[keep], f[keep]
    if rank < E.shape[0]:
        sol, *_ = np.linalg.lstsq(E2, f2, rcond=None) if rank else (np.zeros(E.shape[1]),)
        resid = np.max(np.abs(E @ sol - f), initial=0.0)
        if resid > 1e-8 * max(1.0, np.max(np.abs(f), initial=0.0)):
            return E2, f2, False
    return E2, f2, True


def solve(prob: SdpProblem, opts: SdpOptions | None = None) -> SdpSolution:
    """Solve ``prob``; see module docstring for the formulation."""
    opts = opts or SdpOptions()
    prob.validate()
    n = prob.nvars
    nb = len(prob.block_sizes)
    blocks = [prob.block_terms(b) for b in range(nb)]
    c = prob.objective.astype(float)
    h = [F.copy() for F in prob.offsets]
    A, b, consistent = _reduce_equalities(prob.eq_matrix, prob.eq_rhs)
    p = A.shape[0]
    m = sum(prob.block_sizes)

    if not consistent:
        y0 = np.linalg.lstsq(prob.eq_matrix, prob.eq_rhs, rcond=None)[0] if n else np.zeros(0)
        return _finish(prob, INFEASIBLE, y0, message="inconsistent equality constraints")

    def Gmul(x):
        out = []
        for (idx, mats), nbk in zip(blocks, prob.block_sizes):
            if len(idx):
                out.append(-np.tensordot(x[idx], mats, axes=1))
            else:
                out.append(np.zeros((nbk, nbk)))
        return out

    def GTmul(Z):
        g = np.zeros(n)
        for (idx, mats), Zb in zip(blocks, Z):
            if len(idx):
                g[idx] -= np.tensordot(mats, Zb, axes=([1, 2], [0, 1]))
        return g

    resx0 = max(1.0, np.linalg.norm(c))
    resy0 = max(1.0, np.linalg.norm(b)) if p else 1.0
    resz0 = max(1.0, _norm(h))

    def factor(scaling: _Scaling | None):
        H = np.zeros((n, n))
        for (idx, mats), b_ in zip(blocks, range(nb)):
            if not len(idx):
                continue
            if scaling is None:
                M = mats
            else:
                Ri = scaling.Rinv[b_]
                M = Ri @ mats @ Ri.T
            Mf = M.reshape(len(idx), -1)
            H[np.ix_(idx, idx)] += Mf @ Mf.T
        K = np.zeros((n + p, n + p))
        K[:n, :n] = H
        K[:n, n:] = A.T
        K[n:, :n] = A
        reg = 1e-13 * max(1.0, np.max(np.abs(np.diag(H)), initial=0.0))
        Kreg = K.copy()
        Kreg[np.arange(n), np.arange(n)] += reg
        Kreg[n + np.arange(p), n + np.arange(p)] -= reg
        lu = sla.lu_factor(Kreg, check_finite=False)
        if not np.all(np.isfinite(lu[0])):
            raise np.linalg.LinAlgError("KKT factorization failed")

        def reduced(bx, by, bz):
            if scaling is None:
                wz = bz
            else:
                wz = scaling.inv_wtw(bz)
            rhs = np.concatenate([bx + GTmul(wz), by])
            sol = sla.lu_solve(lu, rhs, check_finite=False)
            for _ in range(2):
                r = rhs - K @ sol
                if np.linalg.norm(r) <= 1e-14 * max(1.0, np.linalg.norm(rhs)):
                    break
                sol = sol + sla.lu_solve(lu, r, check_finite=False)
            dx, dy = sol[:n], sol[n:]
            Gdx = Gmul(dx)
            diff = [g - bzb for g, bzb in zip(Gdx, bz)]
            dz = diff if scaling is None else scaling.inv_wtw(diff)
            return dx, dy, [_sym(d) for d in dz]

        def kkt(bx, by, bz):
            # A^T dy + G^T dz = bx ; A dx = by ; G dx - W^T W dz = bz
            dx, dy, dz = reduced(bx, by, bz)
            if scaling is None:
                return dx, dy, dz
            scale = max(np.linalg.norm(bx), np.linalg.norm(by) if p else 0.0, _norm(bz), 1e-300)
            for _ in range(opts.refine):
                ex = bx - A.T @ dy - GTmul(dz)
                ey = by - A @ dx
                ez = [bzb - g + w for bzb, g, w in zip(bz, Gmul(dx), scaling.wtw(dz))]
                err = max(np.linalg.norm(ex), np.linalg.norm(ey) if p else 0.0, _norm(ez))
                if err <= 1e-15 * scale:
                    break
                cx_, cy_, cz_ = reduced(ex, ey, ez)
                dx, dy = dx + cx_, dy + cy_
                dz = [a + b for a, b in zip(dz, cz_)]
            return dx, dy, dz

        return kkt

    # initial point
    try:
        kkt0 = factor(None)
    except (np.linalg.LinAlgError, ValueError) as exc:
        return _finish(prob, MAX_ITERATIONS, np.zeros(n), message=f"initial factorization: {exc}")
    x, _, zt = kkt0(np.zeros(n), b, h)
    s = _shift_into_cone([-zb for zb in zt])
    _, y, z = kkt0(-c, np.zeros(p), [np.zeros_like(hb) for hb in h])
    z = _shift_into_cone(z)
    tau, kappa = 1.0, 1.0
    try:
        W = _Scaling(s, z)
    except np.linalg.LinAlgError as exc:
        return _finish(prob, MAX_ITERATIONS, x, message=f"initial scaling: {exc}")

    status = MAX_ITERATIONS
    message = "iteration limit reached"
    info = {}
    it = 0
    best = None  # (merit, iteration, x, y, s, z, tau, info)
    for it in range(opts.max_iters + 1):
        s, z = W.s(), W.z()
        Gx = Gmul(x)
        hrx = -(A.T @ y) - GTmul(z)
        rx = -hrx + c * tau  # A^T y + G^T z + c tau
        hry = A @ x
        ry = -hry + b * tau
        hrz = [sb + gb for sb, gb in zip(s, Gx)]
        rz = [r - hb * tau for r, hb in zip(hrz, h)]
        cx = float(c @ x)
        by = float(b @ y) if p else 0.0
        hz = _inner(h, z)
        rt = kappa + cx + by + hz
        gap = _inner(s, z)
        mu = (gap + tau * kappa) / (m + 1)
        pcost, dcost = cx / tau, -(by + hz) / tau
        pres = max(np.linalg.norm(ry) / tau / resy0 if p else 0.0, _norm(rz) / tau / resz0)
        dres = np.linalg.norm(rx) / tau / resx0
        if pcost < 0:
            relgap = gap / tau ** 2 / -pcost
        elif dcost > 0:
            relgap = gap / tau ** 2 / dcost
        else:
            relgap = None
        pinfres = (np.linalg.norm(hrx) / resx0 / -(hz + by)) if (hz + by) < 0 else None
        dinfres = (max(np.linalg.norm(hry) / resy0 if p else 0.0, _norm(hrz) / resz0) / -cx
                   if cx < 0 else None)
        info = dict(pres=pres, dres=dres, gap=gap / tau ** 2, pcost=pcost, dcost=dcost)
        log.debug("it %3d pcost % .6e dcost % .6e gap %.2e pres %.2e dres %.2e k/t %.2e",
                  it, pcost, dcost, gap / tau ** 2, pres, dres, kappa / tau)

        rgap = gap / tau ** 2 if relgap is None else min(gap / tau ** 2, relgap)
        merit = max(pres, dres, rgap)
        if best is None or merit < best[0]:
            best = (merit, it, x.copy(), y.copy(), [Sb.copy() for Sb in s],
                    [Zb.copy() for Zb in z], tau, dict(info))
        elif (best[0] <= opts.near_tol and it - best[1] >= opts.stall_iters
              and merit > 10.0 * best[0]):
            # diverging after having been close: infeasible problems never get here
            # because their residuals stay large while the ray converges
            message = f"residuals stalled after iteration {best[1]}"
            break

        if pres <= opts.feastol and dres <= opts.feastol and (
                gap / tau ** 2 <= opts.abstol or (relgap is not None and relgap <= opts.reltol)):
            status = OPTIMAL
            break
        if pinfres is not None and pinfres <= opts.feastol:
            status = INFEASIBLE
            info["ray"] = pinfres
            z = [zb / -(hz + by) for zb in z]
            break
        if dinfres is not None and dinfres <= opts.feastol:
            status = UNBOUNDED
            info["ray"] = dinfres
            x = x / -cx
            break
        if it == opts.max_iters:
            break

        try:
            kkt = factor(W)
        except (np.linalg.LinAlgError, ValueError) as exc:
            message = f"numerical breakdown at iteration {it}: {exc}"
            break
        lam = W.lam
        lamsq = [np.diag(l * l) for l in lam]
        u1x, u1y, u1z = kkt(-c, b, h)
        c_u1 = float(c @ u1x) + (float(b @ u1y) if p else 0.0) + _inner(h, u1z)

        def direction(sigma, corr_s, corr_tk):
            # scaled complementarity rhs: lam o (ds~ + dz~) = sigma*mu*e - lam o lam - corr
            rc = [sigma * mu * np.eye(len(l)) - lsq - cs
                  for l, lsq, cs in zip(lam, lamsq, corr_s)]
            q = _lam_div(lam, rc)
            rhs_t = sigma * mu - tau * kappa - corr_tk
            f = 1.0 - sigma
            Wq = W.unscale_s(q)
            bz = [-f * r - w for r, w in zip(rz, Wq)]
            u0x, u0y, u0z = kkt(-f * rx, f * ry, bz)
            c_u0 = float(c @ u0x) + (float(b @ u0y) if p else 0.0) + _inner(h, u0z)
            denom = c_u1 - kappa / tau
            dtau = (-f * rt - rhs_t / tau - c_u0) / denom
            dx = u0x + dtau * u1x
            dy = u0y + dtau * u1y
            dz = [a + dtau * bb for a, bb in zip(u0z, u1z)]
            dkappa = (rhs_t - kappa * dtau) / tau
            dzs = W.scale_z(dz)
            dss = [qb - d for qb, d in zip(q, dzs)]
            return dx, dy, dz, dtau, dkappa, dss, dzs

        zeros = [np.zeros_like(Sb) for Sb in s]
        try:
            dx, dy, dz, dtau, dkappa, dss, dzs = direction(0.0, zeros, 0.0)
            amax = min(_max_step(lam, dss), _max_step(lam, dzs))
            if dtau < 0:
                amax = min(amax, -tau / dtau)
            if dkappa < 0:
                amax = min(amax, -kappa / dkappa)
            step_a = min(1.0, amax)
            sigma = (1.0 - step_a) ** 3
            corr = _sprod(dss, dzs)
            dx, dy, dz, dtau, dkappa, dss, dzs = direction(sigma, corr, dtau * dkappa)
            amax = min(_max_step(lam, dss), _max_step(lam, dzs))
            if dtau < 0:
                amax = min(amax, -tau / dtau)
            if dkappa < 0:
                amax = min(amax, -kappa / dkappa)
            alpha = min(1.0, opts.step * amax)
        except (np.linalg.LinAlgError, ValueError) as exc:
            message = f"numerical breakdown at iteration {it}: {exc}"
            break
        try:
            W.update([np.diag(l) + alpha * d for l, d in zip(lam, dss)],
                     [np.diag(l) + alpha * d for l, d in zip(lam, dzs)])
        except np.linalg.LinAlgError as exc:
            message = f"numerical breakdown at iteration {it}: {exc}"
            break
        x = x + alpha * dx
        y = y + alpha * dy
        tau += alpha * dtau
        kappa += alpha * dkappa
        if not np.isfinite(tau) or tau <= 0:
            message = f"numerical breakdown at iteration {it}: tau={tau}"
            break

    if status == MAX_ITERATIONS and best is not None and best[0] <= opts.near_tol:
        _, it_best, x, y, s, z, tau, info = best
        status = NEAR_OPTIMAL
        message = f"{message}; returning iterate {it_best}"
    if status in (OPTIMAL, NEAR_OPTIMAL):
        xs = x / tau
        zs = [zb / tau for zb in z]
    elif status == INFEASIBLE:
        xs, zs = x / tau, z
    elif status == UNBOUNDED:
        xs, zs = x, z
    else:
        xs, zs = x / tau, [zb / tau for zb in z]
    if status == MAX_ITERATIONS:
        log.info("sdp stopped without convergence: %s (%s)", message, info)
    return _finish(prob, status, xs, dual=zs, iterations=it, info=info,
                   message=message if status != OPTIMAL else "")


def _finish(prob, status, y, dual=None, iterations=0, info=None, message=""):
    info = info or {}
    y = np.asarray(y, dtype=float)
    mins = [min_eig(S) for S in prob.lmi_value(y)] if len(y) == prob.nvars else []
    return SdpSolution(
        status=status, y=y,
        primal_objective=float(prob.objective @ y) if len(y) == prob.nvars else float("nan"),
        dual_objective=float(info.get("dcost", float("nan"))),
        primal_residual=float(info.get("pres", float("nan"))),
        dual_residual=float(info.get("dres", float("nan"))),
        gap=float(info.get("gap", float("nan"))),
        iterations=iterations, min_eig=mins, dual=dual or [],
        ray_residual=float(info.get("ray", float("nan"))), message=message)


def dump_problem(prob: SdpProblem, path) -> None:
    """Write a sparse text dump: ``block i j var value`` (var 0 is the offset, 1-based vars)."""
    lines = [f"# nvars {prob.nvars}", "# blocks " + " ".join(map(str, prob.block_sizes)),
             "# objective " + " ".join(repr(float(v)) for v in prob.objective)]
    for row, rhs in zip(prob.eq_matrix, prob.eq_rhs):
        lines.append("# eq " + " ".join(repr(float(v)) for v in row) + " = " + repr(float(rhs)))
    for b in range(len(prob.block_sizes)):
        mats = [(0, prob.offsets[b])] + [(int(i) + 1, M) for i, M in zip(*prob.block_terms(b))]
        for var, M in mats:
            ii, jj = np.nonzero(np.triu(M))
            for i, j in zip(ii, jj):
                lines.append(f"{b} {i} {j} {var} {float(M[i, j])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_problem(path) -> SdpProblem:
    nvars, sizes, objective, eqs, entries = 0, [], None, [], []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# nvars"):
            nvars = int(line.split()[2])
        elif line.startswith("# blocks"):
            sizes = [int(t) for t in line.split()[2:]]
        elif line.startswith("# objective"):
            objective = [float(t) for t in line.split()[2:]]
        elif line.startswith("# eq"):
            lhs, rhs = line[4:].split("=")
            eqs.append(([float(t) for t in lhs.split()], float(rhs)))
        elif line.strip():
            b, i, j, var, val = line.split()
            entries.append((int(b), int(i), int(j), int(var), float(val)))
    prob = SdpProblem(sizes, nvars)
    for b, i, j, var, val in entries:
        if var == 0:
            prob.offsets[b][i, j] = val
            prob.offsets[b][j, i] = val
        else:
            prob.add_entry(var - 1, b, i, j, val)
    if objective is not None:
        prob.objective = np.array(objective)
    if eqs:
        prob.set_equalities([e[0] for e in eqs], [e[1] for e in eqs])
    return prob
