"""Microgrid data model: admittances, Kron reduction, power flow and droop dynamics.

States are shifted so the power-flow equilibrium sits at the origin.  Inverter
``i`` carries ``x_i = (th_i, w_i, v_i)``: angle relative to inverter 0 (minus its
equilibrium value), frequency deviation and voltage-magnitude deviation.  The
reference inverter has no angle state.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .poly import Polynomial, taylor_trig

NEIGHBOR_TOL = 1e-9


class PowerFlowError(RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class InverterParams:
    lambda_p: float
    lambda_q: float
    tau: float
    v0: float = 1.0
    P0: float = 0.0
    Q0: float = 0.0

    def __post_init__(self):
        if not (self.lambda_p > 0 and self.lambda_q > 0 and self.tau > 0):
            raise ValueError("droop gains and time constant must be positive")

    @property
    def input_matrix(self) -> np.ndarray:
        """Rows (w, v), columns (u_p, u_q)."""
        return np.array([[self.lambda_p / self.tau, 0.0], [0.0, self.lambda_q / self.tau]])


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str  # "inverter" or "load"
    P: float = 0.0  # injection target for inverters, consumption for loads
    Q: float = 0.0
    shunt: complex = 0j

    def __post_init__(self):
        if self.kind not in ("inverter", "load"):
            raise ValueError(f"bus {self.id}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class Line:
    a: int
    b: int
    r: float
    x: float
    b_shunt: float = 0.0  # total line charging

    @property
    def admittance(self) -> complex:
        z = complex(self.r, self.x)
        if z == 0:
            raise NetworkError(f"line {self.a}-{self.b} has zero impedance")
        return 1.0 / z


@dataclass
class NetworkModel:
    buses: list[Bus]
    Y: np.ndarray
    lines: list[Line] = field(default_factory=list)
    reduced: bool = False

    @classmethod
    def from_lines(cls, buses: Sequence[Bus], lines: Sequence[Line]) -> "NetworkModel":
        buses = list(buses)
        index = {b.id: k for k, b in enumerate(buses)}
        if len(index) != len(buses):
            raise NetworkError("duplicate bus ids")
        n = len(buses)
        Y = np.zeros((n, n), dtype=complex)
        for ln in lines:
            if ln.a not in index or ln.b not in index:
                raise NetworkError(f"line {ln.a}-{ln.b} references an unknown bus")
            i, j = index[ln.a], index[ln.b]
            y = ln.admittance
            Y[i, i] += y + 0.5j * ln.b_shunt
            Y[j, j] += y + 0.5j * ln.b_shunt
            Y[i, j] -= y
            Y[j, i] -= y
        for k, b in enumerate(buses):
            Y[k, k] += b.shunt
        return cls(buses, Y, list(lines))

    @property
    def ids(self) -> list[int]:
        return [b.id for b in self.buses]

    @property
    def G(self) -> np.ndarray:
        return self.Y.real

    @property
    def B(self) -> np.ndarray:
        return self.Y.imag

    def inverter_indices(self) -> list[int]:
        return [k for k, b in enumerate(self.buses) if b.kind == "inverter"]

    def neighbors(self, k: int) -> list[int]:
        row = np.abs(self.G[k]) + np.abs(self.B[k])
        return [j for j in range(len(self.buses)) if j != k and row[j] > NEIGHBOR_TOL]


def load_admittance(bus: Bus, v_nominal: float = 1.0) -> complex:
    """Constant-power load converted to the shunt drawing the same power at ``v_nominal``."""
    return complex(bus.P, -bus.Q) / v_nominal ** 2


def _components(adj: np.ndarray, nodes: list[int]) -> list[list[int]]:
    seen, comps = set(), []
    for s in nodes:
        if s in seen:
            continue
        stack, comp = [s], []
        seen.add(s)
        while stack:
            k = stack.pop()
            comp.append(k)
            for j in nodes:
                if j not in seen and adj[k, j]:
                    seen.add(j)
                    stack.append(j)
        comps.append(sorted(comp))
    return comps


def kron_reduce(net: NetworkModel, v_nominal: float = 1.0) -> NetworkModel:
    """Eliminate load buses: ``Y_red = Y_II - Y_IL Y_LL^{-1} Y_LI`` over inverter buses."""
    keep = net.inverter_indices()
    drop = [k for k in range(len(net.buses)) if k not in keep]
    if not drop:
        return net
    Y = net.Y.copy()
    for k in drop:
        Y[k, k] += load_admittance(net.buses[k], v_nominal)
    Yll = Y[np.ix_(drop, drop)]
    if np.linalg.cond(Yll) > 1e12:
        adj = np.abs(Y) > 0
        comps = _components(adj, drop)
        for comp in comps:
            sub = Y[np.ix_(comp, comp)]
            if np.linalg.cond(sub) > 1e12:
                names = [net.buses[k].id for k in comp]
                raise NetworkError(f"singular load subnetwork at buses {names}")
        raise NetworkError("singular load admittance block")
    Yred = Y[np.ix_(keep, keep)] - Y[np.ix_(keep, drop)] @ np.linalg.solve(Yll, Y[np.ix_(drop, keep)])
    Yred = 0.5 * (Yred + Yred.T)
    buses = [net.buses[k] for k in keep]
    return NetworkModel(buses, Yred, [], reduced=True)


def injections(Y: np.ndarray, V: np.ndarray, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Complex power injected at every bus for polar voltages."""
    E = V * np.exp(1j * theta)
    S = E * np.conj(Y @ E)
    return S.real, S.imag


@dataclass
class PowerFlowResult:
    V: np.ndarray
    theta: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    iterations: int
    residual: float


def power_flow(net: NetworkModel, P_target: Sequence[float] | None = None,
               Q_target: Sequence[float] | None = None, slack: int = 0,
               v_slack: float = 1.0, v_init: Sequence[float] | None = None,
               tol: float = 1e-10, max_iter: int = 50) -> PowerFlowResult:
    """Newton-Raphson in polar form; the slack bus fixes magnitude and angle,
    every other bus is a PQ bus with the given targets."""
    n = len(net.buses)
    P_t = np.array(P_target if P_target is not None else [b.P for b in net.buses], dtype=float)
    Q_t = np.array(Q_target if Q_target is not None else [b.Q for b in net.buses], dtype=float)
    V = np.array(v_init, dtype=float) if v_init is not None else np.full(n, v_slack)
    V[slack] = v_slack
    th = np.zeros(n)
    pq = [k for k in range(n) if k != slack]
    G, B = net.G, net.B

    def mismatch():
        P, Q = injections(net.Y, V, th)
        return np.concatenate([P_t[pq] - P[pq], Q_t[pq] - Q[pq]]), P, Q

    F, P, Q = mismatch()
    res = float(np.max(np.abs(F))) if F.size else 0.0
    it = 0
    while res > tol:
        if it >= max_iter:
            raise PowerFlowError(f"power flow did not converge in {max_iter} iterations "
                                 f"(residual {res:.3e})", res, it)
        it += 1
        dth = th[:, None] - th[None, :]
        c, s = np.cos(dth), np.sin(dth)
        # partial derivatives of injections
        dP_dth = V[:, None] * V[None, :] * (G * s - B * c)
        dQ_dth = -V[:, None] * V[None, :] * (G * c + B * s)
        np.fill_diagonal(dP_dth, -Q - B.diagonal() * V ** 2)
        np.fill_diagonal(dQ_dth, P - G.diagonal() * V ** 2)
        dP_dV = V[:, None] * (G * c + B * s)
        dQ_dV = V[:, None] * (G * s - B * c)
        np.fill_diagonal(dP_dV, P / V + G.diagonal() * V)
        np.fill_diagonal(dQ_dV, Q / V - B.diagonal() * V)
        J = np.block([[dP_dth[np.ix_(pq, pq)], dP_dV[np.ix_(pq, pq)]],
                      [dQ_dth[np.ix_(pq, pq)], dQ_dV[np.ix_(pq, pq)]]])
        try:
            step = np.linalg.solve(J, F)
        except np.linalg.LinAlgError:
            raise PowerFlowError("singular power-flow Jacobian", res, it) from None
        m = len(pq)
        th[pq] += step[:m]
        V[pq] += step[m:]
        if np.any(V <= 0) or not np.all(np.isfinite(V)):
            raise PowerFlowError("voltage collapse during Newton iteration", res, it)
        F, P, Q = mismatch()
        res = float(np.max(np.abs(F)))
    return PowerFlowResult(V.copy(), th.copy(), P, Q, it, res)


# --- dynamics ---------------------------------------------------------------

def state_names(i: int, full: bool = True) -> tuple[str, ...]:
    if i == 0 or not full:
        return (f"w{i}", f"v{i}")
    return (f"th{i}", f"w{i}", f"v{i}")


@dataclass
class Decomposition:
    """``x_i' = f_i(x_i) + g_i u_i + sum_j h_ij(x_i, x_j)`` plus exact evaluators."""

    G: np.ndarray
    B: np.ndarray
    V0: np.ndarray
    delta: np.ndarray
    params: list[InverterParams]
    trig_degree: int
    variables: list[tuple[str, ...]]
    f: list[list[Polynomial]]
    g: list[np.ndarray]
    h: dict[tuple[int, int], list[Polynomial]]
    neighbors: list[list[int]]
    bus_ids: list[int]

    @property
    def n(self) -> int:
        return len(self.params)

    @property
    def P0(self) -> np.ndarray:
        return np.array([p.P0 for p in self.params])

    @property
    def Q0(self) -> np.ndarray:
        return np.array([p.Q0 for p in self.params])

    @property
    def lambda_p(self) -> np.ndarray:
        return np.array([p.lambda_p for p in self.params])

    @property
    def lambda_q(self) -> np.ndarray:
        return np.array([p.lambda_q for p in self.params])

    @property
    def tau(self) -> np.ndarray:
        return np.array([p.tau for p in self.params])

    def powers(self, theta, v):
        """Injected (P, Q) for shifted angles/voltages; arrays of shape (..., n)."""
        theta = np.asarray(theta, dtype=float)
        V = self.V0 + np.asarray(v, dtype=float)
        ang = self.delta + theta
        d = ang[..., :, None] - ang[..., None, :]
        c, s = np.cos(d), np.sin(d)
        VV = V[..., :, None] * V[..., None, :]
        P = np.sum(VV * (self.G * c + self.B * s), axis=-1)
        Q = np.sum(VV * (self.G * s - self.B * c), axis=-1)
        return P, Q

    def exact_rhs(self, theta, omega, v, u=None):
        """Exact trigonometric network dynamics; ``theta[..., 0]`` is ignored (reference)."""
        theta = np.array(theta, dtype=float)
        theta[..., 0] = 0.0
        omega = np.asarray(omega, dtype=float)
        v = np.asarray(v, dtype=float)
        u = np.zeros(omega.shape + (2,)) if u is None else np.asarray(u, dtype=float)
        P, Q = self.powers(theta, v)
        dth = omega - omega[..., :1]
        dw = (-omega + self.lambda_p * (self.P0 + u[..., 0] - P)) / self.tau
        dv = (-v + self.lambda_q * (self.Q0 + u[..., 1] - Q)) / self.tau
        return dth, dw, dv

    def local_powers(self, i: int, th_i, v_i, th_all, v_all):
        """(P_i, Q_i) of inverter ``i`` when its neighbors sit at ``th_all``, ``v_all``
        (entry ``i`` of those arrays is replaced by the inverter's own state)."""
        th_all = np.array(th_all, dtype=float)
        v_all = np.array(v_all, dtype=float)
        th_all[..., i] = th_i
        v_all[..., i] = v_i
        th_all[..., 0] = 0.0
        Vi = self.V0[i] + np.asarray(v_i, dtype=float)
        V = self.V0 + v_all
        d = (self.delta[i] - self.delta) + (th_all[..., i:i + 1] - th_all)
        c, s = np.cos(d), np.sin(d)
        P = Vi * np.sum(V * (self.G[i] * c + self.B[i] * s), axis=-1)
        Q = Vi * np.sum(V * (self.G[i] * s - self.B[i] * c), axis=-1)
        return P, Q

    def polynomial_rhs(self, i: int, point: dict[str, float]) -> np.ndarray:
        """f_i + sum_j h_ij at a point naming every inverter's variables."""
        out = np.array([p.evaluate({k: point[k] for k in p.variables}) for p in self.f[i]])
        for j in self.neighbors[i]:
            for k, p in enumerate(self.h[(i, j)]):
                out[k] += p.evaluate({k2: point[k2] for k2 in p.variables})
        return out

    def substate(self, i: int) -> tuple[tuple[str, str], list[Polynomial], np.ndarray]:
        """Isolated (w, v) dynamics with the angle frozen at equilibrium."""
        names = state_names(i, full=False)
        f = self.f[i]
        if len(f) == 3:
            f = [p.subs({f"th{i}": 0.0}).with_variables(names) for p in f[1:]]
        else:
            f = [p.with_variables(names) for p in f]
        return names, f, self.params[i].input_matrix


def _pair_terms(i: int, k: int, Vi0: float, Vk0: float, G: float, B: float, delta: float,
                degree: int) -> tuple[Polynomial, Polynomial]:
    """Polynomial P/Q contributions ``V_i V_k (G cos + B sin)`` and ``V_i V_k (G sin - B cos)``."""
    names = state_names(i) + (state_names(k) if k != i else ())
    vi = Polynomial.var(f"v{i}", names) + Vi0
    if k == i:
        return (vi * vi * G, vi * vi * (-B))
    vk = Polynomial.var(f"v{k}", names) + Vk0
    psi = Polynomial.constant(0.0, names)
    if i != 0:
        psi = psi + Polynomial.var(f"th{i}", names)
    if k != 0:
        psi = psi - Polynomial.var(f"th{k}", names)
    cs = taylor_trig("cos", delta, degree, "psi").subs({"psi": psi}).with_variables(names)
    sn = taylor_trig("sin", delta, degree, "psi").subs({"psi": psi}).with_variables(names)
    VV = vi * vk
    return VV * (cs * G + sn * B), VV * (sn * G - cs * B)


def _at_zero(p: Polynomial, names: Sequence[str]) -> Polynomial:
    return p.subs({v: 0.0 for v in p.variables if v not in names}).with_variables(names)


def assemble_dynamics(net: NetworkModel, params: Sequence[InverterParams],
                      eq: PowerFlowResult, trig_degree: int = 3) -> Decomposition:
    """Polynomial decomposition around the power-flow equilibrium.

    ``params[i].P0/Q0`` are overwritten with the equilibrium injections so that
    the shifted origin is an exact equilibrium.
    """
    if not net.reduced and any(b.kind == "load" for b in net.buses):
        raise NetworkError("assemble_dynamics expects a Kron-reduced network")
    n = len(net.buses)
    if len(params) != n:
        raise ValueError("one InverterParams per inverter bus required")
    G, B = net.G, net.B
    V0, delta = eq.V, eq.theta - eq.theta[0]
    nbrs = [net.neighbors(i) for i in range(n)]
    dyn_nbrs = [sorted(set(nbrs[i]) | ({0} if i != 0 else set())) for i in range(n)]
    variables = [state_names(i) for i in range(n)]
    f, g, h, new_params = [], [], {}, []
    for i in range(n):
        prm = params[i]
        names = variables[i]
        Pself, Qself = _pair_terms(i, i, V0[i], V0[i], G[i, i], B[i, i], 0.0, trig_degree)
        Pi = Pself.with_variables(names)
        Qi = Qself.with_variables(names)
        pairs = {}
        for k in nbrs[i]:
            pk, qk = _pair_terms(i, k, V0[i], V0[k], G[i, k], B[i, k],
                                 delta[i] - delta[k], trig_degree)
            pairs[k] = (pk, qk)
            Pi = Pi + _at_zero(pk, names)
            Qi = Qi + _at_zero(qk, names)
        P0, Q0 = Pi.constant_term(), Qi.constant_term()
        prm = replace(prm, P0=P0, Q0=Q0, v0=float(V0[i]))
        new_params.append(prm)
        lp, lq, tau = prm.lambda_p, prm.lambda_q, prm.tau
        w = Polynomial.var(f"w{i}", names)
        v = Polynomial.var(f"v{i}", names)
        fw = (w * -1.0 - (Pi - P0) * lp) / tau
        fv = (v * -1.0 - (Qi - Q0) * lq) / tau
        fw = _drop_constant(fw)
        fv = _drop_constant(fv)
        if i == 0:
            f.append([fw, fv])
            g.append(prm.input_matrix.copy())
        else:
            f.append([w.with_variables(names), fw, fv])
            g.append(np.vstack([np.zeros((1, 2)), prm.input_matrix]))
        for k in dyn_nbrs[i]:
            pair_names = names + variables[k]
            zero = Polynomial.constant(0.0, pair_names)
            hw, hv = zero, zero
            if k in pairs:
                pk, qk = pairs[k]
                pk = pk.with_variables(pair_names)
                qk = qk.with_variables(pair_names)
                hw = (pk - _at_zero(pk, names).with_variables(pair_names)) * (-lp / tau)
                hv = (qk - _at_zero(qk, names).with_variables(pair_names)) * (-lq / tau)
            comps = [hw, hv]
            if i != 0:
                hth = zero - Polynomial.var("w0", pair_names) if k == 0 else zero
                comps = [hth] + comps
            h[(i, k)] = comps
    return Decomposition(G.copy(), B.copy(), V0.copy(), delta.copy(), new_params, trig_degree,
                         variables, f, g, h, dyn_nbrs, [b.id for b in net.buses])


def _drop_constant(p: Polynomial) -> Polynomial:
    terms = {e: c for e, c in p.items() if any(e)}
    return Polynomial(terms, p.variables)
