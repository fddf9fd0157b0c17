"""Per-inverter barrier certificates, distributed verification and reference policies.

Synthesis runs in box-normalized coordinates (each state divided by the
half-width of the operating box) so the SDPs are well scaled; certificates are
stored in physical coordinates.  The default certificate lives on the (w, v)
sub-state with the angles treated as bounded disturbances inside an angle box.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import sdp
from .grid import Decomposition
from .kernels import poly_eval
from .poly import MonomialBasis, Polynomial, lie_derivative
from .sos import (Condition, NotFound, SemialgebraicSet, SOSProgram, Template,
                  alternation_synthesize, multiplier_degree, even_up, prove_nonneg)

log = logging.getLogger(__name__)

EPS_UNSAFE = 1e-4


class PolicyHypothesisError(ValueError):
    """The gradient condition behind the closed-form policy fails on the boundary."""

    def __init__(self, message: str, point: np.ndarray):
        super().__init__(message)
        self.point = point


@dataclass
class UnsafeSet:
    """Unsafe where any ``w_j(x) > 0``."""

    polys: list[Polynomial]

    @classmethod
    def voltage(cls, var: str, low: float = -0.4, high: float = 0.2) -> "UnsafeSet":
        v = Polynomial.var(var)
        return cls([low - v, v - high])

    def check_origin(self, variables: Sequence[str]) -> None:
        zero = {k: 0.0 for k in variables}
        for w in self.polys:
            if w.evaluate({k: zero[k] for k in w.variables}) >= 0:
                raise ValueError("origin is not strictly safe")

    def contains(self, points: np.ndarray, variables: Sequence[str]) -> np.ndarray:
        pts = np.atleast_2d(points)
        out = np.zeros(len(pts), dtype=bool)
        for w in self.polys:
            out |= poly_eval(w.with_variables(variables), pts) > 0
        return out

    def to_json(self) -> list[str]:
        return [w.to_string() for w in self.polys]


@dataclass
class Box:
    variables: tuple[str, ...]
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.variables = tuple(self.variables)
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if np.any(self.lo >= 0) or np.any(self.hi <= 0):
            raise ValueError("box must contain the origin in its interior")

    @property
    def scales(self) -> np.ndarray:
        return np.maximum(-self.lo, self.hi)

    def expanded(self, factor: float) -> "Box":
        width = self.hi - self.lo
        return Box(self.variables, self.lo - factor * width, self.hi + factor * width)

    def generators(self, scales: np.ndarray | None = None) -> list[Polynomial]:
        s = np.ones(len(self.variables)) if scales is None else scales
        gens = []
        for k, name in enumerate(self.variables):
            x = Polynomial.var(name, self.variables)
            gens.append((self.hi[k] / s[k] - x) * (x - self.lo[k] / s[k]))
        return gens

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(n, len(self.variables)))

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=-1)

    def to_json(self) -> dict:
        return {"variables": list(self.variables), "lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "Box":
        return cls(tuple(d["variables"]), d["lo"], d["hi"])


def rescale(p: Polynomial, variables: Sequence[str], scales: Sequence[float]) -> Polynomial:
    """``p(x_k -> s_k x_k)``."""
    variables = tuple(variables)
    return p.subs({k: Polynomial.var(k, variables) * float(s)
                   for k, s in zip(variables, scales)}).with_variables(variables)


@dataclass
class BarrierCertificate:
    inverter: int
    B: Polynomial
    box: Box
    unsafe: UnsafeSet
    c: float = 0.0
    kappa: float = 1.0
    angle_box: float = 0.0
    verification: dict = field(default_factory=dict)

    def __post_init__(self):
        self.B = self.B.with_variables(self.box.variables)
        self._grad = None

    @property
    def variables(self) -> tuple[str, ...]:
        return self.box.variables

    def normalized(self) -> "BarrierCertificate":
        b0 = self.B.constant_term()
        if b0 <= 0:
            raise ValueError("B(0) must be positive to normalize")
        return BarrierCertificate(self.inverter, self.B.scale(1.0 / b0), self.box, self.unsafe,
                                  self.c, self.kappa, self.angle_box, dict(self.verification))

    @property
    def gradient(self) -> list[Polynomial]:
        if self._grad is None:
            self._grad = self.B.gradient(self.variables)
        return self._grad

    def value(self, pts: np.ndarray) -> np.ndarray:
        return poly_eval(self.B, np.atleast_2d(pts))

    def grad_value(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.stack([poly_eval(g, pts) for g in self.gradient], axis=-1)

    def to_json(self) -> dict:
        return {
            "inverter": self.inverter,
            "B": self.B.to_string(),
            "variables": list(self.variables),
            "c": self.c,
            "kappa": self.kappa,
            "angle_box": self.angle_box,
            "box": self.box.to_json(),
            "unsafe": self.unsafe.to_json(),
            "verification": self.verification,
        }

    @classmethod
    def from_json(cls, d: dict) -> "BarrierCertificate":
        variables = tuple(d["variables"])
        B = Polynomial.parse(d["B"]).with_variables(variables)
        unsafe = UnsafeSet([Polynomial.parse(w) for w in d["unsafe"]])
        return cls(int(d["inverter"]), B, Box.from_json(d["box"]), unsafe, float(d["c"]),
                   float(d["kappa"]), float(d.get("angle_box", 0.0)), d.get("verification", {}))


# --- isolated synthesis ------------------------------------------------------

def isolated_conditions(f: Sequence[Polynomial], variables: Sequence[str], unsafe: UnsafeSet,
                        box: Box, kappa: float, eps: float = EPS_UNSAFE,
                        outer: Box | None = None, inner: float = 0.0) -> list[Condition]:
    """Positivity conditions on a template ``B`` in box-normalized coordinates."""
    variables = tuple(variables)
    s = box.scales
    outer = outer or box.expanded(0.5)
    outer_gens = outer.generators(s)
    fxi = [rescale(p.with_variables(variables), variables, s).scale(1.0 / sk)
           for p, sk in zip(f, s)]
    conds = []
    for j, w in enumerate(unsafe.polys):
        wxi = rescale(w.with_variables(variables), variables, s)
        conds.append(Condition(f"unsafe{j}", lambda B: -B,
                               SemialgebraicSet([wxi] + outer_gens), slack=eps))
    for k, name in enumerate(variables):
        x = Polynomial.var(name, variables)
        for side, gen in (("hi", x - box.hi[k] / s[k]), ("lo", box.lo[k] / s[k] - x)):
            conds.append(Condition(f"face_{name}_{side}", lambda B: -B,
                                   SemialgebraicSet([gen] + outer_gens), slack=eps))
    if inner > 0:
        inner_gens = Box(variables, box.lo * inner, box.hi * inner).generators(s)
        conds.append(Condition("inner", lambda B: B, SemialgebraicSet(inner_gens)))
    conds.append(Condition("decrease", lambda B, fxi=fxi: lie_derivative(B, fxi, variables)
                           + B * kappa, SemialgebraicSet(box.generators(s))))
    return conds


def synth_isolated(f: Sequence[Polynomial], variables: Sequence[str], unsafe: UnsafeSet,
                   box: Box, degree: int = 4, kappa: float = 1.0, c: float = 0.0,
                   inverter: int = 0, eps: float = EPS_UNSAFE, rounds: int = 20,
                   margin_cap: float = 1e-3, inner: float | None = None, bisect: int = 6,
                   opts: sdp.SdpOptions | None = None) -> BarrierCertificate:
    """Barrier for the isolated subsystem ``x' = f(x)`` with ``B(0) = 1``.

    ``inner`` requires ``B >= 0`` on that fraction of the operating box, which
    keeps the certified domain from collapsing toward the origin.  With
    ``inner=None`` the largest feasible fraction is found by bisection.
    """
    variables = tuple(variables)
    unsafe.check_origin(variables)
    for p in f:
        if abs(p.with_variables(variables).constant_term()) > 1e-12:
            raise ValueError("origin is not an equilibrium of the isolated dynamics")
    zero = (0,) * len(variables)
    template = Template(variables, MonomialBasis(variables, degree).monomials, {zero: 1.0})

    def attempt(frac):
        conds = isolated_conditions(f, variables, unsafe, box, kappa, eps, inner=frac)
        return alternation_synthesize(template, conds, rounds=rounds, margin_cap=margin_cap,
                                      opts=opts)

    if inner is not None:
        res, frac = attempt(inner), inner
    else:
        res, frac = attempt(0.0), 0.0
        lo, hi = 0.0, 1.0
        for _ in range(bisect):
            mid = 0.5 * (lo + hi)
            try:
                res, frac = attempt(mid), mid
                lo = mid
            except NotFound:
                hi = mid
    B = rescale(res.polynomial, variables, 1.0 / box.scales)
    record = {
        "method": "sos",
        "margin": res.margin,
        "inner_fraction": frac,
        "conditions": {name: {"min_eig": cert.min_eig(),
                              "reconstruction_error": cert.reconstruction_error()}
                       for name, cert in res.certificates.items()},
        "log": [[e.round, e.step, e.status, e.margin] for e in res.log],
    }
    return BarrierCertificate(inverter, B, box, unsafe, c, kappa, 0.0, {"isolated": record})


# --- level-set sampling --------------------------------------------------------

def trace_level_set(cert: BarrierCertificate, level: float, directions: np.ndarray,
                    n_grid: int = 256, n_bisect: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """First crossing of ``B = level`` along rays from the origin.

    ``directions`` are unit vectors in box-normalized coordinates.  Returns the
    boundary points (physical coordinates) and a mask of rays that crossed
    before leaving the operating box.
    """
    s = cert.box.scales
    d = directions * s
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hi = np.where(d > 0, cert.box.hi / d, np.where(d < 0, cert.box.lo / d, np.inf))
    rmax = np.min(t_hi, axis=1)
    ts = np.linspace(0.0, 1.0, n_grid)
    vals = np.empty((len(d), n_grid))
    for k, t in enumerate(ts):
        vals[:, k] = cert.value(d * (t * rmax)[:, None])
    below = vals < level
    found = below.any(axis=1)
    first = np.where(found, below.argmax(axis=1), n_grid - 1)
    lo = ts[np.maximum(first - 1, 0)] * rmax
    hi = ts[first] * rmax
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        m = cert.value(d * mid[:, None]) >= level
        lo = np.where(m, mid, lo)
        hi = np.where(m, hi, mid)
    r = 0.5 * (lo + hi)
    return d * r[:, None], found


def random_directions(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    z = rng.standard_normal((n, dim))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def sample_level_set(cert: BarrierCertificate, level: float, rng: np.random.Generator,
                     n: int = 1, box: Box | None = None, max_draws: int = 10 ** 7,
                     min_rate: float = 1e-4) -> tuple[np.ndarray, float]:
    """Rejection samples of ``{B >= level}`` inside the operating box."""
    box = box or cert.box
    out, drawn, kept = [], 0, 0
    batch = max(4 * n, 1024)
    while kept < n:
        pts = box.sample(rng, batch)
        drawn += batch
        ok = pts[cert.value(pts) >= level]
        out.append(ok)
        kept += len(ok)
        rate = kept / drawn
        if drawn >= 10 * batch and rate < min_rate:
            raise ValueError(f"acceptance rate {rate:.2e} too low; enlarge or shift the box")
        if drawn > max_draws:
            raise ValueError("level-set sampling exceeded the draw budget")
    pts = np.concatenate(out)[:n]
    return pts, kept / drawn


def level_set_range(cert: BarrierCertificate, level: float, rng: np.random.Generator,
                    n: int = 20000) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned hull of ``{B >= level}`` estimated from samples and traced boundary points."""
    inside, _ = sample_level_set(cert, level, rng, n)
    dirs = random_directions(rng, n, len(cert.variables))
    edge, found = trace_level_set(cert, level, dirs)
    pts = np.vstack([inside, edge[found]])
    return pts.min(axis=0), pts.max(axis=0)


# --- exact Lie derivative with worst-case neighbors ---------------------------

@dataclass
class NeighborModel:
    """Neighbor disturbance set for one inverter: angle box and voltage ranges."""

    angle_box: float
    v_lo: dict[int, float]
    v_hi: dict[int, float]


def _min_trig(a, b, center, half):
    """min of a cos(psi) + b sin(psi) over psi in [center - half, center + half]."""
    amp = np.hypot(a, b)
    phi = np.arctan2(b, a)  # a cos + b sin = amp cos(psi - phi)
    lo, hi = center - half, center + half
    # psi where cos(psi - phi) = -1
    k = np.ceil((lo - phi - np.pi) / (2 * np.pi))
    inside = phi + np.pi + 2 * np.pi * k <= hi
    ends = np.minimum(a * np.cos(lo) + b * np.sin(lo), a * np.cos(hi) + b * np.sin(hi))
    return np.where(inside, -amp, ends)


def drift_terms(dec: Decomposition, i: int, pts: np.ndarray, theta_i: np.ndarray,
                grad: np.ndarray, nb: NeighborModel, worst: bool = True):
    """Lie derivative of B along the uncontrolled exact dynamics, minimized (or
    maximized) over the neighbor set; ``pts`` columns are (w, v)."""
    prm = dec.params[i]
    w, v = pts[:, 0], pts[:, 1]
    Vi = dec.V0[i] + v
    cw = -grad[:, 0] * prm.lambda_p / prm.tau
    cv = -grad[:, 1] * prm.lambda_q / prm.tau
    Pself = Vi * Vi * dec.G[i, i]
    Qself = -Vi * Vi * dec.B[i, i]
    base = (grad[:, 0] * (-w + prm.lambda_p * prm.P0) / prm.tau
            + grad[:, 1] * (-v + prm.lambda_q * prm.Q0) / prm.tau
            + cw * Pself + cv * Qself)
    sign = 1.0 if worst else -1.0
    total = base.copy()
    for k in dec.neighbors[i]:
        G, B = dec.G[i, k], dec.B[i, k]
        if abs(G) + abs(B) <= 1e-12:
            continue
        # term = Vi*Vk*[cw (G cos + B sin) + cv (G sin - B cos)] at psi = delta_ik + th_i - th_k
        a = (cw * G - cv * B) * Vi
        b = (cw * B + cv * G) * Vi
        center = dec.delta[i] - dec.delta[k] + theta_i
        half = nb.angle_box if k != 0 else 0.0
        m = sign * _min_trig(sign * a, sign * b, center, half)
        Vlo, Vhi = dec.V0[k] + nb.v_lo[k], dec.V0[k] + nb.v_hi[k]
        total += np.minimum(m * Vlo, m * Vhi) if worst else np.maximum(m * Vlo, m * Vhi)
    return total


def lie_derivative_worst(dec: Decomposition, cert: BarrierCertificate, pts: np.ndarray,
                         u: np.ndarray, nb: NeighborModel, theta_samples: np.ndarray):
    """Worst-case exact Ḃ at (w, v) points under input ``u`` over the angle samples."""
    grad = cert.grad_value(pts)
    g = dec.params[cert.inverter].input_matrix
    ctrl = np.einsum("nk,kj,nj->n", grad, g, u)
    out = np.full(len(pts), np.inf)
    for th in theta_samples:
        out = np.minimum(out, drift_terms(dec, cert.inverter, pts, np.full(len(pts), th), grad, nb))
    return out + ctrl


def theta_grid(dec: Decomposition, i: int, angle_box: float, n: int = 9) -> np.ndarray:
    if i == 0 or angle_box == 0:
        return np.zeros(1)
    return np.linspace(-angle_box, angle_box, n)


# --- policies ------------------------------------------------------------------

@dataclass
class Policy:
    """State feedback ``u*(x)``; rows of ``polys`` are the (u_p, u_q) channels."""

    polys: list[Polynomial]
    variables: tuple[str, ...]
    ubar: float
    kind: str = "sos"
    beta: float = 0.0

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.stack([poly_eval(p.with_variables(self.variables), pts) for p in self.polys],
                        axis=-1)

    @classmethod
    def zero(cls, variables: Sequence[str]) -> "Policy":
        z = Polynomial.constant(0.0, variables)
        return cls([z, z], tuple(variables), 0.0, "zero")

    def to_json(self) -> dict:
        return {"polys": [p.to_string() for p in self.polys], "variables": list(self.variables),
                "ubar": self.ubar, "kind": self.kind, "beta": self.beta}

    @classmethod
    def from_json(cls, d: dict) -> "Policy":
        variables = tuple(d["variables"])
        polys = [Polynomial.parse(p).with_variables(variables) for p in d["polys"]]
        return cls(polys, variables, float(d["ubar"]), d.get("kind", "sos"), float(d.get("beta", 0)))


def neighbor_model(certs: Sequence[BarrierCertificate], dec: Decomposition, i: int,
                   angle_box: float, rng: np.random.Generator,
                   levels: Sequence[float] | None = None, n: int = 20000) -> NeighborModel:
    lo, hi = {}, {}
    for k in dec.neighbors[i]:
        ck = certs[k]
        lvl = ck.c if levels is None else levels[k]
        a, b = level_set_range(ck, lvl, rng, n)
        vidx = ck.variables.index(f"v{k}")
        lo[k], hi[k] = float(a[vidx]), float(b[vidx])
    return NeighborModel(angle_box, lo, hi)


def disturbance_bounds(dec: Decomposition, cert: BarrierCertificate, nb: NeighborModel,
                       rng: np.random.Generator, n: int = 4000, inflate: float = 1.1
                       ) -> tuple[float, float]:
    """Bounds on |P_i - P_i^iso| and |Q_i - Q_i^iso| over D_i[c], angle box and neighbors."""
    i = cert.inverter
    pts, _ = sample_level_set(cert, cert.c, rng, n)
    dirs = random_directions(rng, n, 2)
    edge, found = trace_level_set(cert, cert.c, dirs)
    pts = np.vstack([pts, edge[found]])
    n_pts = len(pts)
    dP, dQ = 0.0, 0.0
    for th in theta_grid(dec, i, nb.angle_box, 9):
        for sgn_p in (1.0, -1.0):
            for grad in (np.array([sgn_p, 0.0]), np.array([0.0, sgn_p])):
                gmat = np.tile(grad, (n_pts, 1))
                # drift with unit "gradient" isolates -lambda/tau * P (or Q)
                prm = dec.params[i]
                full = drift_terms(dec, i, pts, np.full(n_pts, th), gmat, nb, worst=True)
                iso = drift_terms(dec, i, pts, np.zeros(n_pts), gmat,
                                  NeighborModel(0.0, {k: 0.0 for k in nb.v_lo},
                                                {k: 0.0 for k in nb.v_hi}), worst=True)
                diff = np.max(np.abs(full - iso))
                if grad[0] != 0:
                    dP = max(dP, diff * prm.tau / prm.lambda_p)
                else:
                    dQ = max(dQ, diff * prm.tau / prm.lambda_q)
    return inflate * dP, inflate * dQ


def synth_policy(cert: BarrierCertificate, dec: Decomposition, nb: NeighborModel,
                 rng: np.random.Generator, degree: int = 1, fallback: bool = True,
                 opts: sdp.SdpOptions | None = None, n_check: int = 20000) -> Policy:
    """Reference policy keeping ``D_i[c]`` invariant with minimal sup-norm."""
    if len(cert.variables) != 2:
        raise PolicyHypothesisError(
            "full-state certificates have boundary points where the gradient is orthogonal "
            "to the input directions", np.zeros(len(cert.variables)))
    i = cert.inverter
    g = dec.params[i].input_matrix
    dirs = random_directions(rng, n_check, 2)
    edge, found = trace_level_set(cert, cert.c, dirs)
    edge = edge[found]
    gB = cert.grad_value(edge) @ g
    gnorm = np.linalg.norm(gB, axis=1)
    if np.min(gnorm) <= 1e-9:
        k = int(np.argmin(gnorm))
        raise PolicyHypothesisError("input gradient vanishes on the boundary", edge[k])
    thetas = theta_grid(dec, i, nb.angle_box)
    zero_u = np.zeros((len(edge), 2))
    worst = lie_derivative_worst(dec, cert, edge, zero_u, nb, thetas)
    if np.min(worst) >= 0:
        return Policy.zero(cert.variables)
    try:
        pol = _sos_policy(cert, dec, nb, rng, degree, opts)
        check = lie_derivative_worst(dec, cert, edge, pol(edge), nb, thetas)
        if np.min(check) >= 0:
            return pol
        log.info("SOS policy failed the exact check (min %.3g)", np.min(check))
    except (NotFound, ValueError) as exc:
        log.info("SOS policy search failed: %s", exc)
        if not fallback:
            raise
    if not fallback:
        raise NotFound("SOS policy failed the exact-dynamics check")
    return gradient_policy(cert, dec, nb, rng, n_check)


def gradient_policy(cert: BarrierCertificate, dec: Decomposition, nb: NeighborModel,
                    rng: np.random.Generator, n: int = 20000, safety: float = 1.1) -> Policy:
    """Closed-form ``u = beta g^T grad B`` with beta from the sampled max-ratio bound."""
    i = cert.inverter
    g = dec.params[i].input_matrix
    dirs = random_directions(rng, n, 2)
    edge, found = trace_level_set(cert, cert.c, dirs)
    edge = edge[found]
    grad = cert.grad_value(edge)
    gB2 = np.sum((grad @ g) ** 2, axis=1)
    thetas = theta_grid(dec, i, nb.angle_box)
    lo = np.full(len(edge), np.inf)
    hi = np.full(len(edge), -np.inf)
    for th in thetas:
        tt = np.full(len(edge), th)
        lo = np.minimum(lo, drift_terms(dec, i, edge, tt, grad, nb, worst=True))
        hi = np.maximum(hi, drift_terms(dec, i, edge, tt, grad, nb, worst=False))
    ratio = np.maximum(np.abs(lo), np.abs(hi)) / gB2
    beta = safety * float(np.max(ratio))
    polys = [sum((gr * (beta * g[r, ch]) for r, gr in enumerate(cert.gradient)),
                 Polynomial.constant(0.0, cert.variables)) for ch in range(2)]
    pol = Policy(polys, cert.variables, 0.0, "gradient", beta)
    inside, _ = sample_level_set(cert, cert.c, rng, n)
    pol.ubar = float(np.max(np.abs(pol(np.vstack([inside, edge])))))
    return pol


def _sos_policy(cert, dec, nb, rng, degree, opts) -> Policy:
    i = cert.inverter
    variables = cert.variables
    s = cert.box.scales
    names, f, g = dec.substate(i)
    if tuple(names) != variables:
        raise ValueError("certificate variables do not match the inverter sub-state")
    dP, dQ = disturbance_bounds(dec, cert, nb, rng)
    Bxi = rescale(cert.B, variables, s)
    fxi = [rescale(p, variables, s).scale(1.0 / sk) for p, sk in zip(f, s)]
    gxi = g / s[:, None]
    box_gens = cert.box.generators(s)
    prog = SOSProgram(variables)
    u = [prog.new_free_poly(degree) for _ in range(2)]
    ubar = prog.new_var("ubar")
    grad = Bxi.gradient(variables)
    drift = lie_derivative(Bxi, fxi, variables)
    level = Bxi - cert.c
    D = even_up(max(drift.degree, Bxi.degree - 1 + degree))
    for sp in (1.0, -1.0):
        for sq in (1.0, -1.0):
            dist = (grad[0] * (-gxi[0, 0] * dP * sp) + grad[1] * (-gxi[1, 1] * dQ * sq))
            expr = drift + dist
            for ch in range(2):
                for r in range(2):
                    if gxi[r, ch] != 0:
                        expr = expr + u[ch] * (grad[r] * gxi[r, ch])
            expr = expr - prog.new_free_poly(D - level.degree) * level
            for gen in box_gens:
                sig, _ = prog.new_sos_poly(multiplier_degree(D, gen.degree, D))
                expr = expr - sig * gen
            prog.add_sos(expr)
    for ch in range(2):
        for sign in (1.0, -1.0):
            expr = prog.var_poly(ubar) - u[ch] * sign
            for gen in [level] + box_gens:
                sig, _ = prog.new_sos_poly(multiplier_degree(even_up(degree), gen.degree, 4))
                expr = expr - sig * gen
            prog.add_sos(expr)
    prog.minimize({ubar: 1.0})
    res = prog.solve(opts=opts)
    if res.status not in sdp.SOLVED:
        raise NotFound(f"policy program {res.status}")
    polys = [rescale(res.value(p), variables, 1.0 / s) for p in u]
    return Policy(polys, variables, float(res.y[ubar]), "sos")


# --- distributed verification -------------------------------------------------

@dataclass
class VerificationReport:
    inverter: int
    passed: bool
    margin: float
    worst_point: list[float]
    n_boundary: int
    method: str = "sampling"
    note: str = ""

    def to_json(self) -> dict:
        return {"inverter": self.inverter, "passed": self.passed, "margin": self.margin,
                "worst_point": self.worst_point, "n_boundary": self.n_boundary,
                "method": self.method, "note": self.note}


def verify_distributed(certs: Sequence[BarrierCertificate], dec: Decomposition,
                       policies: Sequence[Policy | None], angle_box: float,
                       rng: np.random.Generator, n: int = 100000, tol: float = 1e-6,
                       levels: Sequence[float] | None = None,
                       coupling_scale: float = 1.0) -> list[VerificationReport]:
    """Sampling check of the level-set condition under worst-case neighbors.

    Boundary points come from ray tracing; neighbor voltages range over the
    hull of ``D_j[c_j]`` and neighbor angles over the angle box, minimized in
    closed form for each sampled own angle.
    """
    reports = []
    for cert, pol in zip(certs, policies):
        i = cert.inverter
        nb = neighbor_model(certs, dec, i, angle_box, rng, levels)
        if coupling_scale != 1.0:
            dec_i = _scaled_coupling(dec, coupling_scale)
        else:
            dec_i = dec
        dirs = random_directions(rng, n, len(cert.variables))
        edge, found = trace_level_set(cert, cert.c, dirs)
        edge = edge[found]
        u = pol(edge) if pol is not None else np.zeros((len(edge), 2))
        worst = lie_derivative_worst(dec_i, cert, edge, u, nb, theta_grid(dec, i, angle_box))
        k = int(np.argmin(worst))
        margin = float(worst[k])
        note = "neighbors restricted to the operating box"
        if not found.all():
            note += f"; {int((~found).sum())} rays left the box before crossing"
        reports.append(VerificationReport(i, bool(margin >= -tol and found.all()), margin,
                                          edge[k].tolist(), len(edge), "sampling", note))
    return reports


def _scaled_coupling(dec: Decomposition, scale: float) -> Decomposition:
    G = dec.G.copy()
    B = dec.B.copy()
    off = ~np.eye(dec.n, dtype=bool)
    G[off] *= scale
    B[off] *= scale
    return replace(dec, G=G, B=B)


def check_unsafe(cert: BarrierCertificate, rng: np.random.Generator, n: int = 100000,
                 outer: Box | None = None) -> tuple[bool, float]:
    """Uniform samples of the unsafe set inside the certified outer box; returns
    (all negative, max B)."""
    outer = outer or cert.box.expanded(0.5)
    got = []
    total = 0
    while total < n:
        pts = outer.sample(rng, 4 * n)
        pts = pts[cert.unsafe.contains(pts, cert.variables)]
        got.append(pts)
        total += len(pts)
    pts = np.concatenate(got)[:n]
    vals = cert.value(pts)
    return bool(np.all(vals < 0)), float(np.max(vals))


def dumps(obj: dict) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)
