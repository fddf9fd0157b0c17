"""State-dependent admissible input intervals and the clamping filter.

Per channel ``k`` the admissible set is ``{u : (a_k - u)(b_k - u) <= R(x)}`` with
``a = u*(x)``, ``b = u*(x) + beta_max g^T grad B(x)`` and
``R(x) = gamma log((1 - c) / (1 - B(x)))``.  Its root interval is closed form.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .barrier import BarrierCertificate, Policy, sample_level_set
from .kernels import filter_interval
from .kernels._pykernels import SLOT_B, SLOT_DV, SLOT_DW, SLOT_UP, SLOT_UQ

log = logging.getLogger(__name__)

DEEP_TOL = 1e-9


def interval(a, b, R):
    """Root interval of ``(a - u)(b - u) <= R`` for ``R >= 0`` (vectorized)."""
    return filter_interval(a, b, R)


def sector_value(a, b, u):
    return (np.asarray(a) - u) * (np.asarray(b) - u)


@dataclass
class Bounds:
    u_alpha: np.ndarray
    u_theta: np.ndarray
    R: np.ndarray
    lo: np.ndarray  # after actuator limits
    hi: np.ndarray
    no_guarantee: np.ndarray
    capped: np.ndarray
    infeasible: np.ndarray


@dataclass
class FilterDecision:
    requested: np.ndarray
    admitted: np.ndarray
    u_alpha: np.ndarray
    u_theta: np.ndarray
    R: float
    active: bool
    infeasible: bool = False
    no_guarantee: bool = False


@dataclass
class SafetyFilter:
    cert: BarrierCertificate
    policy: Policy
    g: np.ndarray  # input gains into (w, v)
    beta_max: float = 1.0
    gamma: float = 100.0
    r_max: float | None = None
    ulim: np.ndarray = field(default_factory=lambda: np.full(2, np.inf))

    def __post_init__(self):
        if self.beta_max < 0 or self.gamma < 0:
            raise ValueError("beta_max and gamma must be non-negative")
        self.g = np.asarray(self.g, dtype=float)
        self.ulim = np.asarray(self.ulim, dtype=float)
        self.diagnostics = {"above_one": 0}

    @property
    def R_max(self) -> float:
        return 1e3 * self.gamma if self.r_max is None else self.r_max

    def gB(self, pts: np.ndarray) -> np.ndarray:
        """``g^T grad B`` per channel."""
        return self.cert.grad_value(pts) * self.g

    def relaxation(self, Bv: np.ndarray):
        c = self.cert.c
        Bv = np.asarray(Bv, dtype=float)
        deep = Bv >= 1.0 - DEEP_TOL
        outside = Bv < c
        with np.errstate(divide="ignore", invalid="ignore"):
            R = self.gamma * np.log((1.0 - c) / (1.0 - np.where(deep | outside, 0.5, Bv)))
        R = np.where(deep, self.R_max, np.minimum(R, self.R_max))
        R = np.where(outside, 0.0, R)
        if self.gamma == 0:
            R = np.zeros_like(R)
        self.diagnostics["above_one"] += int(np.sum(Bv > 1.0))
        return R, outside, deep

    def bounds(self, x) -> Bounds:
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        Bv = self.cert.value(pts)
        R, outside, deep = self.relaxation(Bv)
        a = self.policy(pts)
        b = a + self.beta_max * self.gB(pts)
        ua, ut = interval(a, b, R[:, None])
        L = self.ulim
        lo, hi = np.maximum(ua, -L), np.minimum(ut, L)
        empty = lo > hi
        near = np.where(ut < -L, ut, ua)
        lo = np.where(empty, near, lo)
        hi = np.where(empty, near, hi)
        if np.any(outside):
            log.warning("state outside the certified domain: no guarantee")
        return Bounds(ua, ut, R, lo, hi, outside, deep, empty.any(axis=1))

    def admissible_value(self, x, u) -> np.ndarray:
        """``U(x, u) - R(x)`` per channel (non-positive means admissible)."""
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        a = self.policy(pts)
        b = a + self.beta_max * self.gB(pts)
        R, _, _ = self.relaxation(self.cert.value(pts))
        return sector_value(a, b, np.atleast_2d(u)) - R[:, None]

    def admit(self, x, requested) -> FilterDecision:
        req = np.asarray(requested, dtype=float)
        bd = self.bounds(np.asarray(x, dtype=float)[None, :])
        adm = np.clip(req, bd.lo[0], bd.hi[0])
        active = bool(np.any(adm != req))
        return FilterDecision(req, adm, bd.u_alpha[0], bd.u_theta[0], float(bd.R[0]), active,
                              bool(bd.infeasible[0]), bool(bd.no_guarantee[0]))

    def safe_zero_region(self, channel: int, grid: np.ndarray) -> np.ndarray:
        """Whether ``u_channel = 0`` is admissible at each grid point (other channel free)."""
        bd = self.bounds(grid)
        return (bd.u_alpha[:, channel] <= 0.0) & (bd.u_theta[:, channel] >= 0.0)

    def pack(self, tmax: int) -> tuple[np.ndarray, np.ndarray]:
        """Exponent/coefficient tables for the compiled simulation loop."""
        grad = self.cert.gradient
        polys = {SLOT_B: self.cert.B, SLOT_DW: grad[0], SLOT_DV: grad[1],
                 SLOT_UP: self.policy.polys[0].with_variables(self.cert.variables),
                 SLOT_UQ: self.policy.polys[1].with_variables(self.cert.variables)}
        exps = np.zeros((5, tmax, 2), dtype=np.int64)
        coefs = np.zeros((5, tmax))
        for slot, p in polys.items():
            e, c = p.arrays()
            if len(c) > tmax:
                raise ValueError("polynomial has more terms than the packing width")
            exps[slot, :len(c)] = e
            coefs[slot, :len(c)] = c
        return exps, coefs


def pack_filters(filters: Sequence[SafetyFilter]):
    """Tuple layout consumed by :func:`droopsafe.kernels.simulate`."""
    tmax = 1
    for f in filters:
        tmax = max(tmax, len(f.cert.B), len(f.policy.polys[0]), len(f.policy.polys[1]))
    packed = [f.pack(tmax) for f in filters]
    exps = np.stack([p[0] for p in packed])
    coefs = np.stack([p[1] for p in packed])
    return (exps, coefs,
            np.array([f.beta_max for f in filters]),
            np.array([f.gamma for f in filters]),
            np.array([f.cert.c for f in filters]),
            np.array([f.R_max for f in filters]),
            np.stack([np.minimum(f.ulim, 1e300) for f in filters]),
            np.stack([f.g for f in filters]))


def compute_beta_max(cert: BarrierCertificate, policy: Policy, g: np.ndarray, ulim,
                     rng: np.random.Generator, n: int = 10000, beta_hi: float = 1e3,
                     iters: int = 60) -> float:
    """Largest beta with ``max ||u* + beta g^T grad B||_inf <= limit`` over samples of D[c]."""
    pts, _ = sample_level_set(cert, cert.c, rng, n)
    a = policy(pts)
    gb = cert.grad_value(pts) * np.asarray(g, dtype=float)
    L = np.asarray(ulim, dtype=float)

    def ok(beta):
        return bool(np.all(np.abs(a + beta * gb) <= L))

    if not ok(0.0):
        return 0.0
    if ok(beta_hi):
        return beta_hi
    lo, hi = 0.0, beta_hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


def decisions_csv(times, states, decisions: Sequence[FilterDecision]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "w", "v", "req_p", "req_q", "adm_p", "adm_q", "ua_p", "ua_q",
                "ut_p", "ut_q", "R", "active"])
    for t, x, d in zip(times, states, decisions):
        w.writerow([repr(float(t)), *map(repr, map(float, x)), *map(repr, map(float, d.requested)),
                    *map(repr, map(float, d.admitted)), *map(repr, map(float, d.u_alpha)),
                    *map(repr, map(float, d.u_theta)), repr(d.R), int(d.active)])
    return buf.getvalue()
