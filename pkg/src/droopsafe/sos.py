"""Sum-of-squares encodings on top of :mod:`droopsafe.sdp`.

Positivity of ``p`` on ``{x : k_j(x) >= 0}`` is certified by finding SOS
multipliers with ``p - sum_j sigma_j k_j = sigma_0``; every SOS polynomial is
represented by a positive-semidefinite Gram matrix over a monomial basis and
the identity is imposed coefficient-wise.  The same machinery drives the
alternating search used to synthesize barrier templates.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import sdp
from .poly import Exponent, MonomialBasis, Polynomial, grlex_key

log = logging.getLogger(__name__)

CONST = -1


class SolverBreakdown(RuntimeError):
    """The SDP backend stopped without a usable answer (not the same as not-found)."""


class NotFound(Exception):
    """No certificate exists at the configured degrees (or within the round cap)."""

    def __init__(self, message: str, log_entries: list | None = None, round_index: int | None = None):
        super().__init__(message)
        self.log = log_entries or []
        self.round_index = round_index


def even_up(d: int) -> int:
    return d + (d % 2)


def even_down(d: int) -> int:
    return d - (d % 2)


class AffinePoly:
    """Polynomial in ``x`` whose coefficients are affine in decision variables.

    ``terms[exp][var]`` is the coefficient of decision variable ``var``
    (``CONST`` for the constant part) on monomial ``exp``.
    """

    __slots__ = ("variables", "terms")

    def __init__(self, variables: Sequence[str], terms=None):
        self.variables = tuple(variables)
        self.terms: dict[Exponent, dict[int, float]] = terms if terms is not None else {}

    @classmethod
    def from_poly(cls, p: Polynomial, variables: Sequence[str]) -> "AffinePoly":
        p = p.with_variables(variables)
        return cls(variables, {e: {CONST: c} for e, c in p.items()})

    def copy(self) -> "AffinePoly":
        return AffinePoly(self.variables, {e: dict(d) for e, d in self.terms.items()})

    def _lift(self, other) -> "AffinePoly":
        if isinstance(other, AffinePoly):
            if other.variables != self.variables:
                raise ValueError("affine polynomials over different variables")
            return other
        if isinstance(other, Polynomial):
            return AffinePoly.from_poly(other, self.variables)
        if isinstance(other, (int, float, np.floating)):
            return AffinePoly.from_poly(Polynomial.constant(float(other), self.variables),
                                        self.variables)
        return NotImplemented

    def __add__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        out = self.copy()
        for e, d in other.terms.items():
            tgt = out.terms.setdefault(e, {})
            for v, c in d.items():
                tgt[v] = tgt.get(v, 0.0) + c
        return out

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        return other + (-self)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating)):
            f = float(other)
            return AffinePoly(self.variables, {e: {v: c * f for v, c in d.items()}
                                               for e, d in self.terms.items()})
        if isinstance(other, Polynomial):
            q = other.with_variables(self.variables)
            out: dict[Exponent, dict[int, float]] = {}
            for eq, cq in q.items():
                for e, d in self.terms.items():
                    key = tuple(a + b for a, b in zip(e, eq))
                    tgt = out.setdefault(key, {})
                    for v, c in d.items():
                        tgt[v] = tgt.get(v, 0.0) + c * cq
            return AffinePoly(self.variables, out)
        return NotImplemented

    __rmul__ = __mul__

    def diff(self, name: str) -> "AffinePoly":
        k = self.variables.index(name)
        out = {}
        for e, d in self.terms.items():
            if e[k]:
                new = list(e)
                new[k] -= 1
                out[tuple(new)] = {v: c * e[k] for v, c in d.items()}
        return AffinePoly(self.variables, out)

    def is_zero(self) -> bool:
        return not any(c != 0.0 for d in self.terms.values() for c in d.values())

    def support(self) -> set[Exponent]:
        return {e for e, d in self.terms.items() if any(c != 0.0 for c in d.values())}

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.support()), default=-1)

    def decision_vars(self) -> set[int]:
        return {v for d in self.terms.values() for v in d if v != CONST}

    def value(self, y: np.ndarray) -> Polynomial:
        out = {}
        for e, d in self.terms.items():
            out[e] = sum(c * (1.0 if v == CONST else y[v]) for v, c in d.items())
        return Polynomial(out, self.variables)


@dataclass
class GramBlock:
    basis: MonomialBasis
    first_var: int
    block: int

    @property
    def size(self) -> int:
        return len(self.basis)

    def var_index(self, i: int, j: int) -> int:
        if i > j:
            i, j = j, i
        n = self.size
        return self.first_var + i * n - i * (i - 1) // 2 + (j - i)

    def matrix(self, y: np.ndarray) -> np.ndarray:
        n = self.size
        Q = np.zeros((n, n))
        for i in range(n):
            for j in range(i, n):
                Q[i, j] = Q[j, i] = y[self.var_index(i, j)]
        return Q

    def polynomial(self, y: np.ndarray) -> Polynomial:
        return gram_polynomial(self.matrix(y), self.basis)


def gram_polynomial(Q: np.ndarray, basis: MonomialBasis) -> Polynomial:
    out: dict[Exponent, float] = {}
    monos = basis.monomials
    for i, mi in enumerate(monos):
        for j, mj in enumerate(monos):
            e = tuple(a + b for a, b in zip(mi, mj))
            out[e] = out.get(e, 0.0) + Q[i, j]
    return Polynomial(out, basis.variables)


def newton_basis(support: set[Exponent], nvars: int, variables) -> MonomialBasis:
    """Half-degree basis for an SOS with the given support, pruned by diagonal consistency."""
    if not support:
        return MonomialBasis.from_monomials(variables, [])
    dmin = min(sum(e) for e in support)
    dmax = max(sum(e) for e in support)
    lo, hi = (dmin + 1) // 2, dmax // 2
    # per-variable bounds from the support also bound the half polytope
    maxexp = [max(e[k] for e in support) // 2 for k in range(nvars)]
    minexp = [(min(e[k] for e in support) + 1) // 2 for k in range(nvars)]
    cand = [m for m in MonomialBasis(variables, hi, lo).monomials
            if all(minexp[k] <= m[k] <= maxexp[k] for k in range(nvars))]
    changed = True
    while changed:
        changed = False
        sums: dict[Exponent, int] = {}
        for i, a in enumerate(cand):
            for b in cand[i + 1:]:
                e = tuple(x + y for x, y in zip(a, b))
                sums[e] = sums.get(e, 0) + 1
        keep = []
        for m in cand:
            dbl = tuple(2 * x for x in m)
            if dbl in support or sums.get(dbl, 0) > 0:
                keep.append(m)
            else:
                changed = True
        cand = keep
    return MonomialBasis.from_monomials(variables, cand)


@dataclass
class SOSResult:
    status: str
    y: np.ndarray
    margin: float
    sdp: sdp.SdpSolution
    program: "SOSProgram"

    def value(self, expr) -> Polynomial:
        if isinstance(expr, AffinePoly):
            return expr.value(self.y)
        return expr

    def gram(self, handle: GramBlock) -> np.ndarray:
        return handle.matrix(self.y)


class SOSProgram:
    """Incremental builder for SOS feasibility / optimization problems."""

    def __init__(self, variables: Sequence[str]):
        self.variables = tuple(variables)
        self.nvars = 0
        self.grams: list[GramBlock] = []
        self._identities: list[tuple[AffinePoly, GramBlock | None]] = []
        self._lin_eqs: list[tuple[dict[int, float], float]] = []
        self.objective: dict[int, float] = {}
        self._names: dict[int, str] = {}

    # variables ------------------------------------------------------------
    def new_var(self, name: str | None = None) -> int:
        k = self.nvars
        self.nvars += 1
        if name:
            self._names[k] = name
        return k

    def new_vars(self, n: int) -> list[int]:
        return [self.new_var() for _ in range(n)]

    def var_poly(self, k: int) -> AffinePoly:
        return AffinePoly(self.variables, {(0,) * len(self.variables): {k: 1.0}})

    def new_free_poly(self, degree: int, mindeg: int = 0,
                      variables: Sequence[str] | None = None) -> AffinePoly:
        sub = tuple(variables) if variables is not None else self.variables
        basis = MonomialBasis(sub, degree, mindeg)
        terms = {}
        for m in basis.monomials:
            e = tuple(m[sub.index(v)] if v in sub else 0 for v in self.variables)
            terms[e] = {self.new_var(): 1.0}
        return AffinePoly(self.variables, terms)

    def _new_gram(self, basis: MonomialBasis) -> GramBlock:
        n = len(basis)
        first = self.nvars
        self.nvars += n * (n + 1) // 2
        g = GramBlock(basis, first, len(self.grams))
        self.grams.append(g)
        return g

    def gram_affine(self, g: GramBlock) -> AffinePoly:
        terms: dict[Exponent, dict[int, float]] = {}
        monos = [tuple(m[g.basis.variables.index(v)] if v in g.basis.variables else 0
                       for v in self.variables) for m in g.basis.monomials]
        for i in range(g.size):
            for j in range(i, g.size):
                e = tuple(a + b for a, b in zip(monos[i], monos[j]))
                d = terms.setdefault(e, {})
                d[g.var_index(i, j)] = d.get(g.var_index(i, j), 0.0) + (1.0 if i == j else 2.0)
        return AffinePoly(self.variables, terms)

    def new_sos_poly(self, degree: int, variables: Sequence[str] | None = None,
                     mindeg: int = 0) -> tuple[AffinePoly, GramBlock]:
        sub = tuple(variables) if variables is not None else self.variables
        half = MonomialBasis(sub, degree // 2, (mindeg + 1) // 2)
        basis = MonomialBasis.from_monomials(
            self.variables,
            [tuple(m[sub.index(v)] if v in sub else 0 for v in self.variables)
             for m in half.monomials])
        g = self._new_gram(basis)
        return self.gram_affine(g), g

    # constraints ----------------------------------------------------------
    def add_sos(self, expr: AffinePoly | Polynomial) -> GramBlock:
        """Require ``expr`` to be SOS; returns the Gram block representing it."""
        if isinstance(expr, Polynomial):
            expr = AffinePoly.from_poly(expr, self.variables)
        basis = newton_basis(expr.support(), len(self.variables), self.variables)
        g = self._new_gram(basis)
        self._identities.append((expr, g))
        return g

    def add_zero(self, expr: AffinePoly | Polynomial) -> None:
        """Require ``expr`` to vanish identically."""
        if isinstance(expr, Polynomial):
            expr = AffinePoly.from_poly(expr, self.variables)
        self._identities.append((expr, None))

    def add_linear_eq(self, coeffs: dict[int, float], rhs: float) -> None:
        self._lin_eqs.append((dict(coeffs), float(rhs)))

    def minimize(self, coeffs: dict[int, float]) -> None:
        self.objective = dict(coeffs)

    # compilation ----------------------------------------------------------
    def compile(self, margin_cap: float | None = None) -> tuple[sdp.SdpProblem, int | None]:
        """Build the SDP; with ``margin_cap`` every Gram block is shifted by ``-t I``
        and ``t <= margin_cap`` is maximized (plus any user objective)."""
        nv = self.nvars + (1 if margin_cap is not None else 0)
        tvar = self.nvars if margin_cap is not None else None
        sizes = [g.size for g in self.grams if g.size > 0]
        blocks_map = {}
        for g in self.grams:
            if g.size > 0:
                blocks_map[g.block] = len(blocks_map)
        if tvar is not None:
            sizes.append(1)
        if not sizes:
            sizes = [1]
        prob = sdp.SdpProblem(sizes, nv)
        for g in self.grams:
            if g.size == 0:
                continue
            b = blocks_map[g.block]
            for i in range(g.size):
                for j in range(i, g.size):
                    prob.add_entry(g.var_index(i, j), b, i, j, 1.0)
            if tvar is not None:
                prob.add(tvar, b, -np.eye(g.size))
        if tvar is not None:
            prob.set_offset(len(sizes) - 1, [[margin_cap]])
            prob.add(tvar, len(sizes) - 1, [[-1.0]])
        rows, rhs = [], []
        for expr, g in self._identities:
            full = expr if g is None else expr - self.gram_affine(g)
            for e in sorted(full.terms, key=grlex_key):
                d = full.terms[e]
                row = {v: c for v, c in d.items() if v != CONST and c != 0.0}
                const = d.get(CONST, 0.0)
                if not row:
                    if abs(const) > 0.0:
                        # constant mismatch: keep as an inconsistent row
                        rows.append({})
                        rhs.append(-const)
                    continue
                rows.append(row)
                rhs.append(-const)
        for row, r in self._lin_eqs:
            rows.append(row)
            rhs.append(r)
        E = np.zeros((len(rows), nv))
        for k, row in enumerate(rows):
            for v, c in row.items():
                E[k, v] += c
        prob.set_equalities(E, rhs)
        c = np.zeros(nv)
        for v, w in self.objective.items():
            c[v] += w
        if tvar is not None:
            c[tvar] -= 1.0
        prob.objective = c
        return prob, tvar

    def solve(self, margin_cap: float | None = None,
              opts: sdp.SdpOptions | None = None) -> SOSResult:
        prob, tvar = self.compile(margin_cap)
        sol = sdp.solve(prob, opts)
        y = sol.y[: self.nvars] if len(sol.y) else np.zeros(self.nvars)
        margin = float(sol.y[tvar]) if (tvar is not None and len(sol.y)) else float("nan")
        return SOSResult(sol.status, y, margin, sol, self)


# --- Putinar certificates --------------------------------------------------

@dataclass
class SemialgebraicSet:
    """``{x : k_j(x) >= 0, e_i(x) = 0}``; empty generator lists mean the whole space."""

    inequalities: list[Polynomial] = field(default_factory=list)
    equalities: list[Polynomial] = field(default_factory=list)

    @classmethod
    def whole_space(cls) -> "SemialgebraicSet":
        return cls([], [])

    @property
    def is_whole_space(self) -> bool:
        return not self.inequalities and not self.equalities

    def generators(self) -> list[Polynomial]:
        """Inequality generators with each equality split into two inequalities."""
        gens = list(self.inequalities)
        for e in self.equalities:
            gens.extend([e, -e])
        return gens

    def contains(self, point, tol: float = 0.0) -> bool:
        return (all(k.evaluate(point) >= -tol for k in self.inequalities)
                and all(abs(e.evaluate(point)) <= tol for e in self.equalities))

    def variables(self) -> tuple[str, ...]:
        out: tuple[str, ...] = ()
        for k in self.inequalities + self.equalities:
            for v in k.variables:
                if v not in out:
                    out += (v,)
        return out


@dataclass
class SOSTerm:
    poly: Polynomial
    gram: np.ndarray
    basis: MonomialBasis

    def min_eig(self) -> float:
        return sdp.min_eig(self.gram) if self.gram.size else 0.0

    def to_json(self) -> dict:
        return {"poly": self.poly.to_string(), "basis": [list(m) for m in self.basis.monomials],
                "gram": self.gram.tolist(), "variables": list(self.basis.variables)}

    @classmethod
    def from_json(cls, d: dict) -> "SOSTerm":
        variables = tuple(d["variables"])
        basis = MonomialBasis.from_monomials(variables, [tuple(m) for m in d["basis"]])
        gram = np.array(d["gram"], dtype=float).reshape(len(basis), len(basis))
        return cls(Polynomial.parse(d["poly"], None if not d["poly"] or d["poly"] == "0"
                                    else None).with_variables(variables)
                   if d["poly"] != "0" else Polynomial({}, variables), gram, basis)


@dataclass
class PutinarCertificate:
    target: Polynomial
    generators: list[Polynomial]
    sigma0: SOSTerm
    sigmas: list[SOSTerm]
    degree_cap: int
    solver_status: str = sdp.OPTIMAL

    def residual(self) -> Polynomial:
        r = self.target - self.sigma0.poly
        for s, k in zip(self.sigmas, self.generators):
            r = r - s.poly * k
        return r

    def reconstruction_error(self) -> float:
        return self.residual().max_abs_coeff()

    def min_eig(self) -> float:
        vals = [self.sigma0.min_eig()] + [s.min_eig() for s in self.sigmas]
        return min(vals)

    def is_valid(self, eig_tol: float = 1e-8, coeff_tol: float = 1e-7) -> bool:
        return self.min_eig() >= -eig_tol and self.reconstruction_error() <= coeff_tol

    def to_json(self) -> dict:
        return {
            "target": self.target.to_string(),
            "variables": list(self.target.variables),
            "generators": [k.to_string() for k in self.generators],
            "sigma0": self.sigma0.to_json(),
            "sigmas": [s.to_json() for s in self.sigmas],
            "degree_cap": self.degree_cap,
            "min_eig": self.min_eig(),
            "reconstruction_error": self.reconstruction_error(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, d: dict) -> "PutinarCertificate":
        variables = tuple(d["variables"])

        def P(s):
            return Polynomial({}, variables) if s == "0" else Polynomial.parse(s).with_variables(variables)

        return cls(P(d["target"]), [P(k) for k in d["generators"]],
                   _term_from_json(d["sigma0"], variables),
                   [_term_from_json(s, variables) for s in d["sigmas"]], int(d["degree_cap"]))


def _term_from_json(d: dict, variables) -> SOSTerm:
    basis = MonomialBasis.from_monomials(variables, [tuple(m) for m in d["basis"]])
    gram = np.array(d["gram"], dtype=float).reshape(len(basis), len(basis))
    poly = gram_polynomial(gram, basis) if len(basis) else Polynomial({}, variables)
    return SOSTerm(poly, gram, basis)


def multiplier_degree(target_degree: int, gen_degree: int, cap: int) -> int:
    D = max(even_up(max(target_degree, 0)), cap)
    return max(even_down(min(cap, D - gen_degree)), 0)


def _variables_of(p: Polynomial, K: SemialgebraicSet) -> tuple[str, ...]:
    out = tuple(p.variables)
    for v in K.variables():
        if v not in out:
            out += (v,)
    return out


def prove_nonneg(p: Polynomial, K: SemialgebraicSet | None = None, deg: int | None = None,
                 opts: sdp.SdpOptions | None = None, slack: float = 0.0
                 ) -> PutinarCertificate | None:
    """Search for ``p - slack = sigma_0 + sum_j sigma_j k_j`` with SOS ``sigma``.

    Returns ``None`` when no certificate exists at this degree cap; raises
    :class:`SolverBreakdown` when the SDP backend fails to decide.
    """
    K = K or SemialgebraicSet.whole_space()
    if deg is None:
        deg = even_up(max(p.degree, 0))
    if deg < 0 or deg % 2:
        raise ValueError("multiplier degree cap must be even and non-negative")
    variables = _variables_of(p, K)
    prog = SOSProgram(variables)
    gens = [k.with_variables(variables) for k in K.generators()]
    target = p.with_variables(variables) - slack
    expr = AffinePoly.from_poly(target, variables)
    handles = []
    for k in gens:
        d = multiplier_degree(target.degree, k.degree, deg)
        s, g = prog.new_sos_poly(d)
        handles.append(g)
        expr = expr - s * k
    g0 = prog.add_sos(expr)
    res = prog.solve(opts=opts)
    return _certificate_from(res, target, gens, g0, handles, deg)


def _certificate_from(res: SOSResult, target, gens, g0, handles, deg) -> PutinarCertificate | None:
    status = res.status
    if status == sdp.INFEASIBLE:
        return None
    y = res.y
    sigmas = [SOSTerm(g.polynomial(y), g.matrix(y), g.basis) for g in handles]
    sigma0 = SOSTerm(g0.polynomial(y) if g0.size else Polynomial({}, target.variables),
                     g0.matrix(y), g0.basis)
    cert = PutinarCertificate(target, gens, sigma0, sigmas, deg, status)
    if status == sdp.OPTIMAL and cert.is_valid():
        return cert
    if cert.is_valid():
        log.info("accepting certificate from %s solve after independent check", status)
        return cert
    if status in sdp.SOLVED:
        # numerically feasible but the Gram margin is too thin to trust
        log.info("certificate rejected: min eig %.3g, recon %.3g",
                 cert.min_eig(), cert.reconstruction_error())
        return None
    raise SolverBreakdown(f"SDP backend returned {status}: {res.sdp.message}")


# --- alternating synthesis ---------------------------------------------------

PolyLike = "Polynomial | AffinePoly"


@dataclass
class Template:
    """Polynomial family ``sum_k a_k m_k`` with some coefficients pinned."""

    variables: tuple[str, ...]
    monomials: list[Exponent]
    fixed: dict[Exponent, float] = field(default_factory=dict)

    @classmethod
    def dense(cls, variables: Sequence[str], degree: int, fixed=None) -> "Template":
        variables = tuple(variables)
        return cls(variables, MonomialBasis(variables, degree).monomials, dict(fixed or {}))

    @property
    def free_monomials(self) -> list[Exponent]:
        return [m for m in self.monomials if m not in self.fixed]

    def instantiate(self, prog: SOSProgram) -> tuple[AffinePoly, list[int]]:
        idx = []
        terms: dict[Exponent, dict[int, float]] = {}
        for m in self.monomials:
            e = tuple(m[self.variables.index(v)] if v in self.variables else 0
                      for v in prog.variables)
            if m in self.fixed:
                terms[e] = {CONST: float(self.fixed[m])}
            else:
                k = prog.new_var()
                idx.append(k)
                terms[e] = {k: 1.0}
        return AffinePoly(prog.variables, terms), idx

    def polynomial(self, params: Sequence[float]) -> Polynomial:
        params = list(params)
        terms = {}
        it = iter(params)
        for m in self.monomials:
            terms[m] = self.fixed[m] if m in self.fixed else next(it)
        return Polynomial(terms, self.variables)

    def params_of(self, p: Polynomial) -> np.ndarray:
        p = p.with_variables(self.variables)
        return np.array([p.coefficient(m) for m in self.free_monomials])


@dataclass
class Condition:
    """``target(B) >= slack`` on ``{k_j >= 0} cap {g(B) >= 0} cap {e(B) = 0}``.

    ``target`` and the template generators are callables of the template
    polynomial; they must be affine in it.  Fixed generators go in ``domain``.
    """

    name: str
    target: Callable
    domain: SemialgebraicSet = field(default_factory=SemialgebraicSet.whole_space)
    template_inequalities: list[Callable] = field(default_factory=list)
    template_equalities: list[Callable] = field(default_factory=list)
    slack: float = 0.0
    degree: int | None = None

    @property
    def bilinear(self) -> bool:
        return bool(self.template_inequalities or self.template_equalities)

    def template_generators(self, B):
        gens = [g(B) for g in self.template_inequalities]
        for e in self.template_equalities:
            val = e(B)
            gens.extend([val, -val])
        return gens

    def as_set(self, B: Polynomial) -> SemialgebraicSet:
        return SemialgebraicSet(list(self.domain.inequalities)
                                + [g(B) for g in self.template_inequalities],
                                list(self.domain.equalities)
                                + [e(B) for e in self.template_equalities])


@dataclass
class AlternationLog:
    round: int
    step: str
    status: str
    margin: float


@dataclass
class SynthesisResult:
    polynomial: Polynomial
    params: np.ndarray
    certificates: dict[str, PutinarCertificate]
    log: list[AlternationLog]
    margin: float


def _cond_degree(cond: Condition, target_deg: int) -> int:
    return cond.degree if cond.degree is not None else even_up(max(target_deg, 0))


def _encode(prog: SOSProgram, cond: Condition, B, fixed_template_mults=None):
    """Add one condition to ``prog``; returns handles of template-generator multipliers."""
    variables = prog.variables
    target = cond.target(B)
    if isinstance(target, Polynomial):
        target = AffinePoly.from_poly(target, variables)
    expr = target - cond.slack
    tdeg = expr.degree
    cap = _cond_degree(cond, tdeg)
    for k in cond.domain.generators():
        k = k.with_variables(variables)
        s, _ = prog.new_sos_poly(multiplier_degree(tdeg, k.degree, cap))
        expr = expr - s * k
    handles = []
    tgens = cond.template_generators(B)
    for j, gB in enumerate(tgens):
        if fixed_template_mults is not None:
            expr = expr - fixed_template_mults[j] * gB
        else:
            gB = gB.with_variables(variables) if isinstance(gB, Polynomial) else gB
            gdeg = gB.degree
            s, h = prog.new_sos_poly(multiplier_degree(tdeg, gdeg, cap))
            handles.append(h)
            expr = expr - s * gB
    prog.add_sos(expr)
    return handles


def alternation_synthesize(template: Template, conditions: Sequence[Condition],
                           rounds: int = 20, initial: Sequence[float] | None = None,
                           margin_cap: float = 1.0, tol: float = 1e-6,
                           opts: sdp.SdpOptions | None = None,
                           extra: Callable | None = None) -> SynthesisResult:
    """Search template coefficients so every condition admits a Putinar certificate.

    With template-dependent generators the search alternates: fix the template
    and solve for the multipliers of those generators (maximizing the Gram
    margin), then fix those multipliers and solve for the template.  Stops
    when the margin improves by less than ``tol`` or after ``rounds`` rounds.
    ``extra(prog, B, params)`` may add constraints to the template step.
    The result is re-verified with independent :func:`prove_nonneg` calls.
    """
    variables = template.variables
    for cond in conditions:
        for k in cond.domain.inequalities + cond.domain.equalities:
            for v in k.used_variables():
                if v not in variables:
                    variables = variables + (v,)
    history: list[AlternationLog] = []
    nfree = len(template.free_monomials)
    bilinear = any(c.bilinear for c in conditions)

    if bilinear and nfree and initial is None:
        raise ValueError("template-dependent generators need an initial template")
    params = np.asarray(initial, dtype=float) if initial is not None else np.zeros(nfree)

    def multiplier_step(r):
        B = template.polynomial(params).with_variables(variables)
        mults, worst = [], np.inf
        for cond in conditions:
            prog = SOSProgram(variables)
            handles = _encode(prog, cond, B)
            res = prog.solve(margin_cap=margin_cap, opts=opts)
            worst = min(worst, res.margin if res.status in sdp.SOLVED else -np.inf)
            mults.append([h.polynomial(res.y) for h in handles])
        history.append(AlternationLog(r, "multipliers", "ok" if worst >= 0 else "negative", worst))
        return mults, worst

    def template_step(r, mults):
        prog = SOSProgram(variables)
        B, idx = template.instantiate(prog)
        for cond, m in zip(conditions, mults):
            _encode(prog, cond, B, m if cond.bilinear else None)
        if extra is not None:
            extra(prog, B, idx)
        res = prog.solve(margin_cap=margin_cap, opts=opts)
        status = res.status
        margin = res.margin if status in sdp.SOLVED else -np.inf
        history.append(AlternationLog(r, "template", status, margin))
        if status not in sdp.SOLVED:
            return None, margin, status
        return np.array([res.y[k] for k in idx]), margin, status

    best = -np.inf
    if nfree == 0:
        _, margin = multiplier_step(1)
        best = margin
    elif not bilinear:
        new, margin, status = template_step(1, [[] for _ in conditions])
        if new is None:
            raise NotFound(f"template step infeasible ({status})", history, 1)
        params, best = new, margin
    else:
        for r in range(1, rounds + 1):
            mults, margin_a = multiplier_step(r)
            if margin_a == -np.inf:
                raise NotFound("multiplier step failed", history, r)
            new, margin_b, status = template_step(r, mults)
            if new is None:
                raise NotFound(f"template step infeasible in round {r} ({status})", history, r)
            params = new
            improved = margin_b - best
            best = max(best, margin_b)
            if margin_b >= 0 and improved < tol:
                break
    if best < 0:
        raise NotFound(f"best margin {best:.3g} is negative", history)

    poly = template.polynomial(params)
    certs = {}
    for cond in conditions:
        B = poly.with_variables(variables)
        target = cond.target(B)
        K = cond.as_set(B)
        deg = _cond_degree(cond, (target - cond.slack).degree)
        cert = prove_nonneg(target, K, deg, opts=opts, slack=cond.slack)
        if cert is None:
            raise NotFound(f"re-verification of {cond.name!r} failed", history)
        certs[cond.name] = cert
    return SynthesisResult(poly, params, certs, history, best)
