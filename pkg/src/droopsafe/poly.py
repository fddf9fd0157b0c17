"""Sparse multivariate polynomials over named variables.

A :class:`Polynomial` maps exponent vectors (one entry per variable, in the
order of ``variables``) to float coefficients.  Values are immutable; every
operation returns a new polynomial.  Binary operations first align both
operands onto the union of their variable lists.
"""

from __future__ import annotations

import math
import re
from itertools import combinations_with_replacement
from typing import Iterable, Mapping, Sequence

import numpy as np

Exponent = tuple[int, ...]


def _union(a: Sequence[str], b: Sequence[str]) -> tuple[str, ...]:
    out = list(a)
    for name in b:
        if name not in out:
            out.append(name)
    return tuple(out)


class Polynomial:
    """Immutable sparse polynomial ``sum(coeff * prod(x_v ** e_v))``."""

    __slots__ = ("_vars", "_terms", "_hash")

    def __init__(self, terms: Mapping[Exponent, float] | None = None,
                 variables: Sequence[str] = ()):
        variables = tuple(variables)
        if len(set(variables)) != len(variables):
            raise ValueError(f"duplicate variable names in {variables}")
        n = len(variables)
        clean: dict[Exponent, float] = {}
        for exp, coef in (terms or {}).items():
            exp = tuple(int(e) for e in exp)
            if len(exp) != n:
                raise ValueError(f"exponent {exp} does not match {n} variables")
            if any(e < 0 for e in exp):
                raise ValueError(f"negative exponent {exp}")
            c = float(coef)
            if c != 0.0:
                clean[exp] = clean.get(exp, 0.0) + c
                if clean[exp] == 0.0:
                    del clean[exp]
        self._vars = variables
        self._terms = clean
        self._hash = None

    # construction -----------------------------------------------------
    @classmethod
    def constant(cls, value: float, variables: Sequence[str] = ()) -> "Polynomial":
        n = len(variables)
        return cls({(0,) * n: value}, variables)

    @classmethod
    def var(cls, name: str, variables: Sequence[str] | None = None) -> "Polynomial":
        variables = tuple(variables) if variables is not None else (name,)
        if name not in variables:
            raise ValueError(f"{name!r} not in {variables}")
        exp = tuple(1 if v == name else 0 for v in variables)
        return cls({exp: 1.0}, variables)

    @classmethod
    def vars(cls, *names: str) -> tuple["Polynomial", ...]:
        return tuple(cls.var(n, names) for n in names)

    @classmethod
    def from_coeffs(cls, coeffs: Sequence[float], basis: "MonomialBasis") -> "Polynomial":
        return cls(dict(zip(basis.monomials, coeffs)), basis.variables)

    # accessors --------------------------------------------------------
    @property
    def variables(self) -> tuple[str, ...]:
        return self._vars

    @property
    def terms(self) -> dict[Exponent, float]:
        return dict(self._terms)

    @property
    def nvars(self) -> int:
        return len(self._vars)

    def items(self):
        return self._terms.items()

    def __len__(self) -> int:
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    @property
    def degree(self) -> int:
        """Total degree; the zero polynomial has degree -1."""
        if not self._terms:
            return -1
        return max(sum(e) for e in self._terms)

    def degree_in(self, name: str) -> int:
        if name not in self._vars:
            return 0
        k = self._vars.index(name)
        return max((e[k] for e in self._terms), default=0)

    def coefficient(self, exp: Exponent | Mapping[str, int]) -> float:
        if isinstance(exp, Mapping):
            exp = tuple(int(exp.get(v, 0)) for v in self._vars)
        return self._terms.get(tuple(exp), 0.0)

    def constant_term(self) -> float:
        return self._terms.get((0,) * len(self._vars), 0.0)

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    # variable management ------------------------------------------------
    def with_variables(self, variables: Sequence[str]) -> "Polynomial":
        """Re-express over ``variables`` (must contain every used variable)."""
        variables = tuple(variables)
        if variables == self._vars:
            return self
        idx = []
        for k, v in enumerate(self._vars):
            if v in variables:
                idx.append((k, variables.index(v)))
            elif any(e[k] for e in self._terms):
                raise ValueError(f"variable {v!r} is used but missing from {variables}")
        n = len(variables)
        out = {}
        for exp, c in self._terms.items():
            new = [0] * n
            for k, j in idx:
                new[j] = exp[k]
            out[tuple(new)] = c
        return Polynomial(out, variables)

    def used_variables(self) -> tuple[str, ...]:
        return tuple(v for k, v in enumerate(self._vars)
                     if any(e[k] for e in self._terms))

    def _align(self, other: "Polynomial") -> tuple["Polynomial", "Polynomial"]:
        if self._vars == other._vars:
            return self, other
        u = _union(self._vars, other._vars)
        return self.with_variables(u), other.with_variables(u)

    @staticmethod
    def _coerce(value, variables) -> "Polynomial":
        if isinstance(value, Polynomial):
            return value
        if isinstance(value, (int, float, np.floating, np.integer)):
            return Polynomial.constant(float(value), variables)
        return NotImplemented

    # arithmetic ---------------------------------------------------------
    def __add__(self, other):
        other = self._coerce(other, self._vars)
        if other is NotImplemented:
            return other
        a, b = self._align(other)
        out = dict(a._terms)
        for e, c in b._terms.items():
            out[e] = out.get(e, 0.0) + c
        return Polynomial(out, a._vars)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial({e: -c for e, c in self._terms.items()}, self._vars)

    def __sub__(self, other):
        other = self._coerce(other, self._vars)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        other = self._coerce(other, self._vars)
        if other is NotImplemented:
            return other
        return other + (-self)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(float(other))
        if not isinstance(other, Polynomial):
            return NotImplemented
        a, b = self._align(other)
        out: dict[Exponent, float] = {}
        for ea, ca in a._terms.items():
            for eb, cb in b._terms.items():
                e = tuple(x + y for x, y in zip(ea, eb))
                out[e] = out.get(e, 0.0) + ca * cb
        return Polynomial(out, a._vars)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(1.0 / float(other))
        return NotImplemented

    def __pow__(self, k: int):
        if not isinstance(k, (int, np.integer)) or k < 0:
            raise ValueError("only non-negative integer powers are supported")
        result = Polynomial.constant(1.0, self._vars)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def scale(self, factor: float) -> "Polynomial":
        if factor == 0.0:
            return Polynomial({}, self._vars)
        return Polynomial({e: c * factor for e, c in self._terms.items()}, self._vars)

    # calculus -----------------------------------------------------------
    def diff(self, name: str) -> "Polynomial":
        if name not in self._vars:
            return Polynomial({}, self._vars)
        k = self._vars.index(name)
        out = {}
        for e, c in self._terms.items():
            if e[k]:
                new = list(e)
                new[k] -= 1
                out[tuple(new)] = c * e[k]
        return Polynomial(out, self._vars)

    def gradient(self, variables: Sequence[str] | None = None) -> list["Polynomial"]:
        variables = self._vars if variables is None else variables
        return [self.diff(v) for v in variables]

    # substitution -------------------------------------------------------
    def subs(self, mapping: Mapping[str, "Polynomial | float"]) -> "Polynomial":
        """Substitute polynomials (or numbers) for variables."""
        names = [v for v in self._vars if v in mapping]
        if not names:
            return self
        keep = tuple(v for v in self._vars if v not in mapping)
        subs_vars = keep
        repl = {}
        for v in names:
            r = mapping[v]
            r = Polynomial.constant(float(r)) if not isinstance(r, Polynomial) else r
            repl[v] = r
            subs_vars = _union(subs_vars, r.variables)
        repl = {v: r.with_variables(subs_vars) for v, r in repl.items()}
        # cache powers of each substituted polynomial
        powers: dict[tuple[str, int], Polynomial] = {}

        def power(v, k):
            key = (v, k)
            if key not in powers:
                powers[key] = repl[v] ** k
            return powers[key]

        keep_idx = [self._vars.index(v) for v in keep]
        sub_idx = [(self._vars.index(v), v) for v in names]
        n = len(subs_vars)
        result = Polynomial({}, subs_vars)
        for e, c in self._terms.items():
            mono = [0] * n
            for j, k in enumerate(keep_idx):
                mono[subs_vars.index(keep[j])] = e[k]
            term = Polynomial({tuple(mono): c}, subs_vars)
            for k, v in sub_idx:
                if e[k]:
                    term = term * power(v, e[k])
            result = result + term
        return result

    def shift(self, offset: Mapping[str, float]) -> "Polynomial":
        """Return ``q`` with ``q(x) = p(x + offset)``."""
        mapping = {}
        for v, x0 in offset.items():
            if v in self._vars and x0 != 0.0:
                mapping[v] = Polynomial.var(v) + float(x0)
        return self.subs(mapping).with_variables(self._vars) if mapping else self

    def rename(self, mapping: Mapping[str, str]) -> "Polynomial":
        new = tuple(mapping.get(v, v) for v in self._vars)
        return Polynomial(self._terms, new)

    def truncate(self, degree: int) -> "Polynomial":
        return Polynomial({e: c for e, c in self._terms.items() if sum(e) <= degree},
                          self._vars)

    def prune(self, tol: float) -> "Polynomial":
        return Polynomial({e: c for e, c in self._terms.items() if abs(c) > tol},
                          self._vars)

    # evaluation ---------------------------------------------------------
    def evaluate(self, point: Mapping[str, float] | Sequence[float]) -> float:
        """Evaluate at a point given as a mapping or a sequence in variable order."""
        if isinstance(point, Mapping):
            vals = []
            for k, v in enumerate(self._vars):
                if v in point:
                    vals.append(float(point[v]))
                elif any(e[k] for e in self._terms):
                    raise KeyError(f"no value for variable {v!r}")
                else:
                    vals.append(0.0)
        else:
            vals = [float(x) for x in point]
            if len(vals) != len(self._vars):
                raise ValueError(f"expected {len(self._vars)} values, got {len(vals)}")
        total = 0.0
        for e, c in self._terms.items():
            t = c
            for x, k in zip(vals, e):
                if k:
                    t *= x ** k
            total += t
        return total

    __call__ = evaluate

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Exponent matrix (terms x vars, int64) and coefficient vector."""
        if not self._terms:
            return np.zeros((0, len(self._vars)), dtype=np.int64), np.zeros(0)
        exps = np.array(list(self._terms.keys()), dtype=np.int64).reshape(
            len(self._terms), len(self._vars))
        coefs = np.array(list(self._terms.values()), dtype=float)
        return exps, coefs

    def evaluate_batch(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at each row of ``points`` (shape ``(N, nvars)``)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != len(self._vars):
            raise ValueError(f"expected {len(self._vars)} columns, got {pts.shape[1]}")
        exps, coefs = self.arrays()
        if not len(coefs):
            return np.zeros(pts.shape[0])
        dmax = int(exps.max()) if exps.size else 0
        # powers[k][:, j] = x_j ** k
        powers = np.ones((dmax + 1,) + pts.shape)
        for k in range(1, dmax + 1):
            powers[k] = powers[k - 1] * pts
        out = np.zeros(pts.shape[0])
        cols = np.arange(pts.shape[1])
        for e, c in zip(exps, coefs):
            out += c * np.prod(powers[e, :, cols], axis=0)
        return out

    # comparison -----------------------------------------------------------
    def _canonical(self) -> frozenset:
        items = []
        for e, c in self._terms.items():
            mono = tuple(sorted((v, k) for v, k in zip(self._vars, e) if k))
            items.append((mono, c))
        return frozenset(items)

    def __eq__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(float(other))
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self._canonical() == other._canonical()

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(self._canonical())
        return self._hash

    def allclose(self, other: "Polynomial", atol: float = 1e-9) -> bool:
        return (self - other).max_abs_coeff() <= atol

    # text -----------------------------------------------------------------
    def to_string(self) -> str:
        """Render as ``1.5*x1^2*x2 - 0.3`` with exact (repr) coefficients."""
        if not self._terms:
            return "0"
        order = sorted(self._terms, key=lambda e: (-sum(e), tuple(-k for k in e)))
        parts = []
        for i, e in enumerate(order):
            c = self._terms[e]
            factors = [v if k == 1 else f"{v}^{k}" for v, k in zip(self._vars, e) if k]
            mag = abs(c)
            if factors:
                body = "*".join(factors) if mag == 1.0 else repr(mag) + "*" + "*".join(factors)
            else:
                body = repr(mag)
            if i == 0:
                parts.append(("-" if c < 0 else "") + body)
            else:
                parts.append((" - " if c < 0 else " + ") + body)
        return "".join(parts)

    def __str__(self):
        return self.to_string()

    def __repr__(self):
        return f"Polynomial({self.to_string()!r}, variables={self._vars})"

    @classmethod
    def parse(cls, text: str, variables: Sequence[str] | None = None) -> "Polynomial":
        return parse(text, variables)


_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*^]))")


def parse(text: str, variables: Sequence[str] | None = None) -> Polynomial:
    """Parse the grammar produced by :meth:`Polynomial.to_string`.

    Variables appear in order of first occurrence unless ``variables`` is given.
    """
    tokens = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ValueError(f"cannot parse polynomial near {text[pos:pos + 10]!r}")
        kind = m.lastgroup
        tokens.append((kind, m.group(kind)))
        pos = m.end()
    names: list[str] = list(variables) if variables is not None else []
    raw_terms: list[tuple[float, dict[str, int]]] = []
    i = 0
    sign = 1.0
    expect_term = True
    while i < len(tokens):
        kind, val = tokens[i]
        if kind == "op" and val in "+-" and expect_term:
            sign = -sign if val == "-" else sign
            i += 1
            continue
        if not expect_term:
            if kind == "op" and val in "+-":
                sign = -1.0 if val == "-" else 1.0
                expect_term = True
                i += 1
                continue
            raise ValueError(f"unexpected token {val!r}")
        coef = sign
        powers: dict[str, int] = {}
        while True:
            kind, val = tokens[i]
            if kind == "num":
                coef *= float(val)
                i += 1
            elif kind == "name":
                i += 1
                k = 1
                if i < len(tokens) and tokens[i] == ("op", "^"):
                    if i + 1 >= len(tokens) or tokens[i + 1][0] != "num":
                        raise ValueError("exponent expected after '^'")
                    k = int(tokens[i + 1][1])
                    i += 2
                powers[val] = powers.get(val, 0) + k
                if val not in names:
                    if variables is not None:
                        raise ValueError(f"unknown variable {val!r}")
                    names.append(val)
            else:
                raise ValueError(f"unexpected token {val!r}")
            if i < len(tokens) and tokens[i] == ("op", "*"):
                i += 1
                continue
            break
        raw_terms.append((coef, powers))
        sign = 1.0
        expect_term = False
    if expect_term and raw_terms:
        raise ValueError("dangling operator")
    terms: dict[Exponent, float] = {}
    for coef, powers in raw_terms:
        e = tuple(powers.get(v, 0) for v in names)
        terms[e] = terms.get(e, 0.0) + coef
    return Polynomial(terms, names)


class MonomialBasis:
    """All monomials in ``variables`` with total degree in ``[mindeg, maxdeg]``.

    Ordered graded-lexicographically: by total degree, then with larger
    exponents of earlier variables first (``1, x, y, x^2, x*y, y^2, ...``).
    """

    def __init__(self, variables: Sequence[str], maxdeg: int, mindeg: int = 0):
        self.variables = tuple(variables)
        self.maxdeg = int(maxdeg)
        self.mindeg = int(mindeg)
        self.monomials: list[Exponent] = monomials(len(self.variables), maxdeg, mindeg)
        self.index = {m: k for k, m in enumerate(self.monomials)}

    @classmethod
    def from_monomials(cls, variables: Sequence[str], monos: Iterable[Exponent]):
        obj = cls.__new__(cls)
        obj.variables = tuple(variables)
        monos = sorted(set(tuple(m) for m in monos), key=grlex_key)
        obj.monomials = monos
        obj.maxdeg = max((sum(m) for m in monos), default=0)
        obj.mindeg = min((sum(m) for m in monos), default=0)
        obj.index = {m: k for k, m in enumerate(monos)}
        return obj

    def __len__(self):
        return len(self.monomials)

    def __iter__(self):
        return iter(self.monomials)

    def polynomials(self) -> list[Polynomial]:
        return [Polynomial({m: 1.0}, self.variables) for m in self.monomials]

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Matrix of basis values, shape ``(N, len(basis))``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        exps = np.array(self.monomials, dtype=np.int64).reshape(len(self), len(self.variables))
        return np.prod(pts[:, None, :] ** exps[None, :, :], axis=2)


def grlex_key(exp: Exponent) -> tuple:
    return (sum(exp), tuple(-k for k in exp))


def monomials(nvars: int, maxdeg: int, mindeg: int = 0) -> list[Exponent]:
    out = []
    for d in range(max(mindeg, 0), maxdeg + 1):
        level = []
        for combo in combinations_with_replacement(range(nvars), d):
            e = [0] * nvars
            for k in combo:
                e[k] += 1
            level.append(tuple(e))
        level.sort(key=grlex_key)
        out.extend(level)
    if nvars == 0 and mindeg <= 0 <= maxdeg:
        out = [()]
    return out


def taylor_trig(kind: str, center: float, degree: int, var: str = "x") -> Polynomial:
    """Truncated Taylor series of ``sin`` or ``cos`` about ``center`` in the deviation ``var``."""
    if degree < 1:
        raise ValueError("degree must be >= 1")
    if kind == "sin":
        derivs = [math.sin(center), math.cos(center), -math.sin(center), -math.cos(center)]
    elif kind == "cos":
        derivs = [math.cos(center), -math.sin(center), -math.cos(center), math.sin(center)]
    else:
        raise ValueError(f"kind must be 'sin' or 'cos', not {kind!r}")
    terms = {(k,): derivs[k % 4] / math.factorial(k) for k in range(degree + 1)}
    return Polynomial(terms, (var,))


def lie_derivative(p: Polynomial, field: Sequence[Polynomial],
                   variables: Sequence[str]) -> Polynomial:
    """``grad(p) . field`` with gradient taken along ``variables``."""
    if len(field) != len(variables):
        raise ValueError("vector field and variable list differ in length")
    out = Polynomial({}, p.variables)
    for v, fv in zip(variables, field):
        dp = p.diff(v)
        if not dp.is_zero() and not fv.is_zero():
            out = out + dp * fv
    return out


def evaluate_vector(polys: Sequence[Polynomial], point) -> np.ndarray:
    return np.array([q.evaluate(point) for q in polys])
