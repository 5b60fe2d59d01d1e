"""Sparse multivariate polynomials with exact coefficients.

Coefficients are ``int`` or ``fractions.Fraction``; exponents are
non-negative integers.  The class is deliberately small: just what the
rational-function and residue-class layers need (ring operations, exact
division, substitution, evaluation).
"""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Mapping, Sequence, Union

Coeff = Union[int, Fraction]


def _norm_coeff(c: Coeff) -> Coeff:
    if isinstance(c, Fraction) and c.denominator == 1:
        return int(c)
    return c


class Poly:
    """A polynomial in ``nvars`` variables, stored as exponent-tuple -> coeff."""

    __slots__ = ("nvars", "terms")

    def __init__(self, nvars: int, terms: Mapping[tuple[int, ...], Coeff] | None = None):
        self.nvars = nvars
        clean: dict[tuple[int, ...], Coeff] = {}
        if terms:
            for exps, c in terms.items():
                c = _norm_coeff(c)
                if c == 0:
                    continue
                if len(exps) != nvars:
                    raise ValueError(f"exponent tuple {exps} has wrong length for {nvars} vars")
                if any(e < 0 for e in exps):
                    raise ValueError(f"negative exponent in {exps}")
                clean[tuple(exps)] = clean.get(tuple(exps), 0) + c
            clean = {e: c for e, c in clean.items() if c != 0}
        self.terms = clean

    # -- constructors ---------------------------------------------------

    @classmethod
    def zero(cls, nvars: int) -> "Poly":
        return cls(nvars, {})

    @classmethod
    def const(cls, nvars: int, c: Coeff) -> "Poly":
        return cls(nvars, {tuple([0] * nvars): c})

    @classmethod
    def var(cls, nvars: int, i: int) -> "Poly":
        exps = [0] * nvars
        exps[i] = 1
        return cls(nvars, {tuple(exps): 1})

    @classmethod
    def monomial(cls, nvars: int, exps: Sequence[int], c: Coeff = 1) -> "Poly":
        return cls(nvars, {tuple(exps): c})

    # -- ring structure -------------------------------------------------

    def __add__(self, other: "Poly | Coeff") -> "Poly":
        other = self._coerce(other)
        merged = dict(self.terms)
        for e, c in other.terms.items():
            merged[e] = merged.get(e, 0) + c
        return Poly(self.nvars, merged)

    __radd__ = __add__

    def __neg__(self) -> "Poly":
        return Poly(self.nvars, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other: "Poly | Coeff") -> "Poly":
        return self + (-self._coerce(other))

    def __rsub__(self, other: Coeff) -> "Poly":
        return self._coerce(other) - self

    def __mul__(self, other: "Poly | Coeff") -> "Poly":
        other = self._coerce(other)
        out: dict[tuple[int, ...], Coeff] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0) + c1 * c2
        return Poly(self.nvars, out)

    __rmul__ = __mul__

    def __pow__(self, k: int) -> "Poly":
        if k < 0:
            raise ValueError("negative power of a polynomial")
        result = Poly.const(self.nvars, 1)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def _coerce(self, other: "Poly | Coeff") -> "Poly":
        if isinstance(other, Poly):
            if other.nvars != self.nvars:
                raise ValueError("mixing polynomials with different variable counts")
            return other
        return Poly.const(self.nvars, other)

    # -- predicates -----------------------------------------------------

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def is_constant(self) -> bool:
        return all(all(e == 0 for e in exps) for exps in self.terms)

    def constant_value(self) -> Coeff:
        if not self.is_constant():
            raise ValueError("polynomial is not constant")
        return self.terms.get(tuple([0] * self.nvars), 0)

    def has_integer_coeffs(self) -> bool:
        return all(isinstance(c, int) for c in self.terms.values())

    def total_degree(self) -> int:
        if self.is_zero:
            return -1
        return max(sum(e) for e in self.terms)

    def weighted_degrees(self, weights: Sequence[int]) -> set[int]:
        """Set of weighted degrees occurring among the monomials."""
        return {sum(w * e for w, e in zip(weights, exps)) for exps in self.terms}

    def degree_in(self, i: int) -> int:
        if self.is_zero:
            return -1
        return max(e[i] for e in self.terms)

    # -- transformations ------------------------------------------------

    def map_exponents(self, f) -> "Poly":
        out: dict[tuple[int, ...], Coeff] = {}
        for e, c in self.terms.items():
            ne = tuple(f(e))
            out[ne] = out.get(ne, 0) + c
        return Poly(self.nvars, out)

    def scale_exponents(self, c: int) -> "Poly":
        if c <= 0:
            raise ValueError("exponent scale must be positive")
        return self.map_exponents(lambda e: tuple(c * x for x in e))

    def substitute(self, assignment: Mapping[int, "Poly | Coeff"]) -> "Poly":
        """Substitute polynomials (or constants) for some of the variables."""
        result = Poly.zero(self.nvars)
        for exps, c in self.terms.items():
            term = Poly.const(self.nvars, c)
            for i, e in enumerate(exps):
                if e == 0:
                    continue
                if i in assignment:
                    term = term * self._coerce(assignment[i]) ** e
                else:
                    term = term * Poly.var(self.nvars, i) ** e
            result = result + term
        return result

    def eval(self, values: Sequence[Coeff]) -> Coeff:
        if len(values) != self.nvars:
            raise ValueError("wrong number of values")
        total: Coeff = 0
        for exps, c in self.terms.items():
            term = c
            for v, e in zip(values, exps):
                if e:
                    term = term * v ** e
            total += term
        return _norm_coeff(Fraction(total) if isinstance(total, Fraction) else total)

    def homogeneous_parts(self, weights: Sequence[int]) -> dict[int, "Poly"]:
        parts: dict[int, dict[tuple[int, ...], Coeff]] = {}
        for exps, c in self.terms.items():
            d = sum(w * e for w, e in zip(weights, exps))
            parts.setdefault(d, {})[exps] = c
        return {d: Poly(self.nvars, t) for d, t in parts.items()}

    # -- division -------------------------------------------------------

    def _lead(self) -> tuple[tuple[int, ...], Coeff]:
        exps = max(self.terms)  # lex order on exponent tuples
        return exps, self.terms[exps]

    def divide_exact(self, divisor: "Poly") -> "Poly | None":
        """Return ``self / divisor`` if the division is exact, else ``None``."""
        divisor = self._coerce(divisor)
        if divisor.is_zero:
            raise ZeroDivisionError("polynomial division by zero")
        quotient: dict[tuple[int, ...], Coeff] = {}
        rem = self
        de, dc = divisor._lead()
        while not rem.is_zero:
            re, rc = rem._lead()
            qe = tuple(a - b for a, b in zip(re, de))
            if any(x < 0 for x in qe):
                return None
            qc = Fraction(rc, dc) if rc % dc != 0 or isinstance(rc, Fraction) else rc // dc
            if isinstance(rc, Fraction) or isinstance(dc, Fraction):
                qc = Fraction(rc) / Fraction(dc)
            qc = _norm_coeff(qc)
            quotient[qe] = quotient.get(qe, 0) + qc
            rem = rem - Poly.monomial(self.nvars, qe, qc) * divisor
        return Poly(self.nvars, quotient)

    # -- housekeeping ---------------------------------------------------

    def __eq__(self, other: object) -> bool:
        if isinstance(other, (int, Fraction)):
            other = Poly.const(self.nvars, other)
        if not isinstance(other, Poly):
            return NotImplemented
        return self.nvars == other.nvars and self.terms == other.terms

    def __hash__(self) -> int:
        return hash((self.nvars, frozenset(self.terms.items())))

    def sorted_terms(self) -> list[tuple[tuple[int, ...], Coeff]]:
        return sorted(self.terms.items(), reverse=True)

    def format(self, names: Sequence[str]) -> str:
        if self.is_zero:
            return "0"
        chunks: list[str] = []
        for exps, c in self.sorted_terms():
            factors = []
            for name, e in zip(names, exps):
                if e == 1:
                    factors.append(name)
                elif e > 1:
                    factors.append(f"{name}^{e}")
            if not factors:
                body = str(abs(c) if isinstance(c, int) else abs(c))
            else:
                mag = abs(c)
                body = "*".join(factors) if mag == 1 else f"{mag}*" + "*".join(factors)
            sign = "-" if c < 0 else "+"
            if not chunks:
                chunks.append(body if sign == "+" else "-" + body)
            else:
                chunks.append(f" {sign} {body}")
        return "".join(chunks)

    def __repr__(self) -> str:
        names = [f"x{i}" for i in range(self.nvars)]
        return f"Poly({self.format(names)})"
