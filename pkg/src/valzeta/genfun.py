"""Closed-form rational generating functions for Presburger-indexed sums.

The central object is :class:`RatFun`, a rational function in ``q`` and
``T_1..T_k`` kept in factored form: an integer-coefficient numerator, a
formal product of geometric denominators ``(1 - q^a T^b)``, and a monomial
``q^c T^d`` multiplier.  :func:`sum_over_cell` turns

    sum over x in cell of  q^(-Lq(x)) * prod_i T_i^(LT_i(x))

into such a closed form by eliminating the innermost variable first: the
variable's range decomposes into arithmetic progressions with affine
endpoints, each contributing geometric-series terms whose outer dependence
is again of the same shape.  Divergent directions are detected per
progression and reported with a witness.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb, gcd
from typing import Iterable, Sequence

from .intlinalg import lcm_list
from .polynomial import Poly
from .presburger import Congruence, LinTerm, PCell, PresburgerSet, _cell_is_empty, make_cell

Vec = tuple[int, ...]


class PoleHit(Exception):
    """A denominator factor vanishes at the evaluation point."""


class Divergent(Exception):
    """The sum has an infinite direction along which the weight does not decay."""

    def __init__(self, message: str, step: Vec | None = None):
        super().__init__(message)
        self.step = step


class NonIntegralExponent(Exception):
    """An exponent failed to be an integer after all congruence refinement."""


# ---------------------------------------------------------------------------
# rational functions in factored geometric form


def _canonical_dir(w: Vec) -> bool:
    """True when (1 - q^{w0} T^{w1..wk}) is in canonical orientation: the
    first nonzero entry of (-w0, w1, ..., wk) is positive."""
    for x in itertools.chain((-w[0],), w[1:]):
        if x != 0:
            return x > 0
    raise ValueError("zero exponent vector in denominator")


def _neg(w: Vec) -> Vec:
    return tuple(-x for x in w)


class RatFun:
    """num * q^mono0 T^mono / prod (1 - q^{a} T^{b})^mult, exact."""

    __slots__ = ("k", "num", "den", "mono")

    def __init__(self, k: int, num: Poly, den: dict[Vec, int], mono: Vec):
        self.k = k
        if num.is_zero:
            num, den, mono = Poly.zero(1 + k), {}, (0,) * (1 + k)
        else:
            num, den, mono = self._reduce(k, num, dict(den), mono)
        self.num = num
        self.den = den
        self.mono = mono

    # -- construction ---------------------------------------------------

    @staticmethod
    def _reduce(k: int, num: Poly, den: dict[Vec, int], mono: Vec) -> tuple[Poly, dict[Vec, int], Vec]:
        den = {w: m for w, m in den.items() if m}
        changed = True
        while changed:
            changed = False
            for w in list(den):
                pw, shift = _poly_form(k, w)
                quot = num.divide_exact(pw)
                if quot is not None:
                    num = quot
                    mono = tuple(a - b for a, b in zip(mono, shift))
                    den[w] -= 1
                    if den[w] == 0:
                        del den[w]
                    changed = True
        # strip monomial content of the numerator into the monomial part
        exps = list(num.terms.keys())
        content = tuple(min(e[i] for e in exps) for i in range(1 + k))
        if any(content):
            num = num.map_exponents(lambda e: tuple(a - b for a, b in zip(e, content)))
            mono = tuple(a + b for a, b in zip(mono, content))
        return num, den, mono

    @classmethod
    def zero(cls, k: int) -> "RatFun":
        return cls(k, Poly.zero(1 + k), {}, (0,) * (1 + k))

    @classmethod
    def const(cls, k: int, c) -> "RatFun":
        return cls(k, Poly.const(1 + k, c), {}, (0,) * (1 + k))

    @classmethod
    def one(cls, k: int) -> "RatFun":
        return cls.const(k, 1)

    @classmethod
    def monomial(cls, w: Vec) -> "RatFun":
        k = len(w) - 1
        return cls(k, Poly.const(1 + k, 1), {}, tuple(w))

    @classmethod
    def from_q_poly(cls, k: int, p: Poly) -> "RatFun":
        """Embed a polynomial in q alone."""
        if p.nvars != 1:
            raise ValueError("expected a univariate polynomial in q")
        num = Poly(1 + k, {(e[0],) + (0,) * k: c for e, c in p.terms.items()})
        return cls(k, num, {}, (0,) * (1 + k))

    @classmethod
    def inv_one_minus(cls, w: Vec) -> "RatFun":
        """1/(1 - q^{w0} T^{w'}), canonically oriented."""
        k = len(w) - 1
        if _canonical_dir(w):
            return cls(k, Poly.const(1 + k, 1), {tuple(w): 1}, (0,) * (1 + k))
        wc = _neg(w)
        return cls(k, Poly.const(1 + k, -1), {wc: 1}, wc)

    def is_zero(self) -> bool:
        return self.num.is_zero

    # -- arithmetic -----------------------------------------------------

    def __mul__(self, other) -> "RatFun":
        if not isinstance(other, RatFun):
            return RatFun(self.k, self.num * other, self.den, self.mono)
        den = dict(self.den)
        for w, m in other.den.items():
            den[w] = den.get(w, 0) + m
        mono = tuple(a + b for a, b in zip(self.mono, other.mono))
        return RatFun(self.k, self.num * other.num, den, mono)

    __rmul__ = __mul__

    def __neg__(self) -> "RatFun":
        return RatFun(self.k, -self.num, self.den, self.mono)

    def __add__(self, other: "RatFun") -> "RatFun":
        if self.is_zero():
            return other
        if other.is_zero():
            return self
        den_c: dict[Vec, int] = dict(self.den)
        for w, m in other.den.items():
            den_c[w] = max(den_c.get(w, 0), m)
        parts = []
        for side in (self, other):
            num = side.num
            shift = list(side.mono)
            for w, m in den_c.items():
                extra = m - side.den.get(w, 0)
                if extra:
                    pw, s = _poly_form(self.k, w)
                    num = num * pw ** extra
                    shift = [a + extra * b for a, b in zip(shift, s)]
            parts.append((num, tuple(shift)))
        base = tuple(min(a[1][i] for a in parts) for i in range(1 + self.k))
        total = Poly.zero(1 + self.k)
        for num, shift in parts:
            off = tuple(a - b for a, b in zip(shift, base))
            total = total + num.map_exponents(lambda e, off=off: tuple(a + b for a, b in zip(e, off)))
        return RatFun(self.k, total, den_c, base)

    def __sub__(self, other: "RatFun") -> "RatFun":
        return self + (-other)

    def __pow__(self, n: int) -> "RatFun":
        if n < 0:
            raise ValueError("negative powers not supported")
        out = RatFun.one(self.k)
        for _ in range(n):
            out = out * self
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, RatFun):
            return NotImplemented
        return (self - other).is_zero()

    def __hash__(self):
        raise TypeError("RatFun is unhashable; compare with ==")

    # -- evaluation and reindexing --------------------------------------

    def evaluate(self, q: Fraction, ts: Sequence[Fraction]) -> Fraction:
        if len(ts) != self.k:
            raise ValueError("wrong number of T values")
        q = Fraction(q)
        vals = [q] + [Fraction(t) for t in ts]
        if any(v == 0 for v in vals) and any(m < 0 for m in self.mono):
            raise ZeroDivisionError("monomial with negative exponent at zero")
        out = self.num.eval(vals)
        for base, e in zip(vals, self.mono):
            out *= base ** e
        for w, m in self.den.items():
            fac = Fraction(1)
            for base, e in zip(vals, w):
                fac *= base ** e
            if fac == 1:
                raise PoleHit(f"denominator factor with exponent {w} vanishes")
            out /= (1 - fac) ** m
        return out

    def substitution_scale(self, c: int) -> "RatFun":
        """q -> q^c, T_i -> T_i^c."""
        if c < 1:
            raise ValueError("scale must be a positive integer")
        if c == 1:
            return self
        num = self.num.scale_exponents(c)
        den = {tuple(c * x for x in w): m for w, m in self.den.items()}
        mono = tuple(c * x for x in self.mono)
        return RatFun(self.k, num, den, mono)

    # -- display --------------------------------------------------------

    def __str__(self) -> str:
        names = ["q"] + [f"T{i+1}" if self.k > 1 else "T" for i in range(self.k)]
        num = self.num.format(names)
        pieces = [f"({num})" if " " in num else num]
        if any(self.mono):
            pieces.append(_monomial_str(self.mono, names))
        out = " * ".join(pieces)
        dens = []
        for w in sorted(self.den):
            m = self.den[w]
            s = f"(1 - {_monomial_str(w, names)})"
            dens.append(s if m == 1 else f"{s}^{m}")
        if dens:
            out = f"{out} / {' '.join(dens)}"
        return out

    def __repr__(self) -> str:
        return f"RatFun({self})"


def _monomial_str(w: Vec, names: list[str]) -> str:
    parts = []
    for e, n in zip(w, names):
        if e == 0:
            continue
        parts.append(n if e == 1 else f"{n}^{e}")
    return " ".join(parts) if parts else "1"


def _poly_form(k: int, w: Vec) -> tuple[Poly, Vec]:
    """(1 - q^{w0}T^{w'}) == M^shift * P with P a true polynomial."""
    shift = tuple(min(x, 0) for x in w)
    lhs = Poly.monomial(1 + k, tuple(-s for s in shift), 1)
    rhs = Poly.monomial(1 + k, tuple(a - b for a, b in zip(w, shift)), 1)
    return lhs - rhs, shift


def evaluate(f: RatFun, q, ts) -> Fraction:
    return f.evaluate(q, ts)


# ---------------------------------------------------------------------------
# geometric and polynomial power sums


def _eulerian_row(s: int) -> list[int]:
    """Eulerian numbers E(s, 0..s-1) for s >= 1."""
    row = [1]
    for n in range(2, s + 1):
        prev = row
        row = [0] * n
        for j in range(n):
            left = prev[j] if j < len(prev) else 0
            right = prev[j - 1] if j >= 1 else 0
            row[j] = (j + 1) * left + (n - j) * right
    return row[:s]


def geometric_power_sum(w: Vec, s: int) -> RatFun:
    """Sum over t >= 0 of t^s (q^{w0}T^{w'})^t, as a closed form."""
    k = len(w) - 1
    inv = RatFun.inv_one_minus(w)
    if s == 0:
        return inv
    num = RatFun.zero(k)
    mono = RatFun.monomial(w)
    power = RatFun.one(k)
    for j, coeff in enumerate(_eulerian_row(s)):
        power = power * mono  # now mono^(j+1)
        num = num + RatFun.const(k, coeff) * power
    return num * inv ** (s + 1)


_FAULHABER: dict[int, list[Fraction]] = {}


def _faulhaber(s: int) -> list[Fraction]:
    """Coefficients (low degree first) of F with F(J) = sum_{t=0}^{J} t^s."""
    if s in _FAULHABER:
        return _FAULHABER[s]
    pts = list(range(s + 2))
    vals = []
    acc = 0
    for j in pts:
        acc += j ** s if (j or s == 0) else 1  # 0^0 = 1
        vals.append(Fraction(acc))
    # Lagrange interpolation, degree <= s + 1
    coeffs = [Fraction(0)] * (s + 2)
    for i, xi in enumerate(pts):
        basis = [Fraction(1)]
        denom = Fraction(1)
        for j, xj in enumerate(pts):
            if j == i:
                continue
            basis = _poly1_mul_linear(basis, -Fraction(xj), Fraction(1))
            denom *= xi - xj
        scale = vals[i] / denom
        for d, c in enumerate(basis):
            coeffs[d] += scale * c
    while len(coeffs) > 1 and coeffs[-1] == 0:
        coeffs.pop()
    _FAULHABER[s] = coeffs
    return coeffs


def _poly1_mul_linear(coeffs: list[Fraction], a: Fraction, b: Fraction) -> list[Fraction]:
    """(a + b x) * given univariate polynomial."""
    out = [Fraction(0)] * (len(coeffs) + 1)
    for d, c in enumerate(coeffs):
        out[d] += a * c
        out[d + 1] += b * c
    return out


# ---------------------------------------------------------------------------
# affine exponent forms with rational coefficients


@dataclass(frozen=True)
class QAffine:
    coeffs: tuple[Fraction, ...]
    const: Fraction

    @classmethod
    def from_linterm(cls, t: LinTerm) -> "QAffine":
        return cls(tuple(Fraction(c) for c in t.coeffs), Fraction(t.const))

    @classmethod
    def constant(cls, arity: int, c) -> "QAffine":
        return cls((Fraction(0),) * arity, Fraction(c))

    @property
    def arity(self) -> int:
        return len(self.coeffs)

    def __add__(self, other: "QAffine") -> "QAffine":
        return QAffine(tuple(a + b for a, b in zip(self.coeffs, other.coeffs)), self.const + other.const)

    def scaled(self, c) -> "QAffine":
        c = Fraction(c)
        return QAffine(tuple(c * x for x in self.coeffs), c * self.const)

    def __neg__(self) -> "QAffine":
        return self.scaled(-1)

    def drop_last(self) -> "QAffine":
        return QAffine(self.coeffs[:-1], self.const)

    def subst_last_progression(self, rho: int, step: int) -> "QAffine":
        """x_last = rho + step * j, with j taking the last slot."""
        a = self.coeffs[-1]
        return QAffine(self.coeffs[:-1] + (a * step,), self.const + a * rho)

    def to_poly(self, nvars: int) -> Poly:
        out = Poly.const(nvars, self.const)
        for i, c in enumerate(self.coeffs):
            if c:
                out = out + Poly.monomial(nvars, tuple(int(j == i) for j in range(nvars)), c)
        return out

    def __call__(self, point: Sequence) -> Fraction:
        return sum((c * Fraction(x) for c, x in zip(self.coeffs, point)), self.const)


@dataclass(frozen=True)
class ExponentData:
    """Exponent forms for the weight q^{-Lq(x)} * prod T_i^{LT_i(x)}."""

    lq: LinTerm
    lt: tuple[LinTerm, ...]

    @property
    def k(self) -> int:
        return len(self.lt)

    def forms(self) -> tuple[QAffine, ...]:
        """(E_0, ..., E_k) with weight = q^{E_0} T^{E_i}; E_0 = -Lq."""
        return (-QAffine.from_linterm(self.lq),) + tuple(QAffine.from_linterm(t) for t in self.lt)


@dataclass(frozen=True)
class _Term:
    c: RatFun
    p: Poly  # polynomial prefactor over the remaining variables
    e: tuple[QAffine, ...]  # exponent forms, one per (q, T_1..T_k)


# ---------------------------------------------------------------------------
# the summation engine


def sum_over_cell(cell: PCell, e: ExponentData) -> RatFun:
    k = e.k
    if cell is None:
        return RatFun.zero(k)
    forms = e.forms()
    for f in forms:
        if f.arity != cell.arity:
            raise ValueError("exponent form arity does not match the cell")
    term = _Term(RatFun.one(k), Poly.const(cell.arity, 1), forms)
    return _sum_rec(cell, [term], k)


def sum_over_set(s: PresburgerSet, e: ExponentData) -> RatFun:
    total = RatFun.zero(e.k)
    for cell in s.disjointified().cells:
        total = total + sum_over_cell(cell, e)
    return total


def _sum_rec(cell: PCell, terms: list[_Term], k: int) -> RatFun:
    terms = [t for t in terms if not t.c.is_zero() and not t.p.is_zero]
    if not terms:
        return RatFun.zero(k)
    if _cell_is_empty(cell):
        return RatFun.zero(k)
    if cell.arity == 0:
        total = RatFun.zero(k)
        for t in terms:
            w = []
            for f in t.e:
                if f.const.denominator != 1:
                    raise NonIntegralExponent(
                        f"exponent {f.const} is not an integer; congruence refinement incomplete"
                    )
                w.append(int(f.const))
            total = total + t.c * RatFun.monomial(tuple(w)) * t.p.constant_value()
        return total

    total = RatFun.zero(k)
    for branch_cell, branch_terms in _eliminate_last(cell, terms, k):
        total = total + _sum_rec(branch_cell, branch_terms, k)
    return total


def _eliminate_last(
    cell: PCell, terms: list[_Term], k: int
) -> Iterable[tuple[PCell, list[_Term]]]:
    n = cell.arity
    last = n - 1
    moduli = [g.modulus for g in cell.congs if g.term.coeffs[last] != 0]
    denoms = [f.coeffs[last].denominator for t in terms for f in t.e]
    period = lcm_list(moduli + denoms + [1])

    outer_ineqs = [t.drop_var(last) for t in cell.ineqs if t.coeffs[last] == 0]
    outer_congs = [
        Congruence(g.term.drop_var(last), g.residue, g.modulus)
        for g in cell.congs
        if g.term.coeffs[last] == 0
    ]

    for rho in range(period):
        # does the cell meet the class x_last == rho (mod period)?
        probe = cell.with_atoms(congs=[Congruence(_unit(n, last), rho, period)]) if period > 1 else cell
        if probe is None or _cell_is_empty(probe):
            continue
        # substitute x_last = rho + period * j
        lowers: list[tuple[LinTerm, int]] = []  # j >= num/den
        uppers: list[tuple[LinTerm, int]] = []  # j <= num/den
        extra_congs: list[Congruence | tuple] = []
        ok = True
        for t in cell.ineqs:
            a = t.coeffs[last]
            if a == 0:
                continue
            rest = LinTerm(t.coeffs[:last] + (0,), t.const + a * rho).drop_var(last)
            if a > 0:
                lowers.append((-rest, a * period))
            else:
                uppers.append((rest, -a * period))
        for g in cell.congs:
            c = g.term.coeffs[last]
            if c == 0:
                continue
            rest = LinTerm(g.term.coeffs[:last] + (0,), c * rho).drop_var(last)
            extra_congs.append((rest, g.residue, g.modulus))
        base = make_cell(n - 1, outer_ineqs, outer_congs + extra_congs)
        if base is None:
            continue

        sub_terms = []
        for t in terms:
            e2 = tuple(f.subst_last_progression(rho, period) for f in t.e)
            for f in e2:
                if f.coeffs[-1].denominator != 1:
                    raise NonIntegralExponent("step exponent not integral after refinement")
            affine = Poly.monomial(n, tuple(int(i == last) for i in range(n)), period) + Poly.const(n, rho)
            p2 = t.p.substitute({last: affine})
            sub_terms.append(_Term(t.c, p2, e2))

        yield from _branch_bounds(base, lowers, uppers, sub_terms, k)


def _unit(arity: int, var: int) -> LinTerm:
    return LinTerm(tuple(int(i == var) for i in range(arity)), 0)


def _branch_bounds(
    base: PCell,
    lowers: list[tuple[LinTerm, int]],
    uppers: list[tuple[LinTerm, int]],
    terms: list[_Term],
    k: int,
) -> Iterable[tuple[PCell, list[_Term]]]:
    n_out = base.arity
    if not lowers and not uppers:
        zero = QAffine.constant(n_out, 0)
        minus1 = QAffine.constant(n_out, -1)
        yield base, _sum_ray(terms, zero, +1, k)
        yield base, _sum_ray(terms, minus1, -1, k)
        return

    if lowers and not uppers:
        for i, conds in _extremal_pieces(lowers, maximal=True):
            cell_i = base.with_atoms(ineqs=conds)
            if cell_i is None:
                continue
            num, den = lowers[i]
            for s in range(den):
                padded = cell_i.with_atoms(congs=[(num, s, den)]) if den > 1 else cell_i
                if padded is None:
                    continue
                b = _ceil_form(num, den, s)
                yield padded, _sum_ray(terms, b, +1, k)
        return

    if uppers and not lowers:
        for j, conds in _extremal_pieces(uppers, maximal=False):
            cell_j = base.with_atoms(ineqs=conds)
            if cell_j is None:
                continue
            num, den = uppers[j]
            for s in range(den):
                padded = cell_j.with_atoms(congs=[(num, s, den)]) if den > 1 else cell_j
                if padded is None:
                    continue
                b = _floor_form(num, den, s)
                yield padded, _sum_ray(terms, b, -1, k)
        return

    for i, conds_l in _extremal_pieces(lowers, maximal=True):
        for j, conds_u in _extremal_pieces(uppers, maximal=False):
            cell_ij = base.with_atoms(ineqs=conds_l + conds_u)
            if cell_ij is None:
                continue
            lnum, lden = lowers[i]
            unum, uden = uppers[j]
            for sl in range(lden):
                for su in range(uden):
                    congs = []
                    if lden > 1:
                        congs.append((lnum, sl, lden))
                    if uden > 1:
                        congs.append((unum, su, uden))
                    padded = cell_ij.with_atoms(congs=congs) if congs else cell_ij
                    if padded is None:
                        continue
                    blow = _ceil_form(lnum, lden, sl)
                    bup = _floor_form(unum, uden, su)
                    width = bup + (-blow)  # integer-valued affine J
                    # nonempty window: J >= 0, as an integer inequality
                    scale = lcm_list([c.denominator for c in width.coeffs] + [width.const.denominator])
                    gate = LinTerm(
                        tuple(int(c * scale) for c in width.coeffs), int(width.const * scale)
                    )
                    window_cell = padded.with_atoms(ineqs=[gate])
                    if window_cell is None:
                        continue
                    yield window_cell, _sum_window(terms, blow, width, k)


def _extremal_pieces(
    bounds: list[tuple[LinTerm, int]], maximal: bool
) -> Iterable[tuple[int, list[LinTerm]]]:
    """For each index i, the inequalities making bound i the max (resp. min),
    with earlier indices beating later ones on ties."""
    for i, (num_i, den_i) in enumerate(bounds):
        conds: list[LinTerm] = []
        for i2, (num_o, den_o) in enumerate(bounds):
            if i2 == i:
                continue
            diff = num_i.scaled(den_o) - num_o.scaled(den_i)
            if not maximal:
                diff = -diff
            if i2 < i:
                diff = diff.shifted(-1)  # strict: the earlier bound did not win
            conds.append(diff)
        yield i, conds


def _ceil_form(num: LinTerm, den: int, s: int) -> QAffine:
    """ceil(num/den) on the stratum num == s (mod den)."""
    base = QAffine(tuple(Fraction(c, den) for c in num.coeffs), Fraction(num.const - s, den))
    if s > 0:
        base = QAffine(base.coeffs, base.const + 1)
    return base


def _floor_form(num: LinTerm, den: int, s: int) -> QAffine:
    return QAffine(tuple(Fraction(c, den) for c in num.coeffs), Fraction(num.const - s, den))


def _split_exponents(e: tuple[QAffine, ...]) -> tuple[tuple[QAffine, ...], Vec]:
    """Separate the last-variable integer step vector from the outer parts."""
    outs = []
    step = []
    for f in e:
        c = f.coeffs[-1]
        assert c.denominator == 1
        step.append(int(c))
        outs.append(f.drop_last())
    return tuple(outs), tuple(step)


def _shift_exps(outs: tuple[QAffine, ...], step: Vec, b: QAffine) -> tuple[QAffine, ...]:
    return tuple(f + b.scaled(w) if w else f for f, w in zip(outs, step))


def _poly_in_t(p: Poly, b: QAffine, direction: int) -> dict[int, Poly]:
    """Substitute j = b + direction*t into p (j the last variable) and split
    the result by powers of t; values are polynomials over the outer vars."""
    n = p.nvars
    t_poly = Poly.monomial(n, tuple(int(i == n - 1) for i in range(n)), direction)
    repl = b.to_poly(n) + t_poly  # b uses outer slots only
    q = p.substitute({n - 1: repl})
    out: dict[int, Poly] = {}
    for exps, coeff in q.terms.items():
        s = exps[-1]
        outer = exps[:-1]
        tgt = out.setdefault(s, Poly.zero(n - 1))
        out[s] = tgt + Poly.monomial(n - 1, outer, coeff)
    return out


def _sum_ray(terms: list[_Term], b: QAffine, direction: int, k: int) -> list[_Term]:
    """Closed forms for sum over j = b + direction*t, t >= 0."""
    out: list[_Term] = []
    for t in terms:
        outs, step = _split_exponents(t.e)
        v = tuple(direction * w for w in step)
        parts = _poly_in_t(t.p, b, direction)
        parts = {s: c for s, c in parts.items() if not c.is_zero}
        if not parts or t.c.is_zero():
            continue
        if all(x == 0 for x in v):
            raise Divergent("infinite progression with constant weight", step=v)
        if v[0] > 0 or any(x < 0 for x in v[1:]):
            raise Divergent(
                f"weight does not decay along an infinite progression (step {v})", step=v
            )
        base_e = _shift_exps(outs, step, b)
        for s, c_s in parts.items():
            out.append(_Term(t.c * geometric_power_sum(v, s), c_s, base_e))
    return out


def _sum_window(terms: list[_Term], blow: QAffine, width: QAffine, k: int) -> list[_Term]:
    """Closed forms for sum over j = blow + t, 0 <= t <= width."""
    out: list[_Term] = []
    for t in terms:
        outs, step = _split_exponents(t.e)
        parts = _poly_in_t(t.p, blow, +1)
        parts = {s: c for s, c in parts.items() if not c.is_zero}
        if not parts or t.c.is_zero():
            continue
        base_e = _shift_exps(outs, step, blow)
        n_out = blow.arity
        if all(x == 0 for x in step):
            # polynomial window: Faulhaber in the width
            width_poly = width.to_poly(n_out)
            acc = Poly.zero(n_out)
            for s, c_s in parts.items():
                f = _faulhaber(s)
                fp = Poly.zero(n_out)
                for d, coeff in enumerate(f):
                    if coeff:
                        fp = fp + width_poly ** d * coeff
                acc = acc + c_s * fp
            if not acc.is_zero:
                out.append(_Term(t.c, acc, base_e))
            continue
        wplus = width + QAffine.constant(n_out, 1)
        wplus_poly = wplus.to_poly(n_out)
        tail_e = _shift_exps(base_e, step, wplus)
        for s, c_s in parts.items():
            out.append(_Term(t.c * geometric_power_sum(step, s), c_s, base_e))
            for u in range(s + 1):
                out.append(
                    _Term(
                        -(t.c * RatFun.const(k, comb(s, u)) * geometric_power_sum(step, u)),
                        c_s * wplus_poly ** (s - u),
                        tail_e,
                    )
                )
    return out


# ---------------------------------------------------------------------------
# zeta assembly and uniform families


def zeta_assemble(
    pieces: Sequence[tuple[Poly, PresburgerSet, ExponentData]], rho: int = 1
) -> RatFun:
    """Assemble sum of count(q^rho) * sum over scale(Delta, rho) with the
    exponent constants stretched by rho; for rho = 1 this is the plain
    weighted sum.  The result equals the rho = 1 value under q -> q^rho,
    T -> T^rho."""
    if rho < 1:
        raise ValueError("rho must be a positive integer")
    total: RatFun | None = None
    for count, delta, e in pieces:
        k = e.k
        if total is None:
            total = RatFun.zero(k)
        if count.is_zero:
            continue
        scaled_set = delta.scale(rho)
        e_rho = ExponentData(
            LinTerm(e.lq.coeffs, rho * e.lq.const),
            tuple(LinTerm(t.coeffs, rho * t.const) for t in e.lt),
        )
        contrib = RatFun.from_q_poly(k, count.scale_exponents(rho)) * sum_over_set(scaled_set, e_rho)
        total = total + contrib
    if total is None:
        raise ValueError("no pieces given")
    return total


@dataclass
class FamilyEntry:
    level: int  # the m of R_{m,i}
    piece: int
    residues: tuple[int, ...]  # primitive residue pattern at that level
    count: Poly  # coefficient polynomial in q
    ratfun: RatFun


@dataclass
class FamilyReport:
    k: int
    rho_values: tuple[int, ...]
    entries: list[FamilyEntry]
    terms_by_rho: dict[int, list[tuple[int, int]]]  # rho -> [(entry index, c = rho/level)]
    class_certified: list[tuple[int, int, tuple[int, ...], bool]] = field(default_factory=list)
    pair_certified: list[tuple[int, int, int, tuple[int, ...], bool]] = field(default_factory=list)

    def total(self, rho: int) -> RatFun:
        out = RatFun.zero(self.k)
        for idx, c in self.terms_by_rho[rho]:
            entry = self.entries[idx]
            out = out + RatFun.from_q_poly(self.k, entry.count) * entry.ratfun.substitution_scale(c)
        return out

    def all_certified(self) -> bool:
        return all(ok for *_, ok in self.class_certified) and all(
            ok for *_, ok in self.pair_certified
        )


def uniform_family(
    pieces: Sequence[tuple[Poly, PresburgerSet, ExponentData]], rho_list: Sequence[int]
) -> FamilyReport:
    """Divisor-structured rational-function family across ramification values.

    For each rho the piece descriptions are re-read on the finer value group
    (constants and moduli stretched by rho), split into residue classes
    d in [1, rho]^nu, and each class is traced back to its primitive class at
    level m = rho / gcd(d, rho).  The report lists one rational function per
    primitive class; the per-rho value is recovered by evaluating it at
    (q^{rho/m}, T^{rho/m}).  Both the primitive-scaling identity and the
    cross-rho relation (classes at rho reappearing scaled by c at c*rho) are
    checked with exact set equivalence and recorded, not raised.
    """
    if not pieces:
        raise ValueError("no pieces given")
    k = pieces[0][2].k
    for _, _, e in pieces:
        if e.lq.const != 0 or any(t.const != 0 for t in e.lt):
            raise ValueError("uniform families require linear (constant-free) exponent forms")
    rho_values = tuple(sorted(set(int(r) for r in rho_list)))
    if any(r < 1 for r in rho_values):
        raise ValueError("rho values must be positive")

    entries: list[FamilyEntry] = []
    entry_index: dict[tuple[int, int, tuple[int, ...]], int] = {}
    terms_by_rho: dict[int, list[tuple[int, int]]] = {r: [] for r in rho_values}
    classes: dict[tuple[int, int, tuple[int, ...]], PresburgerSet] = {}
    class_cert: list[tuple[int, int, tuple[int, ...], bool]] = []

    for rho in rho_values:
        for pi, (count, delta, e) in enumerate(pieces):
            nu = delta.arity
            stretched = delta.dilated(rho)
            for dvec in itertools.product(range(1, rho + 1), repeat=nu):
                cls = _residue_class(stretched, dvec, rho)
                classes[(rho, pi, dvec)] = cls
                if cls.is_empty():
                    continue
                c = gcd(gcd_many(dvec), rho)
                m = rho // c
                dprim = tuple(d // c for d in dvec)
                key = (pi, m, dprim)
                if key not in entry_index:
                    prim = _residue_class(delta.dilated(m), dprim, m)
                    r_fun = sum_over_set(prim, e)
                    entry_index[key] = len(entries)
                    entries.append(FamilyEntry(m, pi, dprim, count, r_fun))
                idx = entry_index[key]
                prim_set = _residue_class(delta.dilated(m), dprim, m)
                ok = prim_set.scale(c).equivalent(cls)
                class_cert.append((rho, pi, dvec, ok))
                terms_by_rho[rho].append((idx, c))

    pair_cert: list[tuple[int, int, int, tuple[int, ...], bool]] = []
    for r1 in rho_values:
        for r2 in rho_values:
            if r2 <= r1 or r2 % r1 != 0:
                continue
            c = r2 // r1
            for pi in range(len(pieces)):
                nu = pieces[pi][1].arity
                for dvec in itertools.product(range(1, r1 + 1), repeat=nu):
                    cls1 = classes[(r1, pi, dvec)]
                    dvec2 = tuple(c * d for d in dvec)
                    cls2 = classes[(r2, pi, dvec2)]
                    ok = cls1.scale(c).equivalent(cls2)
                    pair_cert.append((r1, r2, pi, dvec, ok))

    return FamilyReport(
        k=k,
        rho_values=rho_values,
        entries=entries,
        terms_by_rho=terms_by_rho,
        class_certified=class_cert,
        pair_certified=pair_cert,
    )


def gcd_many(xs: Iterable[int]) -> int:
    g = 0
    for x in xs:
        g = gcd(g, x)
    return g


def _residue_class(s: PresburgerSet, dvec: tuple[int, ...], rho: int) -> PresburgerSet:
    if rho == 1:
        return s
    n = s.arity
    congs = [Congruence(_unit(n, i), dvec[i] % rho, rho) for i in range(n)]
    cells = [c.with_atoms(congs=congs) for c in s.cells]
    return PresburgerSet(n, [c for c in cells if c is not None], disjoint=s.disjoint)
