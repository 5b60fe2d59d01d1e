"""Graded Grothendieck-ring algebra in tensor form.

The residue side is the subring generated by two grade-1 symbols: u, the
class of the one-dimensional torus, and v, the class of a point sitting in
one coordinate.  A grade-k component is a homogeneous integer polynomial
of degree k in u and v; point counting sends u to q-1 and v to 1.

A graded class pairs such residue data with a value-group part: a formal
sum of (carrier set, map to Gamma^k) representatives of the same grade.
Multiplication is bilinear, with carriers multiplying by cartesian
product and maps by concatenation.

Two Euler retractions collapse the value-group part of a class to an
integer (an Euler characteristic) and land in a localization of the
residue ring: inverting A = u + v for the generic characteristic, or v
for the bounded one.  The volume-form variants land in the quotients by
(A) and (v) instead.  Either way the element

    1 + u (x) [ray] - v (x) [point]

dies, which is the whole reason the retractions are useful: they factor
through the quotient by the lifting kernel.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from math import comb
from typing import Optional, Sequence, Union

from . import formula as fm
from .polynomial import Poly
from .semilinear import (
    Aff,
    Band,
    MorphismVerdict,
    QCell,
    QPiecewiseMap,
    Section,
    SemilinearSet,
    _preimage_formula,
    euler,
    product as set_product,
)

Q = Fraction

# a homogeneous grade-k component is a map i -> coefficient of u^i v^(k-i)
HPoly = dict


def _hadd(a: HPoly, b: HPoly) -> HPoly:
    out = dict(a)
    for i, c in b.items():
        out[i] = out.get(i, 0) + c
        if out[i] == 0:
            del out[i]
    return out


def _hmul(a: HPoly, b: HPoly) -> HPoly:
    out: HPoly = {}
    for i, c in a.items():
        for j, d in b.items():
            out[i + j] = out.get(i + j, 0) + c * d
    return {i: c for i, c in out.items() if c != 0}


def _hscale(a: HPoly, n: int) -> HPoly:
    if n == 0:
        return {}
    return {i: n * c for i, c in a.items()}


def _a_power(m: int) -> HPoly:
    """(u + v)^m, a homogeneous component of grade m."""
    return {i: comb(m, i) for i in range(m + 1)}


def _v_power(m: int) -> HPoly:
    return {0: 1}


def _hdiv_a(p: HPoly, k: int) -> Optional[HPoly]:
    """Divide a grade-k component by u+v, or None if not divisible."""
    if not p:
        return {}
    if sum(c * (-1) ** (k - i) for i, c in p.items()) != 0:
        return None
    q: HPoly = {}
    prev = 0
    for i in range(k):
        prev = p.get(i, 0) - prev
        if prev:
            q[i] = prev
    return q


def _hdiv_v(p: HPoly, k: int) -> Optional[HPoly]:
    if not p:
        return {}
    if p.get(k, 0) != 0:
        return None
    return dict(p)


# ---------------------------------------------------------------------------
# residue classes


class ResClass:
    """Graded class on the residue side: grade k -> homogeneous u,v data."""

    __slots__ = ("components",)

    def __init__(self, components: dict[int, HPoly]):
        clean: dict[int, HPoly] = {}
        for k, p in components.items():
            if k < 0:
                raise ValueError("negative grade")
            p = {i: c for i, c in p.items() if c != 0}
            for i in p:
                if not 0 <= i <= k:
                    raise ValueError(f"monomial u^{i} does not fit in grade {k}")
            if p:
                clean[k] = p
        self.components = clean

    # -- constructors -------------------------------------------------------

    @staticmethod
    def zero() -> "ResClass":
        return ResClass({})

    @staticmethod
    def one() -> "ResClass":
        return ResClass({0: {0: 1}})

    @staticmethod
    def monomial(k: int, i: int, coeff: int = 1) -> "ResClass":
        return ResClass({k: {i: coeff}})

    @staticmethod
    def u() -> "ResClass":
        return ResClass.monomial(1, 1)

    @staticmethod
    def v() -> "ResClass":
        return ResClass.monomial(1, 0)

    @staticmethod
    def torus_minus_one() -> "ResClass":  # pragma: no cover - convenience
        return ResClass.u()

    @staticmethod
    def A() -> "ResClass":
        """u + v, the class of the full affine fiber in grade 1."""
        return ResClass({1: {0: 1, 1: 1}})

    # -- structure ----------------------------------------------------------

    def grades(self) -> list[int]:
        return sorted(self.components)

    def is_zero(self) -> bool:
        return not self.components

    def is_effective(self) -> bool:
        return all(c > 0 for p in self.components.values() for c in p.values())

    def __add__(self, other: "ResClass") -> "ResClass":
        out = {k: dict(p) for k, p in self.components.items()}
        for k, p in other.components.items():
            out[k] = _hadd(out.get(k, {}), p)
        return ResClass(out)

    def __neg__(self) -> "ResClass":
        return ResClass({k: _hscale(p, -1) for k, p in self.components.items()})

    def __sub__(self, other: "ResClass") -> "ResClass":
        return self + (-other)

    def __mul__(self, other: "ResClass") -> "ResClass":
        out: dict[int, HPoly] = {}
        for k1, p1 in self.components.items():
            for k2, p2 in other.components.items():
                k = k1 + k2
                out[k] = _hadd(out.get(k, {}), _hmul(p1, p2))
        return ResClass(out)

    def scaled(self, n: int) -> "ResClass":
        return ResClass({k: _hscale(p, n) for k, p in self.components.items()})

    def __eq__(self, other) -> bool:
        return isinstance(other, ResClass) and self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())

    def key(self):
        return tuple(
            (k, tuple(sorted(self.components[k].items()))) for k in self.grades()
        )

    def point_count(self, q=None) -> Union[Poly, Fraction]:
        """Substitute u -> q-1, v -> 1; symbolic (Poly in q) when q is None."""
        if q is None:
            total = Poly.zero(1)
            qm1 = Poly(1, {(1,): 1, (0,): -1})
            for p in self.components.values():
                for i, c in p.items():
                    total = total + qm1 ** i * c
            return total
        qv = Q(q)
        return sum(
            (Q(c) * (qv - 1) ** i for p in self.components.values() for i, c in p.items()),
            Q(0),
        )

    def __str__(self) -> str:
        if not self.components:
            return "0"
        bits = []
        for k in self.grades():
            for i, c in sorted(self.components[k].items(), reverse=True):
                j = k - i
                mono = ""
                if i:
                    mono += "u" if i == 1 else f"u^{i}"
                if j:
                    mono += "v" if j == 1 else f"v^{j}"
                if not mono:
                    bits.append(str(c))
                elif c == 1:
                    bits.append(mono)
                elif c == -1:
                    bits.append(f"-{mono}")
                else:
                    bits.append(f"{c}{mono}")
        out = " + ".join(bits)
        return out.replace("+ -", "- ")


def res_arith(a: ResClass, b: ResClass, op: str, semiring: bool = False) -> ResClass:
    if op == "add":
        out = a + b
    elif op == "mul":
        out = a * b
    else:
        raise ValueError(f"unknown op {op!r}")
    if semiring and not (a.is_effective() or a.is_zero()):
        raise ValueError("negative coefficients are not allowed in semiring mode")
    if semiring and not (b.is_effective() or b.is_zero()):
        raise ValueError("negative coefficients are not allowed in semiring mode")
    if semiring and not (out.is_effective() or out.is_zero()):
        raise ValueError("negative coefficients are not allowed in semiring mode")
    return out


def point_count(a: ResClass, q=None):
    return a.point_count(q)


# ---------------------------------------------------------------------------
# value-group representatives


@dataclass(frozen=True)
class GRep:
    """A carrier set with a piecewise linear map to Gamma^k (and maybe a weight)."""

    carrier: SemilinearSet
    to_gamma: QPiecewiseMap
    volume: Optional[QPiecewiseMap] = None

    @property
    def grade(self) -> int:
        return self.to_gamma.out_arity

    def check(self) -> None:
        if not self.carrier.difference(self.to_gamma.domain()).is_empty():
            raise ValueError("map not defined on the whole carrier")

    def chi(self, which: str) -> int:
        chi_g, chi_b, _ = euler(self.carrier)
        return chi_g if which == "Eg" else chi_b


def origin_rep(k: int, volume=None) -> GRep:
    """The point at the origin of Gamma^k with the identity map."""
    factors = tuple(Section(Aff((Q(0),) * j, Q(0))) for j in range(k))
    s = SemilinearSet(k, (QCell(k, factors),))
    vol = None if volume is None else QPiecewiseMap.constant_on(s, volume)
    return GRep(s, QPiecewiseMap.identity_on(s), vol)


def ray_rep(volume=None) -> GRep:
    """The open positive ray with the identity map."""
    s = SemilinearSet.decompose(fm.Cmp(fm.term([1], 0), ">"), 1)
    vol = None if volume is None else QPiecewiseMap.constant_on(s, volume)
    return GRep(s, QPiecewiseMap.identity_on(s), vol)


def _map_product(f: QPiecewiseMap, g: QPiecewiseMap) -> QPiecewiseMap:
    n1, n2 = f.in_arity, g.in_arity
    pieces = []
    for (c1, m1, o1), (c2, m2, o2) in itertools.product(f.pieces, g.pieces):
        cell = set_product(SemilinearSet(n1, (c1,)), SemilinearSet(n2, (c2,))).cells[0]
        rows = [row + (Q(0),) * n2 for row in m1]
        rows += [(Q(0),) * n1 + row for row in m2]
        pieces.append((cell, tuple(rows), o1 + o2))
    return QPiecewiseMap(tuple(pieces))


def _vol_product(f: Optional[QPiecewiseMap], g: Optional[QPiecewiseMap], n1: int, n2: int):
    if f is None and g is None:
        return None
    # a missing weight counts as the constant zero
    if f is None:
        f = _zero_weight(n1)
    if g is None:
        g = _zero_weight(n2)
    pieces = []
    for (c1, m1, o1), (c2, m2, o2) in itertools.product(f.pieces, g.pieces):
        cell = set_product(SemilinearSet(n1, (c1,)), SemilinearSet(n2, (c2,))).cells[0]
        row = m1[0] + m2[0]
        pieces.append((cell, (row,), (o1[0] + o2[0],)))
    return QPiecewiseMap(tuple(pieces))


def _zero_weight(n: int) -> QPiecewiseMap:
    cell = QCell(n, tuple(Band(None, None) for _ in range(n)))
    return QPiecewiseMap(((cell, ((Q(0),) * n,), (Q(0),)),))


def rep_product(a: GRep, b: GRep) -> GRep:
    return GRep(
        set_product(a.carrier, b.carrier),
        _map_product(a.to_gamma, b.to_gamma),
        _vol_product(a.volume, b.volume, a.carrier.arity, b.carrier.arity),
    )


@dataclass(frozen=True)
class GammaGradeClass:
    """Formal integer combination of grade-k representatives."""

    grade: int
    terms: tuple[tuple[int, GRep], ...]

    def __post_init__(self):
        for _, rep in self.terms:
            if rep.grade != self.grade:
                raise ValueError("mixed grades in one class")

    @staticmethod
    def of(rep: GRep, coeff: int = 1) -> "GammaGradeClass":
        return GammaGradeClass(rep.grade, ((coeff, rep),))

    def __add__(self, other: "GammaGradeClass") -> "GammaGradeClass":
        if self.grade != other.grade:
            raise ValueError("grades differ")
        return GammaGradeClass(self.grade, self.terms + other.terms)

    def scaled(self, n: int) -> "GammaGradeClass":
        return GammaGradeClass(self.grade, tuple((n * c, r) for c, r in self.terms))

    def __mul__(self, other: "GammaGradeClass") -> "GammaGradeClass":
        terms = tuple(
            (c1 * c2, rep_product(r1, r2))
            for (c1, r1), (c2, r2) in itertools.product(self.terms, other.terms)
        )
        return GammaGradeClass(self.grade + other.grade, terms)

    def chi(self, which: str) -> int:
        return sum(c * r.chi(which) for c, r in self.terms)


# ---------------------------------------------------------------------------
# RV classes: sums of (residue component) x (value-group representative)


class RVClass:
    """Graded tensor data: grade k -> {representative: grade-k residue poly}."""

    __slots__ = ("parts",)

    def __init__(self, parts: dict[int, dict[GRep, HPoly]]):
        clean: dict[int, dict[GRep, HPoly]] = {}
        for k, d in parts.items():
            kept = {}
            for rep, p in d.items():
                if rep.grade != k:
                    raise ValueError("representative grade does not match component")
                p = {i: c for i, c in p.items() if c != 0}
                if any(not 0 <= i <= k for i in p):
                    raise ValueError("residue component not homogeneous of the grade")
                if p:
                    kept[rep] = p
            if kept:
                clean[k] = kept
        self.parts = clean

    @staticmethod
    def zero() -> "RVClass":
        return RVClass({})

    @staticmethod
    def pair(res: HPoly, rep: GRep) -> "RVClass":
        return RVClass({rep.grade: {rep: dict(res)}})

    @staticmethod
    def from_res(x: ResClass) -> "RVClass":
        """A pure residue class, paired with the origin in each grade."""
        return RVClass({k: {origin_rep(k): dict(p)} for k, p in x.components.items()})

    def grades(self) -> list[int]:
        return sorted(self.parts)

    def is_zero(self) -> bool:
        return not self.parts

    def __add__(self, other: "RVClass") -> "RVClass":
        out = {k: {r: dict(p) for r, p in d.items()} for k, d in self.parts.items()}
        for k, d in other.parts.items():
            slot = out.setdefault(k, {})
            for rep, p in d.items():
                slot[rep] = _hadd(slot.get(rep, {}), p)
        return RVClass(out)

    def __neg__(self) -> "RVClass":
        return RVClass(
            {k: {r: _hscale(p, -1) for r, p in d.items()} for k, d in self.parts.items()}
        )

    def __sub__(self, other: "RVClass") -> "RVClass":
        return self + (-other)

    def __mul__(self, other: "RVClass") -> "RVClass":
        out = RVClass.zero()
        for k1, d1 in self.parts.items():
            for k2, d2 in other.parts.items():
                for (r1, p1), (r2, p2) in itertools.product(d1.items(), d2.items()):
                    out = out + RVClass.pair(_hmul(p1, p2), rep_product(r1, r2))
        return out

    def scaled(self, n: int) -> "RVClass":
        return RVClass(
            {k: {r: _hscale(p, n) for r, p in d.items()} for k, d in self.parts.items()}
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, RVClass):
            return NotImplemented
        return self.key() == other.key()

    def key(self):
        return tuple(
            (
                k,
                tuple(
                    sorted(
                        ((hash(r), tuple(sorted(p.items()))) for r, p in d.items())
                    )
                ),
            )
            for k, d in sorted(self.parts.items())
        )


def rv_arith(a: RVClass, b: RVClass, op: str) -> RVClass:
    if op == "add":
        return a + b
    if op == "mul":
        return a * b
    raise ValueError(f"unknown op {op!r}")


def lift_gamma(x: GammaGradeClass, mode: str = "plain") -> RVClass:
    """Canonical lift: tensor with the grade-k torus class u^k."""
    if mode not in ("plain", "mu"):
        raise ValueError(f"unknown mode {mode!r}")
    k = x.grade
    out = RVClass.zero()
    for c, rep in x.terms:
        if mode == "mu" and rep.volume is None:
            rep = GRep(
                rep.carrier,
                rep.to_gamma,
                QPiecewiseMap.constant_on(rep.carrier, 0),
            )
        out = out + RVClass.pair({k: c}, rep)
    return out


def generator_j(variant: str = "plain", semiring: bool = False) -> RVClass:
    """The kernel generator of the lifting map, in tensor form.

    plain     : 1 + u (x) [ray] - v (x) [origin], grade <= 1
    mu_gamma  : u (x) [ray, weight 0] - v (x) [origin, weight 0]
    mu        : u (x) [ray, weight 1] - v (x) [origin, weight 0]
    """
    if semiring:
        raise ValueError("the kernel generator needs additive inverses")
    if variant == "plain":
        one = RVClass.pair({0: 1}, origin_rep(0))
        return (
            one
            + RVClass.pair({1: 1}, ray_rep())
            - RVClass.pair({0: 1}, origin_rep(1))
        )
    if variant == "mu_gamma":
        return RVClass.pair({1: 1}, ray_rep(volume=0)) - RVClass.pair(
            {0: 1}, origin_rep(1, volume=0)
        )
    if variant == "mu":
        return RVClass.pair({1: 1}, ray_rep(volume=1)) - RVClass.pair(
            {0: 1}, origin_rep(1, volume=0)
        )
    raise ValueError(f"unknown variant {variant!r}")


# ---------------------------------------------------------------------------
# Euler retractions


@dataclass(frozen=True)
class LocalizedUV:
    """num / base^power with base A = u+v or v, kept fully cancelled."""

    base: str  # "A" or "v"
    num: tuple[tuple[int, int], ...]  # grade-`power` component, sorted items
    power: int

    @staticmethod
    def make(base: str, num: HPoly, power: int) -> "LocalizedUV":
        num = {i: c for i, c in num.items() if c != 0}
        grade = power
        while num and power > 0:
            div = _hdiv_a(num, grade) if base == "A" else _hdiv_v(num, grade)
            if div is None:
                break
            num = div
            power -= 1
            grade -= 1
        if not num:
            power = 0
        return LocalizedUV(base, tuple(sorted(num.items())), power)

    def is_zero(self) -> bool:
        return not self.num

    def __str__(self) -> str:
        p = ResClass({self.power: dict(self.num)}) if self.num else ResClass.zero()
        if self.power == 0:
            return str(p)
        den = "A" if self.base == "A" else "v"
        return f"({p}) / {den}^{self.power}"


@dataclass(frozen=True)
class QuotientUV:
    """Image in the quotient by (A) or (v): one integer times u^k per grade."""

    base: str
    values: tuple[tuple[int, int], ...]  # (grade, coefficient of u^grade)

    @staticmethod
    def make(base: str, values: dict[int, int]) -> "QuotientUV":
        return QuotientUV(base, tuple(sorted((k, c) for k, c in values.items() if c)))

    def is_zero(self) -> bool:
        return not self.values


def retract(x: RVClass, which: str = "Eg", mode: str = "plain"):
    """Collapse the value-group parts by an Euler characteristic.

    which = "Eg" uses the generic characteristic and divides by A = u+v;
    which = "Eb" uses the bounded one and divides by v.  In plain mode the
    result is a localized element of grade zero; the mu modes land in the
    quotient by the corresponding grade-1 ideal instead.
    """
    if which not in ("Eg", "Eb"):
        raise ValueError(f"unknown characteristic {which!r}")
    if mode not in ("plain", "mu_gamma", "mu"):
        raise ValueError(f"unknown mode {mode!r}")
    base = "A" if which == "Eg" else "v"
    if mode == "plain":
        if x.is_zero():
            return LocalizedUV(base, (), 0)
        top = max(x.grades())
        num: HPoly = {}
        for k, d in x.parts.items():
            pad = _a_power(top - k) if base == "A" else _v_power(top - k)
            for rep, p in d.items():
                chi = rep.chi(which)
                if chi:
                    num = _hadd(num, _hmul(_hscale(p, chi), pad))
        return LocalizedUV.make(base, num, top)
    values: dict[int, int] = {}
    for k, d in x.parts.items():
        total = 0
        for rep, p in d.items():
            chi = rep.chi(which)
            if not chi:
                continue
            if base == "A":
                total += chi * sum(c * (-1) ** (k - i) for i, c in p.items())
            else:
                total += chi * p.get(k, 0)
        if total:
            values[k] = values.get(k, 0) + total
    return QuotientUV.make(base, values)


# ---------------------------------------------------------------------------
# twistoid refinement


def refine_to_twistoids(
    base: SemilinearSet, assignment: Sequence[tuple[QCell, ResClass]]
) -> list[tuple[SemilinearSet, ResClass]]:
    """Partition the base so the assigned fiber class is constant per part.

    Pieces may overlap only where they agree; pieces with equal classes
    are merged into one part.
    """
    n = base.arity
    cover = SemilinearSet.decompose(
        fm.Or(tuple(c.formula() for c, _ in assignment)), n
    )
    if not base.difference(cover).is_empty():
        raise ValueError("fiber assignment does not cover the base")
    for (c1, r1), (c2, r2) in itertools.combinations(assignment, 2):
        if r1 == r2:
            continue
        clash = SemilinearSet.decompose(
            fm.conj(base.formula(), c1.formula(), c2.formula()), n
        )
        if not clash.is_empty():
            raise ValueError("overlapping pieces carry contradictory fiber data")
    groups: dict = {}
    for cell, res in assignment:
        groups.setdefault(res.key(), (res, []))[1].append(cell)
    out = []
    for res, cells in groups.values():
        region = SemilinearSet.decompose(
            fm.conj(base.formula(), fm.Or(tuple(c.formula() for c in cells))), n
        )
        if not region.is_empty():
            out.append((region, res))
    return out


# ---------------------------------------------------------------------------
# measure-preservation of value-group maps


@dataclass(frozen=True)
class VolumeFormData:
    omega: QPiecewiseMap
    unit_twist: bool = False


def check_gamma_measure_preserving(
    F: QPiecewiseMap,
    src: tuple[SemilinearSet, VolumeFormData],
    dst: tuple[SemilinearSet, VolumeFormData],
    jac: Aff,
) -> MorphismVerdict:
    """Verify omega(x) = omega'(F(x)) + jac(x) identically, with witness."""
    S, vol = src
    T, vol2 = dst
    n = S.arity
    if F.in_arity != n or jac.arity > n:
        raise ValueError("carrier arity mismatch")
    jac = jac.padded(n)
    if not S.difference(F.domain()).is_empty():
        raise ValueError("F is not defined on the whole carrier")
    for cell, mat, off in F.pieces:
        for sub in S.intersect(SemilinearSet(n, (cell,))).cells:
            for wcell, wmat, woff in vol.omega.pieces:
                for wcell2, wmat2, woff2 in vol2.omega.pieces:
                    region = fm.conj(
                        sub.formula(),
                        wcell.formula(),
                        _preimage_formula(wcell2.formula(), mat, off, n),
                    )
                    coeffs = list(wmat[0])
                    const = woff[0] - woff2[0] - jac.const
                    for i, c in enumerate(wmat2[0]):
                        const -= c * off[i]
                        for j in range(n):
                            coeffs[j] -= c * mat[i][j]
                    for j in range(n):
                        coeffs[j] -= jac.coeffs[j]
                    form = Aff(tuple(coeffs), const)
                    if all(c == 0 for c in form.coeffs) and form.const == 0:
                        continue
                    broken = SemilinearSet.decompose(
                        fm.conj(region, fm.Cmp(form.to_term(n), "!=")), n
                    )
                    if not broken.is_empty():
                        return MorphismVerdict(
                            False,
                            "volume form is not transported by the Jacobian",
                            broken.cells[0].sample(),
                        )
    return MorphismVerdict(True)
