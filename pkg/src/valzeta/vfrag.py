"""Integration of monomial weights over valuation-described regions.

A region in n coordinates over a discretely valued field is described
stratum by stratum: a subset of coordinates pinned to zero, a Presburger
set D of valuation vectors for the remaining coordinates, and residue
fibers over D.  Each fiber couples a cell of D with a graded residue
class telling how many leading-residue tuples sit over every valuation
vector; an optional concrete residue pattern ("unit" for any invertible
residue, "one" for the residue 1) makes the fiber enumerable by the
brute-force field oracle.

Volumes and weighted integrals come out as exact rational functions of
q.  The measure is normalised so that each coset of the maximal ideal
has measure 1; the whole valuation ring then has measure q.  The
ramification parameter rho re-reads every description on the value
lattice (1/rho)Z, which at the level of Presburger data is the
``dilated`` reinterpretation: inequality constants and congruences
stretch by rho while coefficients stay put.  Write descriptions with
positive atoms when the rho > 1 reading matters; complement-normalised
constants (x <= -1 standing for x < 0) do not stretch faithfully.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from . import formula as fm
from .genfun import ExponentData, RatFun, zeta_assemble
from .grothring import (
    GRep,
    ResClass,
    RVClass,
    VolumeFormData,
    check_gamma_measure_preserving,
)
from .intlinalg import det, lcm_list, mat_vec, unimodular_inverse
from .polynomial import Poly
from .presburger import (
    Congruence,
    LinTerm,
    PCell,
    PresburgerSet,
    make_cell,
    unit_term,
)
from .semilinear import (
    Aff,
    MorphismVerdict,
    QCell,
    QPiecewiseMap,
    SemilinearSet,
    _preimage_formula,
)

Q = Fraction

#: residue pattern entries for enumerable fibers
UNIT = "unit"
ONE = "one"


def _fr(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


def full_space(n: int) -> SemilinearSet:
    if n == 0:
        return SemilinearSet(0, (QCell(0, ()),))
    return SemilinearSet.decompose(fm.TRUE, n)


# ---------------------------------------------------------------------------
# exact infima over rational relaxations (Fourier-Motzkin)


def _fm_inf(rows, obj_coeffs, obj_const=0) -> Optional[Fraction]:
    """Infimum of an affine form over {row(x) >= 0}; None means unbounded.

    ``rows`` are (coeffs, const) pairs; the system is assumed feasible
    (congruences, if any, were dropped -- the relaxed infimum is still a
    valid lower bound for the lattice points).
    """
    n = len(obj_coeffs)
    oc = tuple(_fr(c) for c in obj_coeffs)
    ext = [(tuple(_fr(c) for c in r) + (Q(0),), _fr(b)) for r, b in rows]
    # introduce y with y == obj via two inequalities, then project onto y
    ext.append((tuple(-c for c in oc) + (Q(1),), -_fr(obj_const)))
    ext.append((oc + (Q(-1),), _fr(obj_const)))
    for i in range(n):
        lowers, uppers, keep = [], [], []
        for r, b in ext:
            if r[i] > 0:
                lowers.append((r, b))
            elif r[i] < 0:
                uppers.append((r, b))
            else:
                keep.append((r, b))
        for rl, bl in lowers:
            for ru, bu in uppers:
                al, au = rl[i], ru[i]
                row = tuple(x * (-au) + y * al for x, y in zip(rl, ru))
                keep.append((row, bl * (-au) + bu * al))
        ext = keep
    best: Optional[Fraction] = None
    for r, b in ext:
        if r[n] > 0:
            cand = -b / r[n]
            if best is None or cand > best:
                best = cand
    return best


def _cell_rows(cell: PCell):
    return [(t.coeffs, t.const) for t in cell.ineqs]


def form_inf(ps: PresburgerSet, coeffs: Sequence, const=0) -> Optional[Fraction]:
    """Infimum of coeffs . x + const over the relaxation of ps; None = -inf."""
    best: Optional[Fraction] = None
    for c in ps.cells:
        v = _fm_inf(_cell_rows(c), coeffs, const)
        if v is None:
            return None
        if best is None or v < best:
            best = v
    return best


def coordinate_lower_bound(ps: PresburgerSet, i: int) -> Optional[Fraction]:
    if not ps.cells:
        return Q(0)
    obj = [0] * ps.arity
    obj[i] = 1
    return form_inf(ps, obj)


# ---------------------------------------------------------------------------
# region data


@dataclass(frozen=True)
class Fiber:
    """A cell of valuation vectors with its residue data.

    ``res`` counts the admissible leading-residue tuples above each
    valuation vector in the cell; it must be homogeneous of the stratum
    grade.  ``pattern`` optionally pins the count to a concrete product
    shape, one entry per nonzero coordinate: UNIT admits every invertible
    residue, ONE exactly the residue 1.  Patterned fibers are the ones
    the truncated field oracle can enumerate.
    """

    cell: PCell
    res: ResClass
    pattern: Optional[tuple[str, ...]] = None


@dataclass(frozen=True)
class Stratum:
    zeros: frozenset[int]
    gammas: PresburgerSet
    fibers: tuple[Fiber, ...]

    @property
    def grade(self) -> int:
        return self.gammas.arity


def stratum(zeros: Iterable[int], gammas: PresburgerSet, fibers=None) -> Stratum:
    """Build a stratum; by default the full residue torus sits over each cell."""
    z = frozenset(zeros)
    k = gammas.arity
    if fibers is None:
        gammas = gammas.disjointified()  # one fiber per cell: cells must not overlap
        fibers = tuple(
            Fiber(c, ResClass.monomial(k, k), (UNIT,) * k) for c in gammas.cells
        )
    return Stratum(z, gammas, tuple(fibers))


@dataclass(frozen=True)
class MonomialRegion:
    arity: int
    strata: tuple[Stratum, ...]

    def __post_init__(self):
        n = self.arity
        for st in self.strata:
            if not st.zeros <= set(range(n)):
                raise ValueError("zero coordinates out of range")
            k = n - len(st.zeros)
            if st.gammas.arity != k:
                raise ValueError("valuation set arity does not match the stratum")
            for fb in st.fibers:
                if fb.cell.arity != k:
                    raise ValueError("fiber cell arity mismatch")
                if any(g not in (k,) for g in fb.res.components):
                    raise ValueError(
                        "fiber class must be homogeneous of the stratum grade"
                    )
                if fb.pattern is not None:
                    if len(fb.pattern) != k or any(
                        p not in (UNIT, ONE) for p in fb.pattern
                    ):
                        raise ValueError("bad residue pattern")
                    units = sum(1 for p in fb.pattern if p == UNIT)
                    if fb.res != ResClass.monomial(k, units):
                        raise ValueError("pattern does not match the fiber class")
            cover = PresburgerSet.from_cells(k, [fb.cell for fb in st.fibers])
            if not st.gammas.difference(cover).is_empty():
                raise ValueError("fibers do not cover the valuation set")
            if not cover.difference(st.gammas).is_empty():
                raise ValueError("fiber cell leaves the valuation set")
            for a in range(len(st.fibers)):
                for b in range(a + 1, len(st.fibers)):
                    pa = PresburgerSet.from_cells(k, [st.fibers[a].cell])
                    pb = PresburgerSet.from_cells(k, [st.fibers[b].cell])
                    if not pa.intersect(pb).is_empty():
                        raise ValueError("fiber cells overlap")
            for i in range(k):
                if coordinate_lower_bound(st.gammas, i) is None:
                    raise ValueError("valuation set is not bounded below")
        for a in range(len(self.strata)):
            for b in range(a + 1, len(self.strata)):
                sa, sb = self.strata[a], self.strata[b]
                if sa.zeros != sb.zeros:
                    continue
                if not sa.gammas.intersect(sb.gammas).is_empty():
                    raise ValueError("strata with equal zero pattern overlap")

    def full_strata(self) -> list[Stratum]:
        """The strata with no coordinate pinned to zero."""
        return [st for st in self.strata if not st.zeros]

    def fiber_at(self, gamma: Sequence[int]) -> Optional[Fiber]:
        """The fiber above an all-coordinates-nonzero valuation vector."""
        for st in self.full_strata():
            if st.gammas.contains(gamma):
                for fb in st.fibers:
                    if fb.cell.contains(gamma):
                        return fb
        return None


def full_region(pset: PresburgerSet) -> MonomialRegion:
    """The region with every coordinate nonzero and valuations in pset."""
    return MonomialRegion(pset.arity, (stratum((), pset),))


def unit_polydisc(n: int) -> MonomialRegion:
    """The full polydisc: one stratum per subset of vanishing coordinates."""
    strata = []
    for mask in range(1 << n):
        zeros = frozenset(i for i in range(n) if mask >> i & 1)
        k = n - len(zeros)
        cell = make_cell(k, [unit_term(k, i) for i in range(k)])
        strata.append(stratum(zeros, PresburgerSet.from_cells(k, [cell])))
    return MonomialRegion(n, tuple(strata))


# ---------------------------------------------------------------------------
# weights


@dataclass(frozen=True)
class ValWeight:
    """Exponent data for the integrand q^{-rho(sum kappa_i f_i + omega)}.

    ``kappa_forms`` are piecewise affine maps of the valuation vector,
    one per formal variable T_i = q^{-kappa_i}; ``gamma_form`` is an
    optional volume-form twist folded straight into the power of q.
    ``kappa_values`` optionally records numeric kappa exponents for the
    truncated field oracle; the symbolic engine ignores them.
    """

    arity: int
    kappa_forms: tuple[QPiecewiseMap, ...] = ()
    gamma_form: Optional[QPiecewiseMap] = None
    kappa_values: Optional[tuple[Fraction, ...]] = None

    def __post_init__(self):
        for f in self.kappa_forms:
            if f.in_arity != self.arity or f.out_arity != 1:
                raise ValueError("kappa form arity mismatch")
        if self.gamma_form is not None:
            if self.gamma_form.in_arity != self.arity or self.gamma_form.out_arity != 1:
                raise ValueError("volume form arity mismatch")
        if self.kappa_values is not None:
            if len(self.kappa_values) != len(self.kappa_forms):
                raise ValueError("one numeric kappa per kappa form")
            object.__setattr__(
                self, "kappa_values", tuple(_fr(x) for x in self.kappa_values)
            )

    @staticmethod
    def trivial(arity: int) -> "ValWeight":
        return ValWeight(arity)

    @staticmethod
    def monomial(arity: int, exponents, kappa_values=None) -> "ValWeight":
        """One kappa form per exponent row: f(gamma) = row . gamma."""
        space = full_space(arity)
        forms = tuple(
            QPiecewiseMap.affine_on(space, (tuple(row),), (0,)) for row in exponents
        )
        return ValWeight(arity, forms, None, kappa_values)

    @property
    def k(self) -> int:
        return len(self.kappa_forms)


# ---------------------------------------------------------------------------
# lattice reading of rational cells


def _lattice_atoms(atoms: Sequence[fm.Cmp], arity: int, rho: int) -> Optional[PCell]:
    """The integer cell {m : m/rho satisfies the given rational atoms}."""
    ineqs: list[LinTerm] = []
    for atom in atoms:
        t = atom.term
        coeffs = [_fr(c) for c in t.coeffs] + [Q(0)] * (arity - len(t.coeffs))
        den = lcm_list([c.denominator for c in coeffs] + [_fr(t.const).denominator])
        row = tuple(int(c * den) for c in coeffs)
        const = int(_fr(t.const) * den * rho)
        if atom.op == ">=":
            ineqs.append(LinTerm(row, const))
        elif atom.op == ">":
            ineqs.append(LinTerm(row, const - 1))
        elif atom.op == "==":
            ineqs.append(LinTerm(row, const))
            ineqs.append(LinTerm(tuple(-c for c in row), -const))
        else:
            raise ValueError(f"cannot read atom {atom.op!r} on the lattice")
    return make_cell(arity, ineqs)


def lattice_points(s: SemilinearSet) -> PresburgerSet:
    """The integer points of a semilinear set with rational data."""
    cells = [_lattice_atoms(c.atoms(), s.arity, 1) for c in s.cells]
    return PresburgerSet.from_cells(s.arity, [c for c in cells if c is not None], disjoint=True)


def relaxation(ps: PresburgerSet) -> SemilinearSet:
    """Rational relaxation of the inequality atoms; congruences are dropped."""
    parts = []
    for c in ps.cells:
        parts.append(
            fm.And(
                tuple(
                    fm.Cmp(fm.term(list(t.coeffs), t.const), ">=") for t in c.ineqs
                )
            )
        )
    if not parts:
        return SemilinearSet.empty(ps.arity)
    if ps.arity == 0:
        return full_space(0)
    return SemilinearSet.decompose(fm.Or(tuple(parts)), ps.arity)


# ---------------------------------------------------------------------------
# the zeta function


def _lattice_domain(f: QPiecewiseMap, arity: int, rho: int) -> PresburgerSet:
    cells = [_lattice_atoms(c.atoms(), arity, rho) for c, _, _ in f.pieces]
    return PresburgerSet.from_cells(arity, [c for c in cells if c is not None])


def _check_weight_cover(d: PresburgerSet, weight: ValWeight, rho: int) -> None:
    maps = list(weight.kappa_forms)
    if weight.gamma_form is not None:
        maps.append(weight.gamma_form)
    for f in maps:
        if not d.difference(_lattice_domain(f, d.arity, rho)).is_empty():
            raise ValueError("weight pieces do not cover the region")


def _exp_coeff(x: Fraction):
    x = _fr(x)
    return int(x) if x.denominator == 1 else x


def zeta_pieces(
    region: MonomialRegion, weight: Optional[ValWeight] = None, rho: int = 1
) -> list[tuple[Poly, PresburgerSet, ExponentData]]:
    """Raw (count, lattice set, exponent data) triples behind :func:`zeta`.

    Exposed so callers can reassemble or re-scale the same sum, e.g. to
    trace a family of dilations back to its primitive members.
    """
    n = region.arity
    if weight is None:
        weight = ValWeight.trivial(n)
    if weight.arity != n:
        raise ValueError("weight arity does not match the region")
    if rho < 1:
        raise ValueError("rho must be a positive integer")
    pieces = []
    for st in region.full_strata():
        d_rho = st.gammas.dilated(rho)
        if d_rho.is_empty():
            continue
        _check_weight_cover(d_rho, weight, rho)
        omega_opts = (
            list(weight.gamma_form.pieces) if weight.gamma_form is not None else [None]
        )
        for fb in st.fibers:
            count = fb.res.point_count()
            if count.is_zero:
                continue
            base = PresburgerSet.from_cells(n, [fb.cell]).dilated(rho)
            for combo in itertools.product(*(f.pieces for f in weight.kappa_forms)):
                for wp in omega_opts:
                    chosen = list(combo) + ([wp] if wp is not None else [])
                    part = base
                    for pc, _, _ in chosen:
                        lc = _lattice_atoms(pc.atoms(), n, rho)
                        if lc is None:
                            part = None
                            break
                        part = part.intersect(PresburgerSet.from_cells(n, [lc]))
                        if part.is_empty():
                            part = None
                            break
                    if part is None:
                        continue
                    lq_coeffs = [Q(1)] * n
                    lq_const = Q(0)
                    if wp is not None:
                        _, wmat, woff = wp
                        for j in range(n):
                            lq_coeffs[j] += wmat[0][j]
                        lq_const = rho * woff[0]
                    lq = LinTerm(
                        tuple(_exp_coeff(c) for c in lq_coeffs), _exp_coeff(lq_const)
                    )
                    lts = tuple(
                        LinTerm(
                            tuple(_exp_coeff(c) for c in mat[0]),
                            _exp_coeff(rho * off[0]),
                        )
                        for _, mat, off in combo
                    )
                    pieces.append((count, part, ExponentData(lq, lts)))
    return pieces


def zeta(
    region: MonomialRegion,
    weight: Optional[ValWeight] = None,
    rho: int = 1,
    normalization: str = "paper",
) -> RatFun:
    """The weighted volume sum as an exact rational function of q and T.

    Per valuation vector the integrand contributes
    count(q) * q^{-(sum m_j + rho*omega)} * prod_i T_i^{rho f_i},
    summed over the rho-dilated lattice description.  Strata with a
    coordinate pinned to zero have measure zero and are skipped.
    """
    n = region.arity
    if weight is None:
        weight = ValWeight.trivial(n)
    if normalization not in ("paper", "classical"):
        raise ValueError("normalization must be 'paper' or 'classical'")
    k = weight.k
    pieces = zeta_pieces(region, weight, rho)
    if not pieces:
        return RatFun.zero(k)
    out = zeta_assemble(pieces, 1)
    if normalization == "classical":
        out = out * RatFun.monomial((-n,) + (0,) * k)
    return out


def volume_series(
    region: MonomialRegion,
    weight: Optional[ValWeight] = None,
    rho: int = 1,
    normalization: str = "paper",
) -> RatFun:
    """The volume of the region, weighted if a weight is given."""
    return zeta(region, weight, rho, normalization)


# ---------------------------------------------------------------------------
# the class of a region


def _congruence_charts(cell: PCell, k: int):
    """Split a cell into congruence-free charts gamma = M*delta + r.

    Yields (delta_cell, matrix, offset) with rational matrix data; the
    affine map is a bijection from the integer points of the delta cell
    onto the residue class of the original cell.
    """
    mods = [g.modulus for g in cell.congs]
    m = lcm_list(mods) if mods else 1
    if m == 1:
        ident = tuple(tuple(Q(int(i == j)) for j in range(k)) for i in range(k))
        yield cell, ident, (Q(0),) * k
        return
    if m**k > 20000:
        raise ValueError("congruence moduli too large to chart")
    mat = tuple(tuple(Q(m) if i == j else Q(0) for j in range(k)) for i in range(k))
    for r in itertools.product(range(m), repeat=k):
        if not all(g.holds(r) for g in cell.congs):
            continue
        ineqs = [LinTerm(tuple(m * c for c in t.coeffs), t(r)) for t in cell.ineqs]
        d = make_cell(k, ineqs)
        if d is None or PresburgerSet.from_cells(k, [d]).is_empty():
            continue
        yield d, mat, tuple(Q(x) for x in r)


def _cell_relaxation(cell: PCell, k: int) -> SemilinearSet:
    if k == 0:
        return full_space(0)
    f = fm.And(
        tuple(fm.Cmp(fm.term(list(t.coeffs), t.const), ">=") for t in cell.ineqs)
    )
    return SemilinearSet.decompose(f, k)


def _compose_affine(
    f: QPiecewiseMap, mat, off, carrier: SemilinearSet
) -> QPiecewiseMap:
    """The map x -> f(mat*x + off), with pieces cut against the carrier."""
    n_in = carrier.arity
    pieces = []
    for c, m2, o2 in f.pieces:
        if n_in == 0:
            dom = carrier
        else:
            dom = SemilinearSet.decompose(
                _preimage_formula(c.formula(), mat, off, n_in), n_in
            ).intersect(carrier)
        new_mat = tuple(
            tuple(
                sum((m2[i][a] * mat[a][j] for a in range(len(mat))), Q(0))
                for j in range(n_in)
            )
            for i in range(len(m2))
        )
        new_off = tuple(
            sum((m2[i][a] * off[a] for a in range(len(off))), o2[i])
            for i in range(len(m2))
        )
        for cc in dom.cells:
            pieces.append((cc, new_mat, new_off))
    if not pieces:
        raise ValueError("composed map has empty domain")
    out = QPiecewiseMap(tuple(pieces))
    covered = carrier.difference(out.domain())
    if not covered.is_empty():
        raise ValueError("volume form undefined on part of the stratum")
    return out


def integral_class(
    region: MonomialRegion, weight: Optional[ValWeight] = None
) -> RVClass:
    """The class of the region in the graded ring, one tensor pair per chart.

    Each stratum contributes its fiber classes in grade n - #zeros,
    tensored with the valuation set carrying the identity map (after the
    congruence classes of D are re-parametrised to plain cells).  A
    volume-form twist rides along on the carrier; kappa forms have no
    class-level meaning and are rejected.
    """
    n = region.arity
    if weight is None:
        weight = ValWeight.trivial(n)
    if weight.kappa_forms:
        raise ValueError("kappa-graded classes are not represented; use zeta")
    if weight.gamma_form is not None and any(
        st.zeros for st in region.strata
    ):
        raise ValueError("volume form on a degenerate stratum is not defined")
    total = RVClass.zero()
    for st in region.strata:
        k = st.grade
        for fb in st.fibers:
            hp = fb.res.components.get(k)
            if not hp:
                continue
            for dcell, mat, off in _congruence_charts(fb.cell, k):
                carrier = _cell_relaxation(dcell, k)
                if carrier.is_empty():
                    continue
                gmap = QPiecewiseMap.affine_on(carrier, mat, off)
                vol = None
                if weight.gamma_form is not None:
                    vol = _compose_affine(weight.gamma_form, mat, off, carrier)
                total = total + RVClass.pair(dict(hp), GRep(carrier, gmap, vol))
    return total


# ---------------------------------------------------------------------------
# Fubini reorderings


def _permute_linterm(t: LinTerm, new_order: Sequence[int]) -> LinTerm:
    return LinTerm(tuple(t.coeffs[j] for j in new_order), t.const)


def _permute_pcell(c: PCell, new_order: Sequence[int]) -> Optional[PCell]:
    return make_cell(
        len(new_order),
        [_permute_linterm(t, new_order) for t in c.ineqs],
        [
            Congruence(_permute_linterm(g.term, new_order), g.residue, g.modulus)
            for g in c.congs
        ],
    )


def _permute_pset(ps: PresburgerSet, new_order: Sequence[int]) -> PresburgerSet:
    return PresburgerSet.from_cells(
        ps.arity, [_permute_pcell(c, new_order) for c in ps.cells], disjoint=ps.disjoint
    )


def _permute_formula(g: fm.Formula, new_order: Sequence[int]) -> fm.Formula:
    n = len(new_order)

    def sub(t: fm.Term) -> fm.Term:
        coeffs = list(t.coeffs) + [0] * (n - len(t.coeffs))
        return fm.Term(tuple(coeffs[j] for j in new_order), t.const)

    if isinstance(g, fm.Cmp):
        return fm.Cmp(sub(g.term), g.op)
    if isinstance(g, fm.Cong):
        return fm.Cong(sub(g.term), g.residue, g.modulus)
    if isinstance(g, fm.And):
        return fm.And(tuple(_permute_formula(p, new_order) for p in g.parts))
    if isinstance(g, fm.Or):
        return fm.Or(tuple(_permute_formula(p, new_order) for p in g.parts))
    if isinstance(g, fm.Not):
        return fm.Not(_permute_formula(g.part, new_order))
    raise ValueError("cannot permute a quantified formula")


def _permute_qmap(f: QPiecewiseMap, new_order: Sequence[int]) -> QPiecewiseMap:
    pieces = []
    for c, mat, off in f.pieces:
        dom = SemilinearSet.decompose(
            _permute_formula(c.formula(), new_order), len(new_order)
        )
        new_mat = tuple(tuple(row[j] for j in new_order) for row in mat)
        for cc in dom.cells:
            pieces.append((cc, new_mat, off))
    return QPiecewiseMap(tuple(pieces))


def _permute_region(region: MonomialRegion, new_order: Sequence[int]) -> MonomialRegion:
    n = region.arity
    strata = []
    for st in region.strata:
        new_zeros = frozenset(j for j in range(n) if new_order[j] in st.zeros)
        old_nz = sorted(set(range(n)) - st.zeros)
        new_nz = sorted(j for j in range(n) if new_order[j] not in st.zeros)
        col_perm = [old_nz.index(new_order[j]) for j in new_nz]
        fibers = []
        for fb in st.fibers:
            cell = _permute_pcell(fb.cell, col_perm)
            if cell is None:
                continue
            pattern = (
                tuple(fb.pattern[a] for a in col_perm) if fb.pattern is not None else None
            )
            fibers.append(Fiber(cell, fb.res, pattern))
        strata.append(Stratum(new_zeros, _permute_pset(st.gammas, col_perm), tuple(fibers)))
    return MonomialRegion(n, tuple(strata))


def integrate_ordered(
    region: MonomialRegion,
    weight: Optional[ValWeight] = None,
    order: Optional[Sequence[int]] = None,
    rho: int = 1,
    normalization: str = "paper",
) -> RatFun:
    """The integral computed coordinate by coordinate in the given order.

    ``order`` lists the coordinates integrated first (innermost); any
    coordinates left out are integrated afterwards.  The value never
    depends on the order -- exposing it lets tests state that fact.
    """
    n = region.arity
    if weight is None:
        weight = ValWeight.trivial(n)
    listed = list(order) if order is not None else list(range(n))
    if len(set(listed)) != len(listed) or any(i not in range(n) for i in listed):
        raise ValueError("order must name distinct coordinates")
    others = [i for i in range(n) if i not in listed]
    new_order = others + listed[::-1]
    r2 = _permute_region(region, new_order)
    w2 = ValWeight(
        n,
        tuple(_permute_qmap(f, new_order) for f in weight.kappa_forms),
        _permute_qmap(weight.gamma_form, new_order)
        if weight.gamma_form is not None
        else None,
        weight.kappa_values,
    )
    return zeta(r2, w2, rho, normalization)


# ---------------------------------------------------------------------------
# monomial changes of variables


@dataclass(frozen=True)
class MonomialMap:
    """x_i -> c_i * prod_j x_j^{M[i][j]} with unit constants of the given valuations."""

    matrix: tuple[tuple[int, ...], ...]
    unit_vals: tuple[int, ...]

    def __post_init__(self):
        mat = tuple(tuple(int(x) for x in row) for row in self.matrix)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "unit_vals", tuple(int(x) for x in self.unit_vals))
        n = len(mat)
        if any(len(row) != n for row in mat) or len(self.unit_vals) != n:
            raise ValueError("square matrix and one unit valuation per row required")
        if det([list(r) for r in mat]) not in (1, -1):
            raise ValueError("matrix is not unimodular")

    @property
    def arity(self) -> int:
        return len(self.matrix)

    def inverse(self) -> "MonomialMap":
        minv = unimodular_inverse([list(r) for r in self.matrix])
        shift = mat_vec(minv, list(self.unit_vals))
        return MonomialMap(
            tuple(tuple(r) for r in minv), tuple(-x for x in shift)
        )

    def gamma_image(self, gamma: Sequence[int]) -> tuple[int, ...]:
        img = mat_vec([list(r) for r in self.matrix], list(gamma))
        return tuple(a + b for a, b in zip(img, self.unit_vals))

    def jacobian_form(self) -> Aff:
        """v(jacobian) as an affine form of the valuation vector."""
        n = self.arity
        coeffs = tuple(
            Q(sum(self.matrix[i][j] for i in range(n)) - 1) for j in range(n)
        )
        return Aff(coeffs, Q(sum(self.unit_vals)))


def _transform_cell(c: PCell, minv, shift) -> Optional[PCell]:
    """Substitute gamma = minv*(gamma' ) - shift into a cell's atoms."""
    k = c.arity

    def sub(t: LinTerm) -> LinTerm:
        coeffs = tuple(
            sum(t.coeffs[i] * minv[i][j] for i in range(k)) for j in range(k)
        )
        const = t.const - sum(t.coeffs[i] * shift[i] for i in range(k))
        return LinTerm(coeffs, const)

    return make_cell(
        k,
        [sub(t) for t in c.ineqs],
        [Congruence(sub(g.term), g.residue, g.modulus) for g in c.congs],
    )


def _transform_pset(ps: PresburgerSet, minv, shift) -> PresburgerSet:
    return PresburgerSet.from_cells(
        ps.arity, [_transform_cell(c, minv, shift) for c in ps.cells], disjoint=ps.disjoint
    )


def _zero_omega(n: int) -> QPiecewiseMap:
    return QPiecewiseMap.constant_on(full_space(n), 0)


def change_of_variables(
    region: MonomialRegion, weight: Optional[ValWeight], mmap: MonomialMap
) -> tuple[MonomialRegion, ValWeight]:
    """Push a region and weight forward along a monomial map.

    The valuation data moves by gamma' = M*gamma + v(c); the weight is
    composed with the inverse and the valuation of the inverse Jacobian
    is added to the volume form, so that zeta of the input pair equals
    zeta of the output pair identically.  Raises if the matrix breaks a
    zero pattern, if a pinned residue fiber would have to transport
    along a nontrivial map, or if the image is not bounded below.
    """
    n = region.arity
    if mmap.arity != n:
        raise ValueError("map arity does not match the region")
    if weight is None:
        weight = ValWeight.trivial(n)
    m = mmap.matrix
    strata2 = []
    for st in region.strata:
        nz = sorted(set(range(n)) - st.zeros)
        for j in st.zeros:
            if any(m[i][j] != (1 if i == j else 0) for i in range(n)):
                raise ValueError("map does not preserve the zero coordinates")
        m0 = [[m[i][j] for j in nz] for i in nz]
        v0 = [mmap.unit_vals[i] for i in nz]
        m0inv = unimodular_inverse(m0) if nz else []
        shift = mat_vec(m0inv, v0) if nz else []
        trivial_here = all(
            m0[i][j] == (1 if i == j else 0) for i in range(len(nz)) for j in range(len(nz))
        ) and all(x == 0 for x in v0)
        fibers2 = []
        for fb in st.fibers:
            if (
                fb.pattern is not None
                and any(p != UNIT for p in fb.pattern)
                and not trivial_here
            ):
                raise ValueError(
                    "pinned residue fibers do not transport along a nontrivial map"
                )
            cell2 = _transform_cell(fb.cell, m0inv, shift)
            if cell2 is None:
                continue
            fibers2.append(Fiber(cell2, fb.res, fb.pattern))
        strata2.append(
            Stratum(st.zeros, _transform_pset(st.gammas, m0inv, shift), tuple(fibers2))
        )
    region2 = MonomialRegion(n, tuple(strata2))

    inv = mmap.inverse()
    minv_f = tuple(tuple(Q(x) for x in row) for row in inv.matrix)
    b = tuple(Q(x) for x in inv.unit_vals)
    support = _full_support_relaxation(region2)
    if support.is_empty():
        return region2, weight
    kforms2 = tuple(
        _compose_affine(f, minv_f, b, support) for f in weight.kappa_forms
    )
    base_omega = weight.gamma_form if weight.gamma_form is not None else _zero_omega(n)
    om2 = _compose_affine(base_omega, minv_f, b, support)
    jinv = inv.jacobian_form()
    om2 = QPiecewiseMap(
        tuple(
            (
                c,
                (tuple(mat[0][j] + jinv.coeffs[j] for j in range(n)),),
                (off[0] + jinv.const,),
            )
            for c, mat, off in om2.pieces
        )
    )
    weight2 = ValWeight(n, kforms2, om2, weight.kappa_values)
    return region2, weight2


def _full_support_relaxation(region: MonomialRegion) -> SemilinearSet:
    n = region.arity
    parts = []
    for st in region.full_strata():
        parts.append(relaxation(st.gammas).formula())
    if not parts:
        return SemilinearSet.empty(n)
    return SemilinearSet.decompose(fm.Or(tuple(parts)), n)


def check_measure_preserving(
    mmap: MonomialMap,
    src: tuple[MonomialRegion, Optional[QPiecewiseMap]],
    dst: tuple[MonomialRegion, Optional[QPiecewiseMap]],
) -> MorphismVerdict:
    """Verify omega(gamma) = omega'(M gamma + v) + v(jacobian)(gamma).

    The identity is checked exactly on the rational relaxation of the
    nonzero-coordinate strata; a failed check carries a witness point.
    """
    region, om = src
    region2, om2 = dst
    n = region.arity
    carrier = _full_support_relaxation(region)
    carrier2 = _full_support_relaxation(region2)
    mat = tuple(tuple(Q(x) for x in row) for row in mmap.matrix)
    off = tuple(Q(x) for x in mmap.unit_vals)
    f = QPiecewiseMap.affine_on(carrier, mat, off)
    va = VolumeFormData(om if om is not None else _zero_omega(n))
    vb = VolumeFormData(om2 if om2 is not None else _zero_omega(n))
    return check_gamma_measure_preserving(
        f, (carrier, va), (carrier2, vb), mmap.jacobian_form()
    )
