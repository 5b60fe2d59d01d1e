"""Integer linear constraint sets with congruences.

A :class:`PCell` is a conjunction of affine inequalities ``t(x) >= 0`` and
congruences ``t(x) == r (mod m)`` over ``Z^n``.  A :class:`PresburgerSet` is
a finite disjoint union of cells; disjointness is maintained eagerly by all
the set operations, so downstream summation can add cell contributions
without inclusion-exclusion.

Quantifier elimination is Cooper-style: scale the bound variable so all its
coefficients become ``+-1``, then replace the existential by substitutions
``x = (lower bound) + d`` for ``d`` ranging over the lcm of the moduli.
Coefficient growth is accepted; all arithmetic is exact bigint.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import gcd
from typing import Iterable, Iterator, Sequence

from . import formula as fm
from .intlinalg import (
    det,
    lcm_list,
    mat_vec,
    saturated_row_basis,
    smith_normal_form,
    transpose,
    unimodular_completion,
    unimodular_inverse,
)


# ---------------------------------------------------------------------------
# linear terms


@dataclass(frozen=True)
class LinTerm:
    """Integer affine form ``sum coeffs[i]*x_i + const``."""

    coeffs: tuple[int, ...]
    const: int

    @property
    def arity(self) -> int:
        return len(self.coeffs)

    def __call__(self, point: Sequence[int]) -> int:
        return sum(c * x for c, x in zip(self.coeffs, point)) + self.const

    def __add__(self, other: "LinTerm") -> "LinTerm":
        return LinTerm(tuple(a + b for a, b in zip(self.coeffs, other.coeffs)), self.const + other.const)

    def __neg__(self) -> "LinTerm":
        return LinTerm(tuple(-c for c in self.coeffs), -self.const)

    def __sub__(self, other: "LinTerm") -> "LinTerm":
        return self + (-other)

    def scaled(self, k: int) -> "LinTerm":
        return LinTerm(tuple(k * c for c in self.coeffs), k * self.const)

    def shifted(self, k: int) -> "LinTerm":
        return LinTerm(self.coeffs, self.const + k)

    def drop_var(self, var: int) -> "LinTerm":
        assert self.coeffs[var] == 0
        return LinTerm(self.coeffs[:var] + self.coeffs[var + 1 :], self.const)

    def substitute(self, var: int, repl: "LinTerm") -> "LinTerm":
        """Replace ``x_var`` by ``repl`` (an affine form over the remaining
        variables, indexed with ``var`` removed)."""
        a = self.coeffs[var]
        rest = self.coeffs[:var] + self.coeffs[var + 1 :]
        coeffs = tuple(r + a * c for r, c in zip(rest, repl.coeffs))
        return LinTerm(coeffs, self.const + a * repl.const)

    def insert_var(self, var: int, coeff: int = 0) -> "LinTerm":
        return LinTerm(self.coeffs[:var] + (coeff,) + self.coeffs[var:], self.const)

    def is_constant(self) -> bool:
        return all(c == 0 for c in self.coeffs)


def lt(coeffs: Sequence[int], const: int = 0) -> LinTerm:
    return LinTerm(tuple(int(c) for c in coeffs), int(const))


def unit_term(arity: int, var: int, coeff: int = 1, const: int = 0) -> LinTerm:
    coeffs = [0] * arity
    coeffs[var] = coeff
    return LinTerm(tuple(coeffs), const)


@dataclass(frozen=True)
class Congruence:
    """``term == residue (mod modulus)`` with the constant folded into the
    residue (``term.const == 0`` in normal form)."""

    term: LinTerm
    residue: int
    modulus: int

    def holds(self, point: Sequence[int]) -> bool:
        return self.term(point) % self.modulus == self.residue

    def stretched(self, k: int) -> "Congruence":
        """The condition satisfied by k*x exactly when x satisfies this one."""
        assert k > 0
        return Congruence(self.term, self.residue * k, self.modulus * k)


# ---------------------------------------------------------------------------
# cells


@dataclass(frozen=True)
class PCell:
    arity: int
    ineqs: tuple[LinTerm, ...]
    congs: tuple[Congruence, ...]

    def contains(self, point: Sequence[int]) -> bool:
        return all(t(point) >= 0 for t in self.ineqs) and all(c.holds(point) for c in self.congs)

    def with_atoms(self, ineqs: Iterable[LinTerm] = (), congs: Iterable[Congruence] = ()) -> "PCell | None":
        return make_cell(self.arity, list(self.ineqs) + list(ineqs), list(self.congs) + list(congs))


def make_cell(
    arity: int,
    ineqs: Iterable[LinTerm] = (),
    congs: Iterable[tuple[LinTerm, int, int] | Congruence] = (),
) -> PCell | None:
    """Normalise a conjunction into a cell; return None if it is
    syntactically contradictory.

    Normalisation keeps only the tightest inequality per coefficient
    vector, rejects opposed pairs with a negative gap, and merges
    congruences on the same linear form by CRT (rejecting on conflict).
    These cheap checks keep the disjointification chains from splitting
    against cells they cannot meet.
    """
    best: dict[tuple[int, ...], int] = {}
    order: list[tuple[int, ...]] = []
    for t in ineqs:
        if t.arity != arity:
            raise ValueError("inequality arity mismatch")
        g = gcd_of(t.coeffs)
        if g == 0:
            if t.const < 0:
                return None
            continue
        if g > 1:
            t = LinTerm(tuple(c // g for c in t.coeffs), t.const // g)  # floor tightens
        key = t.coeffs
        if key in best:
            best[key] = min(best[key], t.const)
        else:
            best[key] = t.const
            order.append(key)
    for key in order:
        neg = tuple(-c for c in key)
        if neg in best and best[key] + best[neg] < 0:
            return None
    out_ineqs = [LinTerm(key, best[key]) for key in order]

    merged: dict[tuple[int, ...], tuple[int, int]] = {}  # coeffs -> (residue, modulus)
    cong_order: list[tuple[int, ...]] = []
    for c in congs:
        if not isinstance(c, Congruence):
            term, r, m = c
            c = Congruence(term, r, m)
        m = c.modulus
        if m < 1:
            raise ValueError("modulus must be positive")
        if m == 1:
            continue
        r = (c.residue - c.term.const) % m
        coeffs = c.term.coeffs
        lead = next((x for x in coeffs if x != 0), 0)
        if lead < 0:
            coeffs = tuple(-x for x in coeffs)
            r = (-r) % m
        if coeffs in merged:
            prev = _crt(merged[coeffs], (r, m))
            if prev is None:
                return None
            merged[coeffs] = prev
        else:
            merged[coeffs] = (r, m)
            cong_order.append(coeffs)
    out_congs: list[Congruence] = []
    for coeffs in cong_order:
        r, m = merged[coeffs]
        if m == 1:
            continue
        red = tuple(x % m for x in coeffs)
        if all(x == 0 for x in red):
            if r != 0:
                return None
            continue
        out_congs.append(Congruence(LinTerm(red, 0), r, m))
    return PCell(arity, tuple(out_ineqs), tuple(out_congs))


def _crt(a: tuple[int, int], b: tuple[int, int]) -> tuple[int, int] | None:
    """Combine two residue conditions; None when they are incompatible."""
    r1, m1 = a
    r2, m2 = b
    g = gcd(m1, m2)
    if (r2 - r1) % g != 0:
        return None
    l = m1 // g * m2
    t = ((r2 - r1) // g) * pow(m1 // g, -1, m2 // g) % (m2 // g) if m2 != g else 0
    return ((r1 + m1 * t) % l, l)


def gcd_of(xs: Iterable[int]) -> int:
    g = 0
    for x in xs:
        g = gcd(g, abs(x))
    return g


def negate_ineq(t: LinTerm) -> LinTerm:
    """not (t >= 0)  <=>  -t - 1 >= 0  over the integers."""
    return (-t).shifted(-1)


# ---------------------------------------------------------------------------
# sets


class PresburgerSet:
    """Finite union of cells in Z^arity.

    ``disjoint`` records whether the cells are known pairwise disjoint.
    Membership, emptiness and the boolean algebra never care; consumers
    that sum a measure cell by cell must go through :meth:`disjointified`
    first.  Carving a union apart can be exponentially more expensive
    than building it, so it is deferred until someone actually needs it.
    """

    __slots__ = ("arity", "cells", "disjoint", "_carved")

    def __init__(self, arity: int, cells: Sequence[PCell], disjoint: bool = True):
        self.arity = arity
        self.cells = tuple(c for c in cells if c is not None)
        self.disjoint = disjoint or len(self.cells) <= 1
        self._carved: "PresburgerSet | None" = None
        for c in self.cells:
            if c.arity != arity:
                raise ValueError("cell arity mismatch")

    # -- constructors ---------------------------------------------------

    @classmethod
    def empty(cls, arity: int) -> "PresburgerSet":
        return cls(arity, ())

    @classmethod
    def universe(cls, arity: int) -> "PresburgerSet":
        cell = make_cell(arity)
        assert cell is not None
        return cls(arity, (cell,))

    @classmethod
    def from_cells(cls, arity: int, cells: Sequence[PCell | None], disjoint: bool = False) -> "PresburgerSet":
        live = [c for c in cells if c is not None]
        return cls(arity, live, disjoint=disjoint)

    @classmethod
    def from_formula(cls, f: fm.Formula, arity: int) -> "PresburgerSet":
        cells = _formula_cells(f, arity, positive=True)
        return cls(arity, cells, disjoint=False)

    def disjointified(self) -> "PresburgerSet":
        """An equal set whose cells are pairwise disjoint."""
        if self.disjoint:
            return self
        if self._carved is None:
            self._carved = PresburgerSet(self.arity, _disjointify(self.cells))
        return self._carved

    # -- basic queries --------------------------------------------------

    def contains(self, point: Sequence[int]) -> bool:
        return any(c.contains(point) for c in self.cells)

    def points_in_box(self, bounds: Sequence[tuple[int, int]]) -> list[tuple[int, ...]]:
        """All members inside the product box, in lexicographic order."""
        if len(bounds) != self.arity:
            raise ValueError("box arity mismatch")
        ranges = [range(lo, hi + 1) for lo, hi in bounds]
        return [p for p in itertools.product(*ranges) if self.contains(p)]

    def is_empty(self) -> bool:
        return all(_cell_is_empty(c) for c in self.cells)

    # -- boolean algebra ------------------------------------------------

    def intersect(self, other: "PresburgerSet") -> "PresburgerSet":
        self._check(other)
        cells = []
        for a in self.cells:
            for b in other.cells:
                cells.append(make_cell(self.arity, a.ineqs + b.ineqs, a.congs + b.congs))
        return PresburgerSet(
            self.arity,
            [c for c in cells if c is not None],
            disjoint=self.disjoint and other.disjoint,
        )

    def difference(self, other: "PresburgerSet") -> "PresburgerSet":
        self._check(other)
        cells = list(self.cells)
        for d in other.cells:
            cells = [piece for c in cells for piece in _cell_minus_cell(c, d)]
        return PresburgerSet(self.arity, cells, disjoint=self.disjoint)

    def union(self, other: "PresburgerSet") -> "PresburgerSet":
        self._check(other)
        return PresburgerSet(
            self.arity,
            list(self.cells) + list(other.difference(self).cells),
            disjoint=self.disjoint and other.disjoint,
        )

    def complement(self) -> "PresburgerSet":
        return PresburgerSet.universe(self.arity).difference(self)

    def equivalent(self, other: "PresburgerSet") -> bool:
        return self.difference(other).is_empty() and other.difference(self).is_empty()

    def _check(self, other: "PresburgerSet") -> None:
        if self.arity != other.arity:
            raise ValueError("arity mismatch between sets")

    # -- quantifier elimination ----------------------------------------

    def eliminate(self, var: int | None = None) -> "PresburgerSet":
        """Project out one variable (default: the last)."""
        if var is None:
            var = self.arity - 1
        if not (0 <= var < self.arity):
            raise ValueError("variable index out of range")
        cells: list[PCell] = []
        for c in self.cells:
            cells.extend(_eliminate_cell(c, var))
        return PresburgerSet(self.arity - 1, cells, disjoint=False)

    # -- scaling --------------------------------------------------------

    def scale(self, k: int) -> "PresburgerSet":
        """The image ``{k*x : x in self}``."""
        if k < 1:
            raise ValueError("scale factor must be a positive integer")
        if k == 1:
            return self
        out = []
        for c in self.cells:
            ineqs = [LinTerm(t.coeffs, k * t.const) for t in c.ineqs]
            congs = [g.stretched(k) for g in c.congs]
            congs += [Congruence(unit_term(self.arity, i), 0, k) for i in range(self.arity)]
            out.append(make_cell(self.arity, ineqs, congs))
        return PresburgerSet(
            self.arity, [c for c in out if c is not None], disjoint=self.disjoint
        )

    def dilated(self, k: int) -> "PresburgerSet":
        """The description re-read on the lattice (1/k)Z^n, scaled back to Z^n.

        Concretely: inequality constants and congruence residues/moduli are
        multiplied by k while coefficients stay fixed, so a point x satisfies
        the result exactly when x/k satisfies the original constraints over
        the rationals with k-refined congruences.  Unlike :meth:`scale`, no
        divisibility condition is imposed.
        """
        if k < 1:
            raise ValueError("dilation factor must be a positive integer")
        if k == 1:
            return self
        out = []
        for c in self.cells:
            ineqs = [LinTerm(t.coeffs, k * t.const) for t in c.ineqs]
            congs = [g.stretched(k) for g in c.congs]
            out.append(make_cell(self.arity, ineqs, congs))
        # disjoint input cells can collide once the constants are scaled
        # (rational crossings land on the refined lattice), so no claim here
        return PresburgerSet(self.arity, [c for c in out if c is not None], disjoint=False)

    def __repr__(self) -> str:
        return f"PresburgerSet(arity={self.arity}, cells={len(self.cells)})"


# ---------------------------------------------------------------------------
# internals: disjointness, formula translation, Cooper elimination


@lru_cache(maxsize=8192)
def _rat_feasible(ineqs: tuple[LinTerm, ...], arity: int) -> bool:
    """Rational satisfiability of ``t(x) >= 0`` for all listed terms.

    Sound pruning only: a False answer certifies integer emptiness, a
    True answer promises nothing about lattice points.  Keeps the
    disjointification cascades from dragging provably empty cells along.
    """
    rows = [(tuple(Fraction(c) for c in t.coeffs), Fraction(t.const)) for t in ineqs]
    for i in range(arity):
        lowers, uppers, keep = [], [], []
        for r in rows:
            if r[0][i] > 0:
                lowers.append(r)
            elif r[0][i] < 0:
                uppers.append(r)
            else:
                keep.append(r)
        for cl, bl in lowers:
            for cu, bu in uppers:
                al, au = cl[i], -cu[i]
                keep.append(
                    (tuple(au * x + al * y for x, y in zip(cl, cu)), au * bl + al * bu)
                )
        rows = keep
    return all(b >= 0 for _, b in rows)


@lru_cache(maxsize=8192)
def _diophantine_feasible(
    eqs: tuple[tuple[tuple[int, ...], int], ...], congs: tuple[Congruence, ...], arity: int
) -> bool:
    """Integer solvability of a system of equalities and congruences.

    Each congruence ``c . x == r (mod m)`` becomes the Diophantine row
    ``c . x - m t = r`` with a fresh unknown, and the stacked system is
    solvable exactly when every component of ``U^-1 b`` is divisible by
    the matching Smith diagonal entry.  Inequalities are ignored, so a
    True answer promises nothing; False certifies emptiness.
    """
    ncong = len(congs)
    rows: list[list[int]] = []
    rhs: list[int] = []
    for coeffs, val in eqs:
        rows.append(list(coeffs) + [0] * ncong)
        rhs.append(val)
    for i, g in enumerate(congs):
        row = list(g.term.coeffs) + [0] * ncong
        row[arity + i] = -g.modulus
        rows.append(row)
        rhs.append(g.residue - g.term.const)
    if not rows:
        return True
    u, s, _ = smith_normal_form(rows)
    c = mat_vec(unimodular_inverse(u), rhs)
    width = arity + ncong
    for i in range(len(rows)):
        d = s[i][i] if i < width else 0
        if (c[i] % d if d else c[i]) != 0:
            return False
    return True


def _lattice_dead(cell: PCell) -> bool:
    """True when the cell's equality lines and congruences already clash."""
    eqs: list[tuple[tuple[int, ...], int]] = []
    consts = {t.coeffs: t.const for t in cell.ineqs}
    for key, a in consts.items():
        neg = tuple(-x for x in key)
        if key < neg and consts.get(neg) == -a:  # zero gap: key . x == -a
            eqs.append((key, -a))
    if not eqs and not cell.congs:
        return False
    return not _diophantine_feasible(tuple(eqs), cell.congs, cell.arity)


def _live(cell: PCell | None) -> PCell | None:
    if cell is None or not _rat_feasible(cell.ineqs, cell.arity):
        return None
    if (cell.congs or len(cell.ineqs) > 1) and _lattice_dead(cell):
        return None
    return cell


def _quick_disjoint(c: PCell, d: PCell) -> bool:
    """Dictionary-lookup screen for pairs that cannot meet.

    Catches opposed inequalities with a negative gap and clashing
    residues on the same congruence term -- the two patterns the
    elimination branches mass-produce -- without paying for a full
    ``make_cell`` normalisation of the combined atom list.
    """
    if c.congs and d.congs:
        seen = {g.term.coeffs: (g.residue, g.modulus) for g in c.congs}
        for g in d.congs:
            hit = seen.get(g.term.coeffs)
            if hit is not None and (hit[0] - g.residue) % gcd(hit[1], g.modulus) != 0:
                return True
    if c.ineqs and d.ineqs:
        consts = {t.coeffs: t.const for t in c.ineqs}
        for t in d.ineqs:
            opp = consts.get(tuple(-x for x in t.coeffs))
            if opp is not None and opp + t.const < 0:
                return True
    return False


def _cell_minus_cell(c: PCell, d: PCell) -> list[PCell]:
    """Pairwise disjoint cells covering ``c \\ d``."""
    if _quick_disjoint(c, d):
        return [c]
    if _live(make_cell(c.arity, c.ineqs + d.ineqs, c.congs + d.congs)) is None:
        return [c]  # disjoint already: nothing to carve out
    pieces: list[PCell] = []
    kept_ineqs: list[LinTerm] = []
    kept_congs: list[Congruence] = []
    for t in d.ineqs:
        piece = _live(c.with_atoms(ineqs=kept_ineqs + [negate_ineq(t)], congs=kept_congs))
        if piece is not None:
            pieces.append(piece)
        kept_ineqs.append(t)
    for g in d.congs:
        for r in range(g.modulus):
            if r == g.residue:
                continue
            piece = c.with_atoms(
                ineqs=kept_ineqs,
                congs=kept_congs + [Congruence(g.term, r, g.modulus)],
            )
            if piece is not None:
                pieces.append(piece)
        kept_congs.append(g)
    return pieces


def _disjointify(cells: Sequence[PCell]) -> list[PCell]:
    acc: list[PCell] = []
    for cell in cells:
        pieces = [cell]
        for d in acc:
            pieces = [p for piece in pieces for p in _cell_minus_cell(piece, d)]
            if not pieces:
                break
        acc.extend(pieces)
    return acc


def _term_to_linterm(t: fm.Term, arity: int) -> tuple[LinTerm, int]:
    """Clear denominators; return (integer term, positive scale used)."""
    coeffs = [Fraction(c) for c in t.coeffs]
    const = Fraction(t.const)
    if len(coeffs) < arity:
        coeffs = coeffs + [Fraction(0)] * (arity - len(coeffs))
    elif len(coeffs) > arity:
        raise ValueError("term refers to variables beyond the declared arity")
    scale = lcm_list([v.denominator for v in coeffs + [const]] or [1])
    return LinTerm(tuple(int(c * scale) for c in coeffs), int(const * scale)), scale


def _formula_cells(f: fm.Formula, arity: int, positive: bool) -> list[PCell]:
    """DNF cells (not yet disjoint) for a formula or its negation."""
    if isinstance(f, fm.Cmp):
        t, _ = _term_to_linterm(f.term, arity)
        if f.op == ">=":
            atom = [t] if positive else [negate_ineq(t)]
            return _cells_from_atoms(arity, [atom])
        if f.op == ">":
            atom = [t.shifted(-1)] if positive else [-t]
            return _cells_from_atoms(arity, [atom])
        if f.op == "==":
            if positive:
                return _cells_from_atoms(arity, [[t, -t]])
            return _cells_from_atoms(arity, [[t.shifted(-1)], [(-t).shifted(-1)]])
        # '!='
        if positive:
            return _cells_from_atoms(arity, [[t.shifted(-1)], [(-t).shifted(-1)]])
        return _cells_from_atoms(arity, [[t, -t]])
    if isinstance(f, fm.Cong):
        t, scale = _term_to_linterm(f.term, arity)
        if scale != 1:
            raise ValueError("congruence atoms require integer coefficients")
        cells = []
        for r in range(f.modulus):
            if (r == f.residue % f.modulus) == positive:
                cells.append(make_cell(arity, [], [Congruence(t, r, f.modulus)]))
        return [c for c in cells if c is not None]
    if isinstance(f, fm.And):
        branches = [_formula_cells(p, arity, positive) for p in f.parts]
        if not positive:
            return [c for b in branches for c in b]
        return _conjoin_branches(arity, branches)
    if isinstance(f, fm.Or):
        branches = [_formula_cells(p, arity, positive) for p in f.parts]
        if positive:
            return [c for b in branches for c in b]
        return _conjoin_branches(arity, branches)
    if isinstance(f, fm.Not):
        return _formula_cells(f.part, arity, not positive)
    if isinstance(f, fm.Exists):
        inner = PresburgerSet.from_formula(f.body, arity + 1).eliminate()
        if positive:
            return list(inner.cells)
        return list(inner.complement().cells)
    raise TypeError(f"unsupported formula node {type(f).__name__}")


def _cells_from_atoms(arity: int, disjuncts: list[list[LinTerm]]) -> list[PCell]:
    out = []
    for atoms in disjuncts:
        c = make_cell(arity, atoms, [])
        if c is not None:
            out.append(c)
    return out


def _conjoin_branches(arity: int, branches: list[list[PCell]]) -> list[PCell]:
    acc: list[PCell] = [make_cell(arity)]  # type: ignore[list-item]
    for branch in branches:
        nxt: list[PCell] = []
        for a in acc:
            for b in branch:
                c = make_cell(arity, a.ineqs + b.ineqs, a.congs + b.congs)
                if c is not None:
                    nxt.append(c)
        acc = nxt
        if not acc:
            break
    return acc


def _eliminate_cell(cell: PCell, var: int) -> list[PCell]:
    """Cooper elimination of ``x_var`` from one cell; cells returned are not
    necessarily disjoint."""
    outer_ineqs = [t.drop_var(var) for t in cell.ineqs if t.coeffs[var] == 0]
    outer_congs = [
        Congruence(g.term.drop_var(var), g.residue, g.modulus)
        for g in cell.congs
        if g.term.coeffs[var] == 0
    ]
    ineqs = [t for t in cell.ineqs if t.coeffs[var] != 0]
    congs = [g for g in cell.congs if g.term.coeffs[var] != 0]
    if not ineqs and not congs:
        base = make_cell(cell.arity - 1, outer_ineqs, outer_congs)
        return [base] if base is not None else []

    delta = lcm_list([t.coeffs[var] for t in ineqs] + [g.term.coeffs[var] for g in congs])
    # bounds on u = delta * x_var, as affine forms over the outer variables
    lowers: list[LinTerm] = []
    uppers: list[LinTerm] = []
    for t in ineqs:
        a = t.coeffs[var]
        lam = delta // abs(a)
        rest = LinTerm(
            tuple(0 if i == var else c for i, c in enumerate(t.coeffs)), t.const
        ).scaled(lam).drop_var(var)
        if a > 0:
            lowers.append(-rest)  # u >= -rest
        else:
            uppers.append(rest)  # u <= rest
    # congruences on u: u + R == rho (mod M_c), plus u == 0 (mod delta)
    ucongs: list[tuple[LinTerm, int, int]] = []
    for g in congs:
        c = g.term.coeffs[var]
        sign = 1 if c > 0 else -1
        lam = delta // abs(c)
        rest = LinTerm(
            tuple(0 if i == var else x for i, x in enumerate(g.term.coeffs)), 0
        ).scaled(sign * lam).drop_var(var)
        ucongs.append((rest, (sign * lam * g.residue), lam * g.modulus))
    ucongs.append((LinTerm(tuple([0] * (cell.arity - 1)), 0), 0, delta))
    period = lcm_list([m for (_r, _rho, m) in ucongs])

    def substituted(base: LinTerm, d: int) -> PCell | None:
        """Cell for ``u = base + d`` substituted into every u-atom."""
        val = base.shifted(d)
        ineq_atoms = list(outer_ineqs)
        for low in lowers:
            ineq_atoms.append(val - low)
        for up in uppers:
            ineq_atoms.append(up - val)
        cong_atoms = list(outer_congs)
        for rest, rho, m in ucongs:
            cong_atoms.append(Congruence(val + rest, rho, m))
        return make_cell(cell.arity - 1, ineq_atoms, cong_atoms)

    zero = LinTerm(tuple([0] * (cell.arity - 1)), 0)
    out: list[PCell] = []
    seen: set[PCell] = set()
    if lowers:
        anchors = list(dict.fromkeys(lowers))
        direction = 1
    elif uppers:
        anchors = list(dict.fromkeys(uppers))
        direction = -1
    else:
        anchors = [zero]
        direction = 1
    for anchor in anchors:
        for d in range(period):
            piece = _live(substituted(anchor, direction * d))
            if piece is not None and piece not in seen:
                seen.add(piece)
                out.append(piece)
    return out


def _cell_is_empty(cell: PCell) -> bool:
    frontier = [cell]
    for _ in range(cell.arity):
        nxt: list[PCell] = []
        for c in frontier:
            nxt.extend(_eliminate_cell(c, c.arity - 1))
        frontier = nxt
        if not frontier:
            return True
    return not frontier


# ---------------------------------------------------------------------------
# rational relaxation helpers (Fourier-Motzkin)


def fm_bound_chain(cell: PCell) -> list[list[LinTerm]] | None:
    """Inequality systems for prefixes: entry i constrains x_0..x_i.

    Works on the rational relaxation (congruences ignored).  Returns None
    when the relaxation is detected infeasible."""
    levels: list[list[LinTerm]] = [list(cell.ineqs)]
    current = list(cell.ineqs)
    for v in range(cell.arity - 1, 0, -1):
        lows = [t for t in current if t.coeffs[v] > 0]
        ups = [t for t in current if t.coeffs[v] < 0]
        rest = [t for t in current if t.coeffs[v] == 0]
        new = [t.drop_var(v) for t in rest]
        for a in lows:
            for b in ups:
                comb = a.scaled(-b.coeffs[v]) + b.scaled(a.coeffs[v])
                assert comb.coeffs[v] == 0
                new.append(comb.drop_var(v))
        for t in new:
            if t.is_constant() and t.const < 0:
                return None
        current = new
        levels.append(current)
    levels.reverse()
    return levels


def _prefix_interval(level: list[LinTerm], prefix: Sequence[int], bound: int) -> tuple[int, int]:
    """Integer range for the next coordinate given a fixed prefix."""
    i = len(prefix)
    lo: Fraction | None = None
    hi: Fraction | None = None
    for t in level:
        a = t.coeffs[i]
        if a == 0:
            continue
        val = Fraction(sum(c * x for c, x in zip(t.coeffs[:i], prefix)) + t.const)
        if a > 0:
            cand = -val / a
            lo = cand if lo is None else max(lo, cand)
        else:
            cand = val / (-a)
            hi = cand if hi is None else min(hi, cand)
    ilo = -bound if lo is None else max(-bound, int(lo.__ceil__()))
    ihi = bound if hi is None else min(bound, int(hi.__floor__()))
    return ilo, ihi


def find_point(pset: PresburgerSet, bound: int = 100) -> tuple[int, ...] | None:
    """A member of the set with all coordinates in [-bound, bound], found by
    depth-first search with rational bound propagation; None if there is no
    member in that box."""
    for cell in pset.cells:
        chain = fm_bound_chain(cell)
        if chain is None:
            continue
        hit = _find_point_cell(cell, chain, (), bound)
        if hit is not None:
            return hit
    return None


def _find_point_cell(
    cell: PCell, chain: list[list[LinTerm]], prefix: tuple[int, ...], bound: int
) -> tuple[int, ...] | None:
    if len(prefix) == cell.arity:
        return prefix if cell.contains(prefix) else None
    level = chain[len(prefix)]
    lo, hi = _prefix_interval(level, prefix, bound)
    for x in range(lo, hi + 1):
        hit = _find_point_cell(cell, chain, prefix + (x,), bound)
        if hit is not None:
            return hit
    return None


# ---------------------------------------------------------------------------
# piecewise affine maps and unimodularization


@dataclass(frozen=True)
class PAffinePiece:
    domain: PCell
    matrix: tuple[tuple[int, ...], ...]
    offset: tuple[int, ...]

    def apply(self, point: Sequence[int]) -> tuple[int, ...]:
        return tuple(v + o for v, o in zip(mat_vec([list(r) for r in self.matrix], list(point)), self.offset))


@dataclass(frozen=True)
class PAffineMap:
    """Piecewise affine map; on overlaps the first listed piece wins."""

    arity: int
    pieces: tuple[PAffinePiece, ...]

    def apply(self, point: Sequence[int]) -> tuple[int, ...] | None:
        for p in self.pieces:
            if p.domain.contains(point):
                return p.apply(point)
        return None


@dataclass
class Rejection:
    kind: str  # not_injective | not_surjective | maps_outside | not_unimodularizable | undefined | piece_outside_box
    detail: str
    points: tuple[tuple[int, ...], ...] = ()
    matrix: tuple[tuple[int, ...], ...] | None = None


@dataclass
class UnimodularizeResult:
    ok: bool
    pieces: list[PAffinePiece] | None = None
    rejection: Rejection | None = None


def unimodularize(
    f: PAffineMap,
    domain: PresburgerSet,
    codomain: PresburgerSet,
    search_bound: int = 100,
    probe_bound: int = 8,
) -> UnimodularizeResult:
    """Refine a piecewise affine bijection ``domain -> codomain`` into pieces
    whose matrices lie in GL_n(Z), or reject with a witness.

    Success is exact (images are computed symbolically and checked against
    the codomain); rejection witnesses are searched inside a box of radius
    ``search_bound``.  A quick dense probe on a box of radius ``probe_bound``
    catches collisions and obvious misses before any refinement happens.
    """
    n = f.arity
    if domain.arity != n or codomain.arity != n:
        raise ValueError("arity mismatch")

    # f must be defined on all of the domain
    piece_doms = PresburgerSet.from_cells(n, [p.domain for p in f.pieces])
    uncovered = domain.difference(piece_doms)
    if not uncovered.is_empty():
        pt = find_point(uncovered, search_bound)
        return UnimodularizeResult(
            False,
            rejection=Rejection("undefined", "domain point without a defining piece", (pt,) if pt else ()),
        )

    # dense probe: collisions and obvious misses (box-certified)
    box = [(-probe_bound, probe_bound)] * n
    seen: dict[tuple[int, ...], tuple[int, ...]] = {}
    for x in domain.points_in_box(box):
        y = f.apply(x)
        assert y is not None
        if not codomain.contains(y):
            return UnimodularizeResult(
                False, rejection=Rejection("maps_outside", "image point outside the codomain", (x, y))
            )
        if y in seen and seen[y] != x:
            return UnimodularizeResult(
                False, rejection=Rejection("not_injective", "two probe points share an image", (seen[y], x, y))
            )
        seen[y] = x
    inner = [(-probe_bound // 4, probe_bound // 4)] * n
    for y in codomain.points_in_box(inner):
        if y not in seen:
            # not hit from inside the probe box -- box-certified miss unless a
            # preimage exists farther out; re-probe with the wide search box.
            wide_hit = _has_preimage(f, domain, y, search_bound)
            if not wide_hit:
                return UnimodularizeResult(
                    False, rejection=Rejection("not_surjective", "codomain point with no preimage in the search box", (y,))
                )

    # effective (first-piece-wins) disjoint piece domains inside the domain
    units: list[tuple[PCell, tuple[tuple[int, ...], ...], tuple[int, ...]]] = []
    shadow = PresburgerSet.empty(n)
    for piece in f.pieces:
        eff = PresburgerSet(n, [piece.domain]).intersect(domain).difference(shadow)
        shadow = shadow.union(PresburgerSet(n, [piece.domain]))
        for cell in eff.disjointified().cells:
            units.append((cell, piece.matrix, piece.offset))

    refined: list[PAffinePiece] = []
    for cell, mat, off in units:
        result = _unimodularize_unit(cell, mat, off, search_bound)
        if isinstance(result, Rejection):
            return UnimodularizeResult(False, rejection=result)
        refined.extend(result)

    # exact bijectivity via symbolic images
    images: list[PresburgerSet] = []
    for piece in refined:
        images.append(_image_set(piece))
    for i in range(len(images)):
        for j in range(i + 1, len(images)):
            overlap = images[i].intersect(images[j])
            if not overlap.is_empty():
                y = find_point(overlap, search_bound)
                pts: tuple[tuple[int, ...], ...] = ()
                if y is not None:
                    x1 = _preimage(refined[i], y)
                    x2 = _preimage(refined[j], y)
                    pts = (x1, x2, y)
                return UnimodularizeResult(
                    False, rejection=Rejection("not_injective", "two refined pieces share image points", pts)
                )
    total_image = PresburgerSet.empty(n)
    for img in images:
        total_image = total_image.union(img)
    outside = total_image.difference(codomain)
    if not outside.is_empty():
        y = find_point(outside, search_bound)
        return UnimodularizeResult(
            False, rejection=Rejection("maps_outside", "image leaves the codomain", (y,) if y else ())
        )
    missed = codomain.difference(total_image)
    if not missed.is_empty():
        y = find_point(missed, search_bound)
        return UnimodularizeResult(
            False, rejection=Rejection("not_surjective", "codomain not fully covered", (y,) if y else ())
        )
    return UnimodularizeResult(True, pieces=refined)


def _has_preimage(f: PAffineMap, domain: PresburgerSet, y: tuple[int, ...], bound: int) -> bool:
    for piece in f.pieces:
        sets = PresburgerSet(f.arity, [piece.domain]).intersect(domain)
        m = [list(r) for r in piece.matrix]
        if det(m) in (1, -1):
            inv = unimodular_inverse(m)
            x = tuple(mat_vec(inv, [yi - oi for yi, oi in zip(y, piece.offset)]))
            if sets.contains(x) and f.apply(x) == y:
                return True
        else:
            # solve A x = y - a over the cell by bounded search
            target = PresburgerSet.from_cells(
                f.arity,
                [
                    sets.cells[k].with_atoms(
                        ineqs=[
                            t
                            for i in range(f.arity)
                            for t in (
                                LinTerm(tuple(piece.matrix[i]), piece.offset[i] - y[i]),
                                -LinTerm(tuple(piece.matrix[i]), piece.offset[i] - y[i]),
                            )
                        ]
                    )
                    for k in range(len(sets.cells))
                ],
                disjoint=True,
            )
            x = find_point(target, bound)
            if x is not None and f.apply(x) == y:
                return True
    return False


def _unimodularize_unit(
    cell: PCell, mat: tuple[tuple[int, ...], ...], off: tuple[int, ...], bound: int
) -> list[PAffinePiece] | Rejection:
    n = cell.arity
    m = [list(r) for r in mat]
    if det(m) in (1, -1):
        return [PAffinePiece(cell, mat, off)]
    if _cell_is_empty(cell):
        return []
    cset = PresburgerSet(n, [cell])
    pts = []
    for b in (bound // 8 or 2, bound):
        pt = find_point(cset, b)
        if pt is not None:
            pts = [pt]
            break
    if not pts:
        return Rejection("piece_outside_box", "nonempty piece has no point in the search box", matrix=mat)

    while True:
        x0 = list(pts[0])
        diffs = [[p[i] - x0[i] for i in range(n)] for p in pts[1:]]
        basis = saturated_row_basis(diffs, n)
        # exactness: the cell must lie in x0 + span(basis)
        normals = _integer_normals(basis, n)
        violation = None
        for w in normals:
            shift = sum(wi * xi for wi, xi in zip(w, x0))
            above = cset.intersect(
                PresburgerSet.from_cells(n, [make_cell(n, [LinTerm(tuple(w), -shift - 1)])])
            )
            below = cset.intersect(
                PresburgerSet.from_cells(n, [make_cell(n, [LinTerm(tuple(-wi for wi in w), shift - 1)])])
            )
            for probe in (above, below):
                if not probe.is_empty():
                    violation = find_point(probe, bound)
                    if violation is None:
                        return Rejection(
                            "piece_outside_box", "cell extends beyond the search box", matrix=mat
                        )
                    break
            if violation is not None:
                break
        if violation is None:
            break
        pts.append(violation)

    d = len(basis)
    if d == 0:
        # single lattice point: any unimodular matrix works, adjust the offset
        ident = tuple(tuple(int(i == j) for j in range(n)) for i in range(n))
        y0 = [sum(mat[i][j] * x0[j] for j in range(n)) + off[i] for i in range(n)]
        return [PAffinePiece(cell, ident, tuple(y0[i] - x0[i] for i in range(n)))]
    p_cols = transpose(basis)  # n x d, primitive columns
    ap = [[sum(mat[i][j] * p_cols[j][k] for j in range(n)) for k in range(d)] for i in range(n)]
    r = unimodular_completion(ap)
    if r is None:
        return Rejection(
            "not_unimodularizable",
            "piece matrix does not act unimodularly on the cell's direction lattice",
            matrix=mat,
        )
    q = unimodular_completion(p_cols)
    assert q is not None  # basis is saturated, hence primitive
    up = [list(p_cols[i]) + list(q[i]) for i in range(n)]
    apr = [list(ap[i]) + list(r[i]) for i in range(n)]
    up_inv = unimodular_inverse(up)
    new_mat = [[sum(apr[i][k] * up_inv[k][j] for k in range(n)) for j in range(n)] for i in range(n)]
    assert det(new_mat) in (1, -1)
    y0 = [sum(mat[i][j] * x0[j] for j in range(n)) + off[i] for i in range(n)]
    new_off = [y0[i] - sum(new_mat[i][j] * x0[j] for j in range(n)) for i in range(n)]
    piece = PAffinePiece(cell, tuple(tuple(row) for row in new_mat), tuple(new_off))
    for p in pts[: min(len(pts), 4)]:
        want = tuple(sum(mat[i][j] * p[j] for j in range(n)) + off[i] for i in range(n))
        assert piece.apply(p) == want
    return [piece]


def _integer_normals(basis_rows: list[list[int]], n: int) -> list[list[int]]:
    """Integer basis of the orthogonal complement of the given row span."""
    if not basis_rows:
        return [[int(i == j) for j in range(n)] for i in range(n)]
    frac_rows = [[Fraction(x) for x in row] for row in basis_rows]
    # kernel of basis * w^T = 0: gaussian elimination on the columns of w
    cols = n
    a = [row[:] for row in frac_rows]
    pivots: list[int] = []
    r = 0
    for c in range(cols):
        piv = next((i for i in range(r, len(a)) if a[i][c] != 0), None)
        if piv is None:
            continue
        a[r], a[piv] = a[piv], a[r]
        scale = a[r][c]
        a[r] = [x / scale for x in a[r]]
        for i in range(len(a)):
            if i != r and a[i][c] != 0:
                f_ = a[i][c]
                a[i] = [x - f_ * y for x, y in zip(a[i], a[r])]
        pivots.append(c)
        r += 1
    free = [c for c in range(cols) if c not in pivots]
    kernel: list[list[int]] = []
    for fc in free:
        vec = [Fraction(0)] * cols
        vec[fc] = Fraction(1)
        for i, pc in enumerate(pivots):
            vec[pc] = -a[i][fc]
        denom = lcm_list([v.denominator for v in vec])
        kernel.append([int(v * denom) for v in vec])
    return saturated_row_basis(kernel, n) if kernel else []


def _image_set(piece: PAffinePiece) -> PresburgerSet:
    n = piece.domain.arity
    inv = unimodular_inverse([list(r) for r in piece.matrix])
    # x = inv * (y - off): substitute into every atom of the domain cell
    shift = mat_vec(inv, [-o for o in piece.offset])
    ineqs = []
    for t in piece.domain.ineqs:
        coeffs = [sum(t.coeffs[i] * inv[i][j] for i in range(n)) for j in range(n)]
        const = t.const + sum(t.coeffs[i] * shift[i] for i in range(n))
        ineqs.append(LinTerm(tuple(coeffs), const))
    congs = []
    for g in piece.domain.congs:
        coeffs = [sum(g.term.coeffs[i] * inv[i][j] for i in range(n)) for j in range(n)]
        const = sum(g.term.coeffs[i] * shift[i] for i in range(n))
        congs.append(Congruence(LinTerm(tuple(coeffs), const), g.residue, g.modulus))
    return PresburgerSet.from_cells(n, [make_cell(n, ineqs, congs)], disjoint=True)


def _preimage(piece: PAffinePiece, y: tuple[int, ...]) -> tuple[int, ...]:
    inv = unimodular_inverse([list(r) for r in piece.matrix])
    return tuple(mat_vec(inv, [yi - oi for yi, oi in zip(y, piece.offset)]))


# ---------------------------------------------------------------------------
# text format


def format_term(t: LinTerm, names: Sequence[str]) -> str:
    chunks: list[str] = []
    for c, name in zip(t.coeffs, names):
        if c == 0:
            continue
        if c == 1:
            piece = name
        elif c == -1:
            piece = f"-{name}"
        else:
            piece = f"{c}*{name}"
        if chunks and not piece.startswith("-"):
            chunks.append(f"+ {piece}")
        elif chunks:
            chunks.append(f"- {piece[1:]}")
        else:
            chunks.append(piece)
    if t.const or not chunks:
        if chunks:
            chunks.append(f"+ {t.const}" if t.const >= 0 else f"- {-t.const}")
        else:
            chunks.append(str(t.const))
    return " ".join(chunks)


def format_cell(cell: PCell, names: Sequence[str] | None = None) -> str:
    names = names or [f"x{i+1}" for i in range(cell.arity)]
    parts = [f"{format_term(t, names)} >= 0" for t in cell.ineqs]
    parts += [f"{format_term(g.term, names)} == {g.residue} (mod {g.modulus})" for g in cell.congs]
    return " and ".join(parts) if parts else "0 >= 0"


def format_set(pset: PresburgerSet, names: Sequence[str] | None = None) -> str:
    if not pset.cells:
        return "0 >= 1"
    return " or ".join(f"({format_cell(c, names)})" for c in pset.cells)
