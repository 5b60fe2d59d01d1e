"""Cell calculus over the dense ordered group of rational values.

Sets here live in Gamma^n where Gamma is a divisible ordered abelian group
(think: the value group, with rational coordinates).  Everything definable
from rational linear inequalities decomposes into *stacked cells*: over a
base cell in the first j coordinates, the next coordinate is either the
graph of an affine map (a section) or ranges strictly between two affine
maps, either of which may be missing (a band).  Cell dimension is the
number of band factors.

On top of the decomposition we compute the two Euler characteristics.
Each cell contributes a product of per-factor classes in Z[X]/(X^2+X),
where X is the class of an open ray:

    section            -> 1
    bounded band       -> -1
    half-infinite band -> X
    full-line band     -> 1 + 2X   (a line splits as ray + point + ray)

The two ring characters X -> 0 and X -> -1 then read off the bounded and
the ordinary Euler characteristic.  Taking the full-line correction into
account (rather than crediting 0) is what makes the bounded count immune
to how the decomposition happened to slice an unbounded direction.

Also here: Jacobian sums for value tuples, a bijectivity-plus-weight check
for piecewise linear morphisms, and the convolution of graded families.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence, Union

from . import formula as fm

Q = Fraction


def _q(x) -> Fraction:
    f = Fraction(x)
    return f


# ---------------------------------------------------------------------------
# affine forms with rational coefficients


@dataclass(frozen=True)
class Aff:
    """Affine form sum(coeffs[i] * x_i) + const over a coordinate prefix."""

    coeffs: tuple[Fraction, ...]
    const: Fraction

    @property
    def arity(self) -> int:
        return len(self.coeffs)

    def __call__(self, point: Sequence[Fraction]) -> Fraction:
        return sum((c * _q(x) for c, x in zip(self.coeffs, point)), self.const)

    def add(self, other: "Aff") -> "Aff":
        if self.arity != other.arity:
            raise ValueError("affine form arity mismatch")
        return Aff(
            tuple(a + b for a, b in zip(self.coeffs, other.coeffs)),
            self.const + other.const,
        )

    def sub(self, other: "Aff") -> "Aff":
        return self.add(other.scaled(-1))

    def scaled(self, k) -> "Aff":
        k = _q(k)
        return Aff(tuple(k * c for c in self.coeffs), k * self.const)

    def padded(self, arity: int) -> "Aff":
        if arity < self.arity:
            raise ValueError("cannot shrink an affine form by padding")
        return Aff(self.coeffs + (Q(0),) * (arity - self.arity), self.const)

    def is_constant(self) -> bool:
        return all(c == 0 for c in self.coeffs)

    def to_term(self, arity: int) -> fm.Term:
        p = self.padded(arity)
        return fm.Term(p.coeffs, p.const)


def aff(coeffs: Sequence, const=0) -> Aff:
    return Aff(tuple(_q(c) for c in coeffs), _q(const))


def _aff_of_term(t: fm.Term) -> Aff:
    return aff(t.coeffs, t.const)


# ---------------------------------------------------------------------------
# cells


@dataclass(frozen=True)
class Section:
    """Graph factor: the next coordinate equals ``value`` on the base."""

    value: Aff


@dataclass(frozen=True)
class Band:
    """Open interval factor: low < x < high; None means unbounded."""

    low: Optional[Aff]
    high: Optional[Aff]


Factor = Union[Section, Band]


@dataclass(frozen=True)
class QCell:
    """Stacked cell: factor j constrains coordinate j over the first j."""

    arity: int
    factors: tuple[Factor, ...]

    def __post_init__(self):
        if len(self.factors) != self.arity:
            raise ValueError("factor count must equal arity")
        for j, f in enumerate(self.factors):
            parts = [f.value] if isinstance(f, Section) else [f.low, f.high]
            for a in parts:
                if a is not None and a.arity != j:
                    raise ValueError(f"factor {j} reads {a.arity} coordinates")

    @property
    def dimension(self) -> int:
        return sum(1 for f in self.factors if isinstance(f, Band))

    def is_bounded(self) -> bool:
        return all(
            not isinstance(f, Band) or (f.low is not None and f.high is not None)
            for f in self.factors
        )

    def contains(self, point: Sequence) -> bool:
        pt = [_q(x) for x in point]
        if len(pt) != self.arity:
            return False
        for j, f in enumerate(self.factors):
            base = pt[:j]
            if isinstance(f, Section):
                if pt[j] != f.value(base):
                    return False
            else:
                if f.low is not None and not pt[j] > f.low(base):
                    return False
                if f.high is not None and not pt[j] < f.high(base):
                    return False
        return True

    def sample(self) -> tuple[Fraction, ...]:
        """A rational point inside the cell."""
        pt: list[Fraction] = []
        for f in self.factors:
            if isinstance(f, Section):
                pt.append(f.value(pt))
            elif f.low is None and f.high is None:
                pt.append(Q(0))
            elif f.low is None:
                pt.append(f.high(pt) - 1)
            elif f.high is None:
                pt.append(f.low(pt) + 1)
            else:
                pt.append((f.low(pt) + f.high(pt)) / 2)
        return tuple(pt)

    def atoms(self) -> list[fm.Cmp]:
        """Defining atoms, as comparisons over the full arity."""
        out: list[fm.Cmp] = []
        n = self.arity
        for j, f in enumerate(self.factors):
            xj = aff((0,) * j + (1,))
            if isinstance(f, Section):
                out.append(fm.Cmp(xj.sub(f.value.padded(j + 1)).to_term(n), "=="))
            else:
                if f.low is not None:
                    out.append(fm.Cmp(xj.sub(f.low.padded(j + 1)).to_term(n), ">"))
                if f.high is not None:
                    out.append(fm.Cmp(f.high.padded(j + 1).sub(xj).to_term(n), ">"))
        return out

    def formula(self) -> fm.Formula:
        return fm.And(tuple(self.atoms()))

    def parametrize(self) -> tuple[list[Aff], int]:
        """Affine-hull coordinates: each x_j as an Aff in the band parameters.

        Returns (rows, d); row j has arity d (the cell dimension), and the
        map t -> (row_0(t), ..., row_{n-1}(t)) is an affine bijection from
        an open subset of Gamma^d onto the cell.
        """
        rows: list[Aff] = []
        d = 0
        for j, f in enumerate(self.factors):
            if isinstance(f, Band):
                d += 1
                rows.append(Aff((Q(0),) * (d - 1) + (Q(1),), Q(0)))
            else:
                acc = Aff((), f.value.const)
                for i, c in enumerate(f.value.coeffs):
                    if c != 0:
                        width = max(acc.arity, rows[i].arity)
                        acc = acc.padded(width).add(rows[i].scaled(c).padded(width))
                rows.append(acc)
        return [r.padded(d) for r in rows], d

    def validate(self) -> bool:
        """Check the band ordering invariant over the whole base, exactly."""
        for j, f in enumerate(self.factors):
            if isinstance(f, Band) and f.low is not None and f.high is not None:
                base = QCell(j, self.factors[:j])
                gap = f.high.sub(f.low)
                bad = fm.conj(base.formula(), fm.Cmp(gap.scaled(-1).to_term(j), ">="))
                if not SemilinearSet.decompose(bad, j).is_empty():
                    return False
        return True


# ---------------------------------------------------------------------------
# decomposition


def _dedupe(forms: Iterable[Aff], drop_const: bool = False) -> list[Aff]:
    seen = set()
    out = []
    for a in forms:
        key = (a.coeffs, a.const)
        if key in seen or (drop_const and a.is_constant()):
            continue
        seen.add(key)
        out.append(a)
    return out


def _stack(n: int, funcs: list[Aff]) -> list[QCell]:
    """Cells of Gamma^n on which every listed form has constant sign."""
    if n == 0:
        return [QCell(0, ())]
    walls: list[Aff] = []
    passed: list[Aff] = []
    for f in funcs:
        c = f.coeffs[n - 1]
        if c == 0:
            passed.append(Aff(f.coeffs[: n - 1], f.const))
        else:
            # f = c*x_n + r, zero exactly on the graph x_n = -r/c
            walls.append(Aff(tuple(-v / c for v in f.coeffs[: n - 1]), -f.const / c))
    walls = _dedupe(walls)
    diffs = [a.sub(b) for a, b in itertools.combinations(walls, 2)]
    base = _stack(n - 1, _dedupe(passed + diffs, drop_const=True))
    cells: list[QCell] = []
    for bc in base:
        s = bc.sample()
        groups: dict[Fraction, Aff] = {}
        for w in walls:
            groups.setdefault(w(s), w)
        ordered = [groups[v] for v in sorted(groups)]
        lows: list[Optional[Aff]] = [None] + ordered
        highs: list[Optional[Aff]] = ordered + [None]
        for lo, hi in zip(lows, highs):
            cells.append(QCell(n, bc.factors + (Band(lo, hi),)))
        for w in ordered:
            cells.append(QCell(n, bc.factors + (Section(w),)))
    return cells


def _strip_exists(f: fm.Formula, arity: int) -> fm.Formula:
    """Replace each existential node by a quantifier-free equivalent."""
    if isinstance(f, fm.Cmp):
        return f
    if isinstance(f, fm.Cong):
        raise ValueError("congruence atoms are meaningless over a divisible group")
    if isinstance(f, fm.And):
        return fm.And(tuple(_strip_exists(p, arity) for p in f.parts))
    if isinstance(f, fm.Or):
        return fm.Or(tuple(_strip_exists(p, arity) for p in f.parts))
    if isinstance(f, fm.Not):
        return fm.Not(_strip_exists(f.part, arity))
    if isinstance(f, fm.Exists):
        inner = SemilinearSet.decompose(f.body, arity + 1)
        shadows = [QCell(arity, c.factors[:-1]) for c in inner.cells]
        return fm.Or(tuple(c.formula() for c in shadows))
    raise TypeError(f"unsupported formula node {type(f).__name__}")


def _collect_terms(f: fm.Formula, out: list[fm.Term]) -> None:
    if isinstance(f, fm.Cmp):
        out.append(f.term)
    elif isinstance(f, (fm.And, fm.Or)):
        for p in f.parts:
            _collect_terms(p, out)
    elif isinstance(f, fm.Not):
        _collect_terms(f.part, out)


@dataclass(frozen=True)
class SemilinearSet:
    arity: int
    cells: tuple[QCell, ...]

    @staticmethod
    def decompose(
        description: fm.Formula, arity: int, extra: Sequence[Aff] = ()
    ) -> "SemilinearSet":
        """Disjoint stacked cells covering the described set.

        ``extra`` lists additional affine forms whose zero sets the cells
        must also respect; passing some produces a refinement of the
        decomposition without changing the set.
        """
        qf = _strip_exists(description, arity)
        terms: list[fm.Term] = []
        _collect_terms(qf, terms)
        funcs = [_aff_of_term(t).padded(arity) for t in terms]
        funcs += [e.padded(arity) for e in extra]
        funcs = _dedupe(funcs, drop_const=True)
        keep = [c for c in _stack(arity, funcs) if fm.evaluate(qf, c.sample())]
        return SemilinearSet(arity, tuple(keep))

    @staticmethod
    def from_cells(arity: int, cells: Sequence[QCell]) -> "SemilinearSet":
        for c in cells:
            if c.arity != arity:
                raise ValueError("cell arity mismatch")
        return SemilinearSet(arity, tuple(cells))

    @staticmethod
    def empty(arity: int) -> "SemilinearSet":
        return SemilinearSet(arity, ())

    def is_empty(self) -> bool:
        return not self.cells

    def contains(self, point: Sequence) -> bool:
        return any(c.contains(point) for c in self.cells)

    def formula(self) -> fm.Formula:
        return fm.Or(tuple(c.formula() for c in self.cells))

    def union(self, other: "SemilinearSet") -> "SemilinearSet":
        self._match(other)
        return SemilinearSet.decompose(fm.disj(self.formula(), other.formula()), self.arity)

    def intersect(self, other: "SemilinearSet") -> "SemilinearSet":
        self._match(other)
        return SemilinearSet.decompose(fm.conj(self.formula(), other.formula()), self.arity)

    def difference(self, other: "SemilinearSet") -> "SemilinearSet":
        self._match(other)
        return SemilinearSet.decompose(
            fm.conj(self.formula(), fm.Not(other.formula())), self.arity
        )

    def complement(self) -> "SemilinearSet":
        return SemilinearSet.decompose(fm.Not(self.formula()), self.arity)

    def equivalent(self, other: "SemilinearSet") -> bool:
        return self.difference(other).is_empty() and other.difference(self).is_empty()

    def refine(self, walls: Sequence[Aff]) -> "SemilinearSet":
        """Same set, re-cut so the cells also respect the given forms."""
        return SemilinearSet.decompose(self.formula(), self.arity, extra=walls)

    def project(self, k: int) -> "SemilinearSet":
        """Image under projection onto the first k coordinates."""
        if not 0 <= k <= self.arity:
            raise ValueError("projection length out of range")
        shadows = [QCell(k, c.factors[:k]) for c in self.cells]
        return SemilinearSet.decompose(
            fm.Or(tuple(c.formula() for c in shadows)), k
        )

    def _match(self, other: "SemilinearSet") -> None:
        if self.arity != other.arity:
            raise ValueError("arity mismatch")


def product(a: SemilinearSet, b: SemilinearSet) -> SemilinearSet:
    """Cartesian product; cell products are again stacked cells."""

    def shift(x: Optional[Aff], by: int) -> Optional[Aff]:
        if x is None:
            return None
        return Aff((Q(0),) * by + x.coeffs, x.const)

    cells = []
    for ca in a.cells:
        for cb in b.cells:
            tail: list[Factor] = []
            for f in cb.factors:
                if isinstance(f, Section):
                    tail.append(Section(shift(f.value, a.arity)))
                else:
                    tail.append(Band(shift(f.low, a.arity), shift(f.high, a.arity)))
            cells.append(QCell(a.arity + b.arity, ca.factors + tuple(tail)))
    return SemilinearSet(a.arity + b.arity, tuple(cells))


def fiber(s: SemilinearSet, value, coord: int = 0) -> SemilinearSet:
    """Slice at ``x_coord = value``, dropping that coordinate."""
    v = _q(value)
    n = s.arity
    if not 0 <= coord < n:
        raise ValueError("coordinate out of range")

    def subst_term(t: fm.Term) -> fm.Term:
        cs = [_q(c) for c in t.coeffs]
        const = _q(t.const) + cs[coord] * v
        return fm.Term(tuple(cs[:coord] + cs[coord + 1 :]), const)

    def subst(f: fm.Formula) -> fm.Formula:
        if isinstance(f, fm.Cmp):
            return fm.Cmp(subst_term(f.term), f.op)
        if isinstance(f, fm.And):
            return fm.And(tuple(subst(p) for p in f.parts))
        if isinstance(f, fm.Or):
            return fm.Or(tuple(subst(p) for p in f.parts))
        if isinstance(f, fm.Not):
            return fm.Not(subst(f.part))
        raise TypeError("quantifiers should have been eliminated")

    return SemilinearSet.decompose(subst(_strip_exists(s.formula(), n)), n - 1)


# ---------------------------------------------------------------------------
# the two Euler characteristics


@dataclass(frozen=True)
class GammaBarClass:
    """Element a + bX of Z[X]/(X^2+X), X the class of an open ray."""

    a: int
    b: int

    def __add__(self, other: "GammaBarClass") -> "GammaBarClass":
        return GammaBarClass(self.a + other.a, self.b + other.b)

    def __neg__(self) -> "GammaBarClass":
        return GammaBarClass(-self.a, -self.b)

    def __sub__(self, other: "GammaBarClass") -> "GammaBarClass":
        return self + (-other)

    def __mul__(self, other: "GammaBarClass") -> "GammaBarClass":
        # (a+bX)(c+dX) = ac + (ad+bc)X + bd X^2,  X^2 = -X
        a, b, c, d = self.a, self.b, other.a, other.b
        return GammaBarClass(a * c, a * d + b * c - b * d)

    @property
    def chi_b(self) -> int:
        return self.a  # the character X -> 0

    @property
    def chi_g(self) -> int:
        return self.a - self.b  # the character X -> -1

    def __str__(self) -> str:
        if self.b == 0:
            return str(self.a)
        xpart = "X" if self.b == 1 else "-X" if self.b == -1 else f"{self.b}X"
        if self.a == 0:
            return xpart
        sign = "+" if self.b > 0 else ""
        return f"{self.a}{sign}{xpart}"


GammaBarClass.ZERO = GammaBarClass(0, 0)
GammaBarClass.ONE = GammaBarClass(1, 0)
GammaBarClass.X = GammaBarClass(0, 1)

_POINT = GammaBarClass.ONE
_BOUNDED = GammaBarClass(-1, 0)
_RAY = GammaBarClass.X
_LINE = GammaBarClass(1, 2)  # ray + point + ray


def cell_class(cell: QCell) -> GammaBarClass:
    total = GammaBarClass.ONE
    for f in cell.factors:
        if isinstance(f, Section):
            continue
        if f.low is None and f.high is None:
            total = total * _LINE
        elif f.low is None or f.high is None:
            total = total * _RAY
        else:
            total = total * _BOUNDED
    return total


def euler(s: SemilinearSet) -> tuple[int, int, GammaBarClass]:
    """(chi_g, chi_b, class in Z[X]/(X^2+X)) of the set.

    Both characteristics are decomposition-independent; chi_g of a single
    cell is (-1)^dim, and chi_b kills every cell with a half-infinite band
    while crediting a full-line band with +1.
    """
    total = GammaBarClass.ZERO
    for c in s.cells:
        total = total + cell_class(c)
    return total.chi_g, total.chi_b, total


def qdim(s: SemilinearSet) -> Optional[int]:
    """Largest cell dimension; None for the empty set."""
    if s.is_empty():
        return None
    return max(c.dimension for c in s.cells)


# ---------------------------------------------------------------------------
# Jacobians of value tuples


def gamma_jacobian(uvals: Sequence, vvals: Sequence) -> Fraction:
    """-sum(uvals) + sum(vvals), exact over the rationals."""
    vals = list(uvals) + list(vvals)
    for x in vals:
        try:
            _q(x)
        except (TypeError, ValueError, OverflowError) as exc:
            raise ValueError(f"non-rational value {x!r} in Jacobian data") from exc
        if x != _q(x):  # pragma: no cover - Fraction() already rejects inf
            raise ValueError("infinite value in Jacobian data")
    return -sum((_q(x) for x in uvals), Q(0)) + sum((_q(x) for x in vvals), Q(0))


# ---------------------------------------------------------------------------
# piecewise linear maps and the morphism check


@dataclass(frozen=True)
class QPiecewiseMap:
    """Finitely many affine pieces (cell, matrix rows, offset); disjoint domains."""

    pieces: tuple[tuple[QCell, tuple[tuple[Fraction, ...], ...], tuple[Fraction, ...]], ...]

    @property
    def in_arity(self) -> int:
        return self.pieces[0][0].arity

    @property
    def out_arity(self) -> int:
        return len(self.pieces[0][2])

    def piece_at(self, point: Sequence):
        for cell, mat, off in self.pieces:
            if cell.contains(point):
                return cell, mat, off
        return None

    def apply(self, point: Sequence) -> Optional[tuple[Fraction, ...]]:
        hit = self.piece_at(point)
        if hit is None:
            return None
        _, mat, off = hit
        pt = [_q(x) for x in point]
        return tuple(
            sum((m * x for m, x in zip(row, pt)), o) for row, o in zip(mat, off)
        )

    def domain(self) -> SemilinearSet:
        arity = self.in_arity
        return SemilinearSet.decompose(
            fm.Or(tuple(cell.formula() for cell, _, _ in self.pieces)), arity
        )

    @staticmethod
    def identity_on(s: SemilinearSet) -> "QPiecewiseMap":
        n = s.arity
        mat = tuple(
            tuple(Q(1) if i == j else Q(0) for j in range(n)) for i in range(n)
        )
        off = (Q(0),) * n
        return QPiecewiseMap(tuple((c, mat, off) for c in s.cells))

    @staticmethod
    def affine_on(s: SemilinearSet, matrix, offset) -> "QPiecewiseMap":
        mat = tuple(tuple(_q(x) for x in row) for row in matrix)
        off = tuple(_q(x) for x in offset)
        return QPiecewiseMap(tuple((c, mat, off) for c in s.cells))

    @staticmethod
    def constant_on(s: SemilinearSet, value) -> "QPiecewiseMap":
        mat = ((Q(0),) * s.arity,)
        return QPiecewiseMap(tuple((c, mat, (_q(value),)) for c in s.cells))


@dataclass(frozen=True)
class MorphismVerdict:
    ok: bool
    reason: Optional[str] = None
    witness: Optional[tuple[Fraction, ...]] = None

    def __bool__(self) -> bool:
        return self.ok


def _qrank(rows: list[list[Fraction]]) -> int:
    m = [row[:] for row in rows]
    rank = 0
    cols = len(m[0]) if m else 0
    for col in range(cols):
        piv = next((r for r in range(rank, len(m)) if m[r][col] != 0), None)
        if piv is None:
            continue
        m[rank], m[piv] = m[piv], m[rank]
        inv = 1 / m[rank][col]
        m[rank] = [inv * v for v in m[rank]]
        for r in range(len(m)):
            if r != rank and m[r][col] != 0:
                f = m[r][col]
                m[r] = [v - f * w for v, w in zip(m[r], m[rank])]
        rank += 1
    return rank


def _affine_image(cell: QCell, mat, off) -> SemilinearSet:
    """Exact image of a cell under y = mat*x + off, as a set in the target."""
    rows, d = cell.parametrize()
    m = len(mat)
    # y_i - (mat*rows)_i (t) == 0, t ranging over the parameter domain
    eqs = []
    for i in range(m):
        comp = Aff((Q(0),) * d, off[i])
        for j, c in enumerate(mat[i]):
            if c != 0:
                comp = comp.add(rows[j].scaled(c))
        yi = aff((0,) * i + (1,) + (0,) * (m - 1 - i) + (0,) * d)
        shifted = Aff((Q(0),) * m + comp.coeffs, comp.const)
        eqs.append(fm.Cmp(yi.sub(shifted).to_term(m + d), "=="))
    dom_atoms = []
    for j, f in enumerate(cell.factors):
        if not isinstance(f, Band):
            continue
        tj = rows[j]  # the parameter itself, as an Aff over t
        for bound, side in ((f.low, 1), (f.high, -1)):
            if bound is None:
                continue
            comp = Aff((Q(0),) * d, bound.const)
            for i, c in enumerate(bound.coeffs):
                if c != 0:
                    comp = comp.add(rows[i].scaled(c))
            gap = tj.sub(comp).scaled(side)
            dom_atoms.append(
                fm.Cmp(Aff((Q(0),) * m + gap.coeffs, gap.const).to_term(m + d), ">")
            )
    body: fm.Formula = fm.And(tuple(eqs + dom_atoms))
    for _ in range(d):
        body = fm.Exists(body)
    return SemilinearSet.decompose(body, m)


def _preimage_formula(f: fm.Formula, mat, off, arity: int) -> fm.Formula:
    """Substitute y = mat*x + off into a formula over y."""

    def sub_term(t: fm.Term) -> fm.Term:
        coeffs = [Q(0)] * arity
        const = _q(t.const)
        for i, c in enumerate(t.coeffs):
            c = _q(c)
            if c == 0:
                continue
            const += c * off[i]
            for j in range(arity):
                coeffs[j] += c * mat[i][j]
        return fm.Term(tuple(coeffs), const)

    def walk(g: fm.Formula) -> fm.Formula:
        if isinstance(g, fm.Cmp):
            return fm.Cmp(sub_term(g.term), g.op)
        if isinstance(g, fm.And):
            return fm.And(tuple(walk(p) for p in g.parts))
        if isinstance(g, fm.Or):
            return fm.Or(tuple(walk(p) for p in g.parts))
        if isinstance(g, fm.Not):
            return fm.Not(walk(g.part))
        raise TypeError("quantifiers should have been eliminated")

    return walk(f)


def _weight_form(f_piece, w_piece, arity: int) -> Aff:
    """sum of f's outputs plus w's single output, as one affine form."""
    _, fmat, foff = f_piece
    _, wmat, woff = w_piece
    coeffs = [Q(0)] * arity
    const = sum(foff, Q(0)) + woff[0]
    for row in fmat:
        for j, c in enumerate(row):
            coeffs[j] += c
    for j, c in enumerate(wmat[0]):
        coeffs[j] += c
    return Aff(tuple(coeffs), const)


def check_mG_morphism(F: QPiecewiseMap, src, dst) -> MorphismVerdict:
    """Certify that F is an isomorphism of weighted objects.

    ``src`` and ``dst`` are triples (set, f, omega).  The check is exact:
    F must restrict to a bijection from the source set onto the target set,
    and on every linearity region the identity
    sum f + omega = (sum f' + omega') o F must hold as affine forms.
    A failure comes back with a rational witness point.
    """
    S, f, omega = src
    T, fp, omegap = dst
    n = S.arity
    if not S.difference(F.domain()).is_empty():
        raise ValueError("F is not defined on all of the source set")
    for g, label in ((f, "grading"), (omega, "weight")):
        if not S.difference(g.domain()).is_empty():
            raise ValueError(f"source {label} map is not defined on the whole set")
    for g, label in ((fp, "grading"), (omegap, "weight")):
        if not T.difference(g.domain()).is_empty():
            raise ValueError(f"target {label} map is not defined on the whole set")

    images: list[tuple[SemilinearSet, tuple[Fraction, ...]]] = []
    for cell, mat, off in F.pieces:
        for sub in S.intersect(SemilinearSet(n, (cell,))).cells:
            rows, d = sub.parametrize()
            composed = [
                [
                    sum((mat[i][j] * rows[j].coeffs[t] for j in range(n)), Q(0))
                    for t in range(d)
                ]
                for i in range(len(mat))
            ]
            if _qrank(composed) < d:
                return MorphismVerdict(
                    False, "piece collapses a direction (not injective)", sub.sample()
                )
            img = _affine_image(sub, mat, off)
            bad = img.difference(T)
            if not bad.is_empty():
                y = bad.cells[0].sample()
                return MorphismVerdict(False, "image leaves the target set", y)
            images.append((img, sub.sample()))

            # the weight identity on every linearity region inside this piece
            for fpc in f.pieces:
                for wpc in omega.pieces:
                    for fpc2 in fp.pieces:
                        for wpc2 in omegap.pieces:
                            region = fm.conj(
                                sub.formula(),
                                fpc[0].formula(),
                                wpc[0].formula(),
                                _preimage_formula(fpc2[0].formula(), mat, off, n),
                                _preimage_formula(wpc2[0].formula(), mat, off, n),
                            )
                            left = _weight_form(fpc, wpc, n)
                            right_y = _weight_form(fpc2, wpc2, len(off))
                            # pull the target form back through y = mat*x+off
                            coeffs = [Q(0)] * n
                            const = right_y.const
                            for i, c in enumerate(right_y.coeffs):
                                const += c * off[i]
                                for j in range(n):
                                    coeffs[j] += c * mat[i][j]
                            diff = left.sub(Aff(tuple(coeffs), const))
                            if all(c == 0 for c in diff.coeffs) and diff.const == 0:
                                continue
                            broken = SemilinearSet.decompose(
                                fm.conj(region, fm.Cmp(diff.to_term(n), "!=")), n
                            )
                            if not broken.is_empty():
                                return MorphismVerdict(
                                    False,
                                    "weight identity fails",
                                    broken.cells[0].sample(),
                                )

    for (img1, w1), (img2, _) in itertools.combinations(images, 2):
        overlap = img1.intersect(img2)
        if not overlap.is_empty():
            return MorphismVerdict(
                False, "two pieces share image points (not injective)", w1
            )
    covered = SemilinearSet.decompose(
        fm.Or(tuple(img.formula() for img, _ in images)), T.arity
    )
    missing = T.difference(covered)
    if not missing.is_empty():
        return MorphismVerdict(
            False, "target point is not hit (not surjective)", missing.cells[0].sample()
        )
    return MorphismVerdict(True)


# ---------------------------------------------------------------------------
# convolution of graded families


def convolve(I: SemilinearSet, J: SemilinearSet) -> SemilinearSet:
    """Convolution of graded families; coordinate 0 is the grade.

    The result lives in Gamma^(1 + a + b + 1) with layout
    (grade, I-payload, J-payload, split-point alpha); its fiber over a
    grade gamma is the union over alpha + beta = gamma of
    fiber(I, alpha) x fiber(J, beta), with alpha kept as the last
    coordinate.
    """
    if I.arity < 1 or J.arity < 1:
        raise ValueError("family representatives need a grade coordinate")
    a, b = I.arity - 1, J.arity - 1
    n = 1 + a + b + 1
    alpha = n - 1

    def remap(t: fm.Term, images: list[fm.Term]) -> fm.Term:
        coeffs = [Q(0)] * n
        const = _q(t.const)
        for i, c in enumerate(t.coeffs):
            c = _q(c)
            if c == 0:
                continue
            img = images[i]
            const += c * _q(img.const)
            for j, cc in enumerate(img.coeffs):
                coeffs[j] += c * _q(cc)
        return fm.Term(tuple(coeffs), const)

    def rewrite(g: fm.Formula, images: list[fm.Term]) -> fm.Formula:
        if isinstance(g, fm.Cmp):
            return fm.Cmp(remap(g.term, images), g.op)
        if isinstance(g, fm.And):
            return fm.And(tuple(rewrite(p, images) for p in g.parts))
        if isinstance(g, fm.Or):
            return fm.Or(tuple(rewrite(p, images) for p in g.parts))
        if isinstance(g, fm.Not):
            return fm.Not(rewrite(g.part, images))
        raise TypeError("quantifiers should have been eliminated")

    def unit(i: int) -> fm.Term:
        return fm.Term(tuple(Q(1) if j == i else Q(0) for j in range(n)), Q(0))

    i_images = [unit(alpha)] + [unit(1 + i) for i in range(a)]
    gamma_minus_alpha = fm.Term(
        tuple(Q(1) if j == 0 else Q(-1) if j == alpha else Q(0) for j in range(n)), Q(0)
    )
    j_images = [gamma_minus_alpha] + [unit(1 + a + i) for i in range(b)]
    body = fm.conj(
        rewrite(_strip_exists(I.formula(), I.arity), i_images),
        rewrite(_strip_exists(J.formula(), J.arity), j_images),
    )
    return SemilinearSet.decompose(body, n)


def support(I: SemilinearSet) -> SemilinearSet:
    """Grades with nonempty fiber: the projection onto coordinate 0."""
    return I.project(1)
