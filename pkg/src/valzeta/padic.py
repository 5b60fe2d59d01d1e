"""Truncated integration over concrete local fields.

This is the brute-force side of the bargain: pick an actual field (Q_p
or F_q((t))), enumerate representatives modulo the N-th power of the
uniformizer, and add up the weighted measure exactly in rational
arithmetic.  The deep stratum -- representatives whose digits all vanish
at depth N, where membership cannot be decided -- is left out of the sum
and covered by an explicit tail bound, so a symbolic value and a
truncated value can be compared honestly: they must agree within the
tail.  Pole conditions raised while evaluating the symbolic side are
deliberately not caught here.

The measure matches the symbolic normalisation: each coset of the N-th
uniformizer power has measure q^(1-N), so the valuation ring has
measure q.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

from .genfun import PoleHit, RatFun
from .presburger import PresburgerSet, make_cell, unit_term
from .vfrag import (
    ONE,
    UNIT,
    Fiber,
    MonomialRegion,
    Stratum,
    ValWeight,
    _fm_inf,
    coordinate_lower_bound,
    zeta,
)

Q = Fraction


class PrecisionError(Exception):
    """The chosen depth cannot produce a finite certified answer."""


def _is_prime(p: int) -> bool:
    if p < 2:
        return False
    d = 2
    while d * d <= p:
        if p % d == 0:
            return False
        d += 1
    return True


@dataclass(frozen=True)
class LocalFieldConfig:
    """A concrete field: Q_p, or a Laurent series field over F_{p^delta}."""

    kind: str
    p: int
    residue_degree: int = 1
    precision: int = 4

    def __post_init__(self):
        if self.kind not in ("Qp", "LaurentSeries"):
            raise ValueError("kind must be 'Qp' or 'LaurentSeries'")
        if not _is_prime(self.p):
            raise ValueError(f"{self.p} is not prime")
        if self.residue_degree < 1:
            raise ValueError("residue degree must be positive")
        if self.kind == "Qp" and self.residue_degree != 1:
            raise ValueError(
                "Q_p has residue degree 1; use LaurentSeries for larger residue fields"
            )
        if self.precision < 1:
            raise ValueError("precision must be at least 1")

    @property
    def q(self) -> int:
        return self.p**self.residue_degree


@dataclass(frozen=True)
class OracleReport:
    truncated_value: Fraction
    tail_bound: Fraction
    symbolic_value: Fraction
    verdict: bool


# ---------------------------------------------------------------------------
# enumeration


def _coordinate_bounds(region: MonomialRegion) -> list[int]:
    """Integer floors below every valuation the region can reach."""
    n = region.arity
    bounds: list[Optional[int]] = [None] * n
    for st in region.full_strata():
        for i in range(n):
            lb = coordinate_lower_bound(st.gammas, i)
            if lb is None:
                raise PrecisionError("region is not bounded below")
            b = math.floor(lb)
            bounds[i] = b if bounds[i] is None else min(bounds[i], b)
    return [0 if b is None else b for b in bounds]


def enumeration_count(region: MonomialRegion, cfg: LocalFieldConfig) -> int:
    """How many representatives the digit enumeration walks."""
    n = region.arity
    total = 0
    for b in _coordinate_bounds(region):
        total += max(cfg.precision - b, 0)
    return cfg.q**total


def _weight_exponent(weight: ValWeight, gamma: Sequence[int]) -> Fraction:
    e = Q(0)
    if weight.kappa_forms:
        if weight.kappa_values is None:
            raise ValueError("numeric kappa values are required by the oracle")
        for f, kap in zip(weight.kappa_forms, weight.kappa_values):
            val = f.apply(gamma)
            if val is None:
                raise ValueError(f"weight undefined at {tuple(gamma)}")
            e += kap * val[0]
    if weight.gamma_form is not None:
        val = weight.gamma_form.apply(gamma)
        if val is None:
            raise ValueError(f"volume form undefined at {tuple(gamma)}")
        e += val[0]
    return e


def _int_exponent(e: Fraction, gamma) -> int:
    if e.denominator != 1:
        raise ValueError(f"weight exponent {e} at {tuple(gamma)} is not an integer")
    return int(e)


def truncated_zeta(
    region: MonomialRegion,
    weight: Optional[ValWeight],
    cfg: LocalFieldConfig,
    method: str = "classes",
) -> Fraction:
    """The weighted sum over representatives resolved at depth N.

    ``classes`` groups representatives by valuation vector and leading
    residues (each such class has measure q^{-sum gamma}); ``digits``
    walks every digit vector individually at measure q^{n(1-N)} and
    exists as an independent cross-check for tiny instances.  Both skip
    representatives with a coordinate deeper than N; that mass belongs
    to the tail bound.
    """
    n = region.arity
    if weight is None:
        weight = ValWeight.trivial(n)
    if weight.arity != n:
        raise ValueError("weight arity does not match the region")
    qv = Q(cfg.q)
    depth = cfg.precision
    bounds = _coordinate_bounds(region)
    if method == "digits":
        return _digit_sum(region, weight, cfg, bounds)
    if method != "classes":
        raise ValueError("method must be 'classes' or 'digits'")
    total = Q(0)
    for gamma in itertools.product(*(range(b, depth) for b in bounds)):
        fb = region.fiber_at(gamma)
        if fb is None:
            continue
        if fb.pattern is None:
            raise ValueError("fiber has no residue pattern; the oracle cannot enumerate it")
        count = 1
        for pat in fb.pattern:
            count *= cfg.q - 1 if pat == UNIT else 1
        e = _int_exponent(sum(gamma) + _weight_exponent(weight, gamma), gamma)
        total += count * qv ** (-e)
    return total


def _digit_sum(region, weight, cfg, bounds) -> Fraction:
    n = region.arity
    qv = Q(cfg.q)
    depth = cfg.precision
    if enumeration_count(region, cfg) > 200000:
        raise ValueError("digit enumeration too large; use the classes method")
    per_coord = []
    for b in bounds:
        reps = []
        for digs in itertools.product(range(cfg.q), repeat=depth - b):
            lead = next((i for i, d in enumerate(digs) if d), None)
            reps.append(None if lead is None else (b + lead, digs[lead]))
        per_coord.append(reps)
    cell_measure = qv ** (n * (1 - depth))
    total = Q(0)
    for combo in itertools.product(*per_coord):
        if any(c is None for c in combo):
            continue  # a deep coordinate: unresolved, belongs to the tail
        gamma = tuple(c[0] for c in combo)
        fb = region.fiber_at(gamma)
        if fb is None:
            continue
        if fb.pattern is None:
            raise ValueError("fiber has no residue pattern; the oracle cannot enumerate it")
        ok = all(
            (pat == UNIT) or (c[1] == 1) for pat, c in zip(fb.pattern, combo)
        )
        if not ok:
            continue
        e = _int_exponent(_weight_exponent(weight, gamma), gamma)
        total += qv ** (-e) * cell_measure
    return total


# ---------------------------------------------------------------------------
# the tail


def _piece_rows(qcell, arity):
    """Closed rational rows for a semilinear cell (strictness relaxed)."""
    rows = []
    for atom in qcell.atoms():
        t = atom.term
        coeffs = tuple(Q(c) for c in t.coeffs) + (Q(0),) * (arity - len(t.coeffs))
        rows.append((coeffs, Q(t.const)))
        if atom.op == "==":
            rows.append((tuple(-c for c in coeffs), -Q(t.const)))
    return rows


def _deep_chunk_mass(
    st: Stratum, deep: PresburgerSet, cutset: PresburgerSet, weight: ValWeight, qv: Fraction
) -> Fraction:
    """Weighted mass of one beyond-depth chunk, summed by the symbolic engine."""
    ts = []
    for kap in weight.kappa_values or ():
        if kap != int(kap):
            raise PrecisionError("the exact tail needs integer kappa values")
        ts.append(qv ** (-int(kap)))
    fibers = tuple(
        Fiber(c2, fb.res, fb.pattern)
        for fb in st.fibers
        for c2 in PresburgerSet.from_cells(deep.arity, [fb.cell]).intersect(cutset).cells
    )
    piece = MonomialRegion(deep.arity, (Stratum(st.zeros, deep, fibers),))
    try:
        return zeta(piece, weight).evaluate(qv, tuple(ts))
    except PoleHit as exc:
        raise PrecisionError(f"tail mass diverges: {exc}") from None


def tail_bound(
    region: MonomialRegion, weight: Optional[ValWeight], cfg: LocalFieldConfig
) -> Fraction:
    """An exact bound on the mass the truncation cannot see.

    For each stratum and coordinate, the representatives with that
    coordinate deeper than N form a chunk of volume at most
    q^(1-N) * prod_j q^(1-b_j); the weight on the chunk is bounded by
    its infimum over the relaxed region cut at depth N-1, computed by
    Fourier-Motzkin.  When the weight alone has no infimum there (a
    sheared volume form can decay in one coordinate while growing in
    another), the chunk is summed exactly by the symbolic engine
    instead; a chunk whose own sum diverges raises PrecisionError.
    """
    n = region.arity
    if weight is None:
        weight = ValWeight.trivial(n)
    if weight.kappa_forms and weight.kappa_values is None:
        raise ValueError("numeric kappa values are required by the oracle")
    qv = Q(cfg.q)
    depth = cfg.precision
    total = Q(0)
    for si, st in enumerate(region.full_strata()):
        bounds = []
        for j in range(n):
            lb = coordinate_lower_bound(st.gammas, j)
            if lb is None:
                raise PrecisionError(f"stratum {si}: region is not bounded below")
            bounds.append(math.floor(lb))
        omega_opts = (
            list(weight.gamma_form.pieces) if weight.gamma_form is not None else [None]
        )
        for i in range(n):
            cutset = PresburgerSet.from_cells(
                n, [make_cell(n, [unit_term(n, i, 1, -depth)])]
            )
            deep = st.gammas.intersect(cutset)
            if deep.is_empty():
                continue
            worst: Optional[Fraction] = None
            unbounded = False
            cut = (tuple(Q(int(j == i)) for j in range(n)), Q(1 - depth))
            for cell in st.gammas.cells:
                base_rows = [
                    (tuple(Q(c) for c in t.coeffs), Q(t.const)) for t in cell.ineqs
                ]
                for combo in itertools.product(
                    *(f.pieces for f in weight.kappa_forms)
                ):
                    for wp in omega_opts:
                        rows = list(base_rows) + [cut]
                        obj = [Q(0)] * n
                        obj_c = Q(0)
                        for sel, kap in zip(combo, weight.kappa_values or ()):
                            pc, mat, off = sel
                            rows.extend(_piece_rows(pc, n))
                            for j in range(n):
                                obj[j] += kap * mat[0][j]
                            obj_c += kap * off[0]
                        if wp is not None:
                            pc, mat, off = wp
                            rows.extend(_piece_rows(pc, n))
                            for j in range(n):
                                obj[j] += mat[0][j]
                            obj_c += off[0]
                        inf = _fm_inf(rows, obj, obj_c)
                        if inf is None:
                            unbounded = True
                            break
                        if worst is None or inf < worst:
                            worst = inf
                    if unbounded:
                        break
                if unbounded:
                    break
            if unbounded:
                # The weight alone has no infimum on the chunk (typical after a
                # shearing substitution twists the volume form); the integrand
                # still decays along the sheared cone, so sum the chunk itself.
                # Chunks of different coordinates overlap, keeping this a bound.
                total += _deep_chunk_mass(st, deep, cutset, weight, qv)
                continue
            if worst is None:
                continue
            chunk = qv ** (1 - depth)
            for j in range(n):
                if j != i:
                    chunk *= qv ** (1 - bounds[j])
            total += chunk * qv ** (-math.floor(worst))
    return total


def compare(
    symbolic: RatFun,
    region: MonomialRegion,
    weight: Optional[ValWeight],
    cfg: LocalFieldConfig,
) -> OracleReport:
    """Truncate, bound the tail, evaluate the symbolic answer, and judge.

    The symbolic function is evaluated at q = p^delta and
    T_i = q^(-kappa_i); integer kappa values are required so the
    evaluation stays rational.  The verdict passes exactly when the
    truncated and symbolic values differ by at most the tail bound.
    """
    n = region.arity
    if weight is None:
        weight = ValWeight.trivial(n)
    trunc = truncated_zeta(region, weight, cfg)
    tail = tail_bound(region, weight, cfg)
    ts = []
    if weight.kappa_forms:
        if weight.kappa_values is None:
            raise ValueError("numeric kappa values are required by the oracle")
        for kap in weight.kappa_values:
            if kap.denominator != 1:
                raise ValueError("integer kappa values are required to evaluate")
            ts.append(Q(cfg.q) ** (-int(kap)))
    symb = symbolic.evaluate(Q(cfg.q), tuple(ts))
    return OracleReport(trunc, tail, symb, abs(trunc - symb) <= tail)
