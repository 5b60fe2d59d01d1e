"""Shared abstract syntax for linear constraint formulas.

Atoms compare an affine expression with zero (``>=``, ``>``, ``==``, ``!=``)
or constrain it to a residue class (``expr == r (mod m)``).  Connectives are
conjunction, disjunction and negation; an existential quantifier always
binds the *last* coordinate of its body (the DSL parser arranges this).

The integer layer (:mod:`valzeta.presburger`) and the rational layer
(:mod:`valzeta.semilinear`) both consume this AST.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence, Union

Number = Union[int, Fraction]


@dataclass(frozen=True)
class Term:
    """Affine expression ``sum coeffs[i] * x_i + const``."""

    coeffs: tuple[Number, ...]
    const: Number

    @property
    def arity(self) -> int:
        return len(self.coeffs)

    def __call__(self, point: Sequence[Number]) -> Number:
        return sum(c * x for c, x in zip(self.coeffs, point)) + self.const

    def is_integral(self) -> bool:
        vals = list(self.coeffs) + [self.const]
        return all(Fraction(v).denominator == 1 for v in vals)


@dataclass(frozen=True)
class Cmp:
    """``term OP 0`` with OP one of >=, >, ==, !=."""

    term: Term
    op: str  # ">=", ">", "==", "!="

    def __post_init__(self):
        if self.op not in (">=", ">", "==", "!="):
            raise ValueError(f"bad comparison op {self.op!r}")


@dataclass(frozen=True)
class Cong:
    """``term == residue (mod modulus)``; integer data only."""

    term: Term
    residue: int
    modulus: int

    def __post_init__(self):
        if self.modulus < 1:
            raise ValueError("congruence modulus must be >= 1")


@dataclass(frozen=True)
class And:
    parts: tuple["Formula", ...]


@dataclass(frozen=True)
class Or:
    parts: tuple["Formula", ...]


@dataclass(frozen=True)
class Not:
    part: "Formula"


@dataclass(frozen=True)
class Exists:
    """Existential over the last coordinate of ``body``."""

    body: "Formula"


Formula = Union[Cmp, Cong, And, Or, Not, Exists]

TRUE = And(())
FALSE = Or(())


def conj(*parts: Formula) -> Formula:
    return And(tuple(parts))


def disj(*parts: Formula) -> Formula:
    return Or(tuple(parts))


def term(coeffs: Sequence[Number], const: Number = 0) -> Term:
    return Term(tuple(coeffs), const)


def evaluate(f: Formula, point: Sequence[Number]) -> bool:
    """Truth value of a quantifier-free formula at a point."""
    if isinstance(f, Cmp):
        v = f.term(point)
        if f.op == ">=":
            return v >= 0
        if f.op == ">":
            return v > 0
        if f.op == "==":
            return v == 0
        return v != 0
    if isinstance(f, Cong):
        v = f.term(point)
        if Fraction(v).denominator != 1:
            return False
        return int(v) % f.modulus == f.residue % f.modulus
    if isinstance(f, And):
        return all(evaluate(p, point) for p in f.parts)
    if isinstance(f, Or):
        return any(evaluate(p, point) for p in f.parts)
    if isinstance(f, Not):
        return not evaluate(f.part, point)
    raise TypeError(f"cannot evaluate quantified formula {type(f).__name__}")


def atoms_of(f: Formula) -> list[Union[Cmp, Cong]]:
    if isinstance(f, (Cmp, Cong)):
        return [f]
    if isinstance(f, (And, Or)):
        out: list[Union[Cmp, Cong]] = []
        for p in f.parts:
            out.extend(atoms_of(p))
        return out
    if isinstance(f, Not):
        return atoms_of(f.part)
    if isinstance(f, Exists):
        return atoms_of(f.body)
    raise TypeError(str(type(f)))


def max_arity(f: Formula) -> int:
    return max((a.term.arity for a in atoms_of(f)), default=0)
