"""Spec-file front end: named sets, regions and weights, plus subcommands.

Document grammar::

    document    := declaration*
    declaration := "set" NAME "{" formula "}"
                 | "region" NAME "{" stratum+ "}"
                 | "weight" NAME "{" kappa* omega? "}"
    stratum     := "strata" "{" "zeros" "[" ints? "]" ";"
                   "gamma" "{" formula? "}" ";" "fiber" respoly ";" "}"
    kappa       := "kappa" INT ":" linexpr ";"
    omega       := "omega" ":" linexpr ";"
    formula     := conj ("or" conj)*
    conj        := unary ("and" unary)*
    unary       := "not" unary | "exists" NAME "." formula
                 | "(" formula ")" | atom
    atom        := linexpr REL linexpr [ "(" "mod" INT ")" ]
    linexpr     := ["-"] addend (("+" | "-") addend)*
    addend      := rational ["*"] NAME | rational | NAME
    REL         := ">=" | "<=" | ">" | "<" | "==" | "!="

Free variables are x1, x2, ...; the names x, y, z, w abbreviate x1..x4.
``exists`` may bind any fresh name.  The congruence atom ``t == r (mod m)``
needs integer data.  A region's arity is the largest coordinate any stratum
mentions; ``zeros`` lists 1-based coordinates pinned to zero valuation, and
inside ``gamma`` the variables x1..xk name the remaining coordinates in
order.  ``fiber`` takes an integer combination of monomials in u and v
(``u^2``, ``uv``, ``2uv - v^2``); a plain monomial ``u^i v^j`` additionally
pins the concrete residue pattern (i unit coordinates, then j coordinates
with residue one) so the truncated field oracle can enumerate the fiber.

Subcommands: qe, euler, class, sum, zeta, fubini-check, cov-check, family,
oracle-check.  All reported numbers are exact integers or fractions a/b;
``--decimal K`` adds display-only decimal approximations.  Exit codes:
0 success, 2 parse error, 3 engine or usage error, 4 verification failed.
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import re
import sys
from dataclasses import dataclass, field
from decimal import Decimal, localcontext
from fractions import Fraction
from typing import Optional, Sequence, Union

from . import formula as fm
from . import padic
from .genfun import (
    ExponentData,
    NonIntegralExponent,
    PoleHit,
    RatFun,
    uniform_family,
    zeta_assemble,
)
from .grothring import ResClass, RVClass
from .polynomial import Poly
from .presburger import LinTerm, PresburgerSet, format_term, unit_term
from .semilinear import SemilinearSet, euler as semilinear_euler
from .vfrag import (
    Fiber,
    MonomialMap,
    MonomialRegion,
    ONE,
    Stratum,
    UNIT,
    ValWeight,
    change_of_variables,
    check_measure_preserving,
    full_region,
    full_space,
    integrate_ordered,
    integral_class,
    zeta,
    zeta_pieces,
)
from .semilinear import QPiecewiseMap

Q = Fraction


# ---------------------------------------------------------------------------
# diagnostics


class ParseError(Exception):
    """Syntax or resolution failure, with position and expectations."""

    def __init__(self, message: str, line: int, col: int, expected: Sequence[str] = ()):
        self.message = message
        self.line = line
        self.col = col
        self.expected = tuple(sorted(set(expected)))
        super().__init__(str(self))

    def __str__(self) -> str:
        loc = f"line {self.line}, column {self.col}: {self.message}"
        if self.expected:
            loc += f" (expected {', '.join(self.expected)})"
        return loc


class CommandError(Exception):
    """Bad command usage or an engine failure; maps to exit code 3."""


# ---------------------------------------------------------------------------
# lexer

_PUNCT = ("{", "}", "(", ")", "[", "]", ";", ":", ",", ".", "*", "+", "-", "/", "^")
_RELOPS = (">=", "<=", "==", "!=", ">", "<")
_KEYWORDS = frozenset(
    "set region weight strata zeros gamma fiber kappa omega and or not exists mod".split()
)


@dataclass(frozen=True)
class Token:
    kind: str  # "int", "name", "op", "eof"
    text: str
    line: int
    col: int

    def describe(self) -> str:
        if self.kind == "eof":
            return "end of input"
        return f"'{self.text}'"


def tokenize(text: str) -> list[Token]:
    toks: list[Token] = []
    line, col, i = 1, 1, 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":  # comment to end of line
            while i < n and text[i] != "\n":
                i += 1
            continue
        two = text[i : i + 2]
        if two in _RELOPS:
            toks.append(Token("op", two, line, col))
            i += 2
            col += 2
            continue
        if ch in (">", "<"):
            toks.append(Token("op", ch, line, col))
            i += 1
            col += 1
            continue
        if ch.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            toks.append(Token("int", text[i:j], line, col))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            toks.append(Token("name", text[i:j], line, col))
            col += j - i
            i = j
            continue
        if ch in _PUNCT:
            toks.append(Token("op", ch, line, col))
            i += 1
            col += 1
            continue
        raise ParseError(f"unexpected character {ch!r}", line, col)
    toks.append(Token("eof", "", line, col))
    return toks


# ---------------------------------------------------------------------------
# named formula syntax prior to coordinate resolution


@dataclass(frozen=True)
class NTerm:
    coeffs: tuple[tuple[str, Fraction], ...]  # (variable, coefficient)
    const: Fraction


@dataclass(frozen=True)
class NCmp:
    term: NTerm
    op: str
    line: int
    col: int


@dataclass(frozen=True)
class NCong:
    term: NTerm
    modulus: int
    line: int
    col: int


@dataclass(frozen=True)
class NAnd:
    parts: tuple


@dataclass(frozen=True)
class NOr:
    parts: tuple


@dataclass(frozen=True)
class NNot:
    part: object


@dataclass(frozen=True)
class NExists:
    var: str
    body: object
    line: int
    col: int


_ALIASES = {"x": 0, "y": 1, "z": 2, "w": 3}


def _coord_of(name: str) -> Optional[int]:
    if name in _ALIASES:
        return _ALIASES[name]
    if re.fullmatch(r"x[1-9][0-9]*", name):
        return int(name[1:]) - 1
    return None


def _scan_arity(node, bound: tuple[str, ...]) -> int:
    """Smallest arity accommodating every free variable; checks names."""
    if isinstance(node, (NCmp, NCong)):
        need = 0
        for name, _ in node.term.coeffs:
            if name in bound:
                continue
            idx = _coord_of(name)
            if idx is None:
                raise ParseError(
                    f"variable '{name}' is not bound here; free variables are "
                    "x1, x2, ... (or x, y, z, w)",
                    node.line,
                    node.col,
                )
            need = max(need, idx + 1)
        return need
    if isinstance(node, (NAnd, NOr)):
        return max((_scan_arity(p, bound) for p in node.parts), default=0)
    if isinstance(node, NNot):
        return _scan_arity(node.part, bound)
    if isinstance(node, NExists):
        return _scan_arity(node.body, bound + (node.var,))
    raise TypeError(f"bad node {node!r}")


def _num(x: Fraction) -> Union[int, Fraction]:
    x = Fraction(x)
    return int(x) if x.denominator == 1 else x


def _resolve(node, arity: int, stack: tuple[str, ...]) -> fm.Formula:
    """Turn the named tree into coordinate form at the given ambient arity."""
    if isinstance(node, (NCmp, NCong)):
        total = arity + len(stack)
        coeffs = [Fraction(0)] * total
        for name, c in node.term.coeffs:
            if name in stack:
                idx = arity + (len(stack) - 1 - stack[::-1].index(name))
            else:
                idx = _coord_of(name)
                assert idx is not None  # _scan_arity vetted the names
            coeffs[idx] += c
        term = fm.Term(tuple(_num(c) for c in coeffs), _num(node.term.const))
        if isinstance(node, NCmp):
            return fm.Cmp(term, node.op)
        if not term.is_integral():
            raise ParseError(
                "congruence atoms need integer coefficients", node.line, node.col
            )
        return fm.Cong(term, 0, node.modulus)
    if isinstance(node, NAnd):
        return fm.And(tuple(_resolve(p, arity, stack) for p in node.parts))
    if isinstance(node, NOr):
        return fm.Or(tuple(_resolve(p, arity, stack) for p in node.parts))
    if isinstance(node, NNot):
        return fm.Not(_resolve(node.part, arity, stack))
    if isinstance(node, NExists):
        return fm.Exists(_resolve(node.body, arity, stack + (node.var,)))
    raise TypeError(f"bad node {node!r}")


# ---------------------------------------------------------------------------
# declarations


@dataclass
class SetDecl:
    name: str
    arity: int
    formula: fm.Formula
    pset: PresburgerSet = field(compare=False)


@dataclass
class StratumDecl:
    zeros: tuple[int, ...]  # 0-based, sorted
    gamma: fm.Formula
    res: ResClass
    pattern: Optional[tuple[str, ...]]


@dataclass
class RegionDecl:
    name: str
    arity: int
    strata: tuple[StratumDecl, ...]
    region: MonomialRegion = field(compare=False)


@dataclass
class WeightDecl:
    name: str
    min_arity: int
    kappa: tuple[tuple[tuple[Fraction, ...], Fraction], ...]
    omega: Optional[tuple[tuple[Fraction, ...], Fraction]]

    def build(self, arity: int, kappa_values=None) -> ValWeight:
        if arity < self.min_arity:
            raise CommandError(
                f"weight '{self.name}' uses x{self.min_arity} but only "
                f"{arity} coordinate(s) are available"
            )
        space = full_space(arity)

        def lift(entry):
            coeffs, const = entry
            row = tuple(coeffs) + (Q(0),) * (arity - len(coeffs))
            return QPiecewiseMap.affine_on(space, (row,), (const,))

        return ValWeight(
            arity,
            tuple(lift(e) for e in self.kappa),
            lift(self.omega) if self.omega is not None else None,
            kappa_values,
        )


Declaration = Union[SetDecl, RegionDecl, WeightDecl]


@dataclass
class SpecDocument:
    declarations: dict[str, Declaration]

    def __getitem__(self, name: str) -> Declaration:
        try:
            return self.declarations[name]
        except KeyError:
            known = ", ".join(self.declarations) or "none declared"
            raise CommandError(f"unknown name '{name}' ({known})") from None


# ---------------------------------------------------------------------------
# parser


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.pos = 0

    # -- token plumbing -------------------------------------------------

    def peek(self) -> Token:
        return self.toks[self.pos]

    def advance(self) -> Token:
        tok = self.toks[self.pos]
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def at(self, text: str) -> bool:
        tok = self.peek()
        return tok.kind in ("op", "name") and tok.text == text

    def eat(self, text: str) -> bool:
        if self.at(text):
            self.advance()
            return True
        return False

    def expect(self, text: str) -> Token:
        if not self.at(text):
            tok = self.peek()
            raise ParseError(f"got {tok.describe()}", tok.line, tok.col, [f"'{text}'"])
        return self.advance()

    def expect_int(self) -> int:
        tok = self.peek()
        if tok.kind != "int":
            raise ParseError(f"got {tok.describe()}", tok.line, tok.col, ["an integer"])
        self.advance()
        return int(tok.text)

    def expect_name(self, what: str = "a name") -> Token:
        tok = self.peek()
        if tok.kind != "name" or tok.text in _KEYWORDS:
            raise ParseError(f"got {tok.describe()}", tok.line, tok.col, [what])
        return self.advance()

    # -- documents ------------------------------------------------------

    def document(self) -> SpecDocument:
        decls: dict[str, Declaration] = {}
        while self.peek().kind != "eof":
            tok = self.peek()
            if self.eat("set"):
                d = self.set_decl()
            elif self.eat("region"):
                d = self.region_decl()
            elif self.eat("weight"):
                d = self.weight_decl()
            else:
                raise ParseError(
                    f"got {tok.describe()}",
                    tok.line,
                    tok.col,
                    ["'set'", "'region'", "'weight'"],
                )
            if d.name in decls:
                raise ParseError(f"duplicate name '{d.name}'", tok.line, tok.col)
            decls[d.name] = d
        return SpecDocument(decls)

    def set_decl(self) -> SetDecl:
        name = self.expect_name("a set name")
        self.expect("{")
        node = self.formula()
        self.expect("}")
        arity = _scan_arity(node, ())
        f = _resolve(node, arity, ())
        try:
            pset = PresburgerSet.from_formula(f, arity)
        except (ValueError, TypeError) as exc:
            raise ParseError(f"set '{name.text}': {exc}", name.line, name.col) from exc
        return SetDecl(name.text, arity, f, pset)

    def region_decl(self) -> RegionDecl:
        name = self.expect_name("a region name")
        self.expect("{")
        raw = []  # (zeros, gamma node, res, pattern, token)
        while not self.at("}"):
            tok = self.expect("strata")
            self.expect("{")
            self.expect("zeros")
            self.expect("[")
            zeros: list[int] = []
            if not self.at("]"):
                while True:
                    z = self.expect_int()
                    if z < 1:
                        tok_z = self.toks[self.pos - 1]
                        raise ParseError(
                            "zeros entries are 1-based coordinates",
                            tok_z.line,
                            tok_z.col,
                        )
                    zeros.append(z - 1)
                    if not self.eat(","):
                        break
            self.expect("]")
            self.expect(";")
            self.expect("gamma")
            self.expect("{")
            gnode = None if self.at("}") else self.formula()
            self.expect("}")
            self.expect(";")
            self.expect("fiber")
            res, pattern = self.respoly()
            self.expect(";")
            self.expect("}")
            if len(set(zeros)) != len(zeros):
                raise ParseError("repeated zero coordinate", tok.line, tok.col)
            raw.append((tuple(sorted(zeros)), gnode, res, pattern, tok))
        self.expect("}")
        if not raw:
            raise ParseError(
                "a region needs at least one strata block", name.line, name.col
            )
        arity = 0
        for zeros, gnode, _, _, _ in raw:
            used = 0 if gnode is None else _scan_arity(gnode, ())
            arity = max(arity, len(zeros) + used, max(zeros, default=-1) + 1)
        strata_decls = []
        strata = []
        for zeros, gnode, res, pattern, tok in raw:
            k = arity - len(zeros)
            if gnode is None:
                gf: fm.Formula = fm.And(())
                gset = PresburgerSet.universe(k)
            else:
                used = _scan_arity(gnode, ())
                if used > k:
                    raise ParseError(
                        f"gamma block uses x{used} but only {k} coordinate(s) "
                        "stay nonzero in this stratum",
                        tok.line,
                        tok.col,
                    )
                gf = _resolve(gnode, k, ())
                gset = PresburgerSet.from_formula(gf, k).disjointified()
            fibers = tuple(Fiber(c, res, pattern) for c in gset.cells)
            strata_decls.append(StratumDecl(zeros, gf, res, pattern))
            strata.append(Stratum(frozenset(zeros), gset, fibers))
        try:
            region = MonomialRegion(arity, tuple(strata))
        except ValueError as exc:
            raise ParseError(
                f"region '{name.text}': {exc}", name.line, name.col
            ) from exc
        return RegionDecl(name.text, arity, tuple(strata_decls), region)

    def weight_decl(self) -> WeightDecl:
        name = self.expect_name("a weight name")
        self.expect("{")
        kappa: list[tuple[tuple[Fraction, ...], Fraction]] = []
        omega = None
        while not self.at("}"):
            if self.at("kappa"):
                tok = self.advance()
                if omega is not None:
                    raise ParseError(
                        "kappa clauses must precede omega", tok.line, tok.col
                    )
                idx = self.expect_int()
                if idx != len(kappa) + 1:
                    raise ParseError(
                        f"kappa indices run 1, 2, ... in order (got {idx})",
                        tok.line,
                        tok.col,
                    )
                self.expect(":")
                kappa.append(self.linform())
                self.expect(";")
            elif self.at("omega"):
                tok = self.advance()
                if omega is not None:
                    raise ParseError("omega given twice", tok.line, tok.col)
                self.expect(":")
                omega = self.linform()
                self.expect(";")
            else:
                tok = self.peek()
                raise ParseError(
                    f"got {tok.describe()}",
                    tok.line,
                    tok.col,
                    ["'kappa'", "'omega'", "'}'"],
                )
        self.expect("}")
        min_arity = max(
            [len(c) for c, _ in kappa] + ([len(omega[0])] if omega else []) + [0]
        )
        padded = tuple(
            (tuple(c) + (Q(0),) * (min_arity - len(c)), k) for c, k in kappa
        )
        if omega is not None:
            omega = (tuple(omega[0]) + (Q(0),) * (min_arity - len(omega[0])), omega[1])
        return WeightDecl(name.text, min_arity, padded, omega)

    def linform(self) -> tuple[tuple[Fraction, ...], Fraction]:
        """A quantifier-free linear expression over the free variables."""
        tok = self.peek()
        nt = self.linexpr()
        coeffs: dict[int, Fraction] = {}
        for vname, c in nt.coeffs:
            idx = _coord_of(vname)
            if idx is None:
                raise ParseError(
                    f"variable '{vname}' is not a coordinate (use x1, x2, ...)",
                    tok.line,
                    tok.col,
                )
            coeffs[idx] = coeffs.get(idx, Q(0)) + c
        arity = max(coeffs, default=-1) + 1
        return tuple(coeffs.get(i, Q(0)) for i in range(arity)), nt.const

    # -- formulas -------------------------------------------------------

    def formula(self):
        parts = [self.conj()]
        while self.eat("or"):
            parts.append(self.conj())
        return parts[0] if len(parts) == 1 else NOr(tuple(parts))

    def conj(self):
        parts = [self.unary()]
        while self.eat("and"):
            parts.append(self.unary())
        return parts[0] if len(parts) == 1 else NAnd(tuple(parts))

    def unary(self):
        tok = self.peek()
        if self.eat("not"):
            return NNot(self.unary())
        if self.eat("exists"):
            # the dot gives the quantifier maximal scope to the right
            var = self.expect_name("a variable name")
            self.expect(".")
            return NExists(var.text, self.formula(), tok.line, tok.col)
        if self.at("("):
            # may open a group or a parenthesised linear expression; try the
            # group reading first and fall back to an atom, keeping whichever
            # error got farther when both fail
            save = self.pos
            self.advance()
            try:
                inner = self.formula()
                self.expect(")")
                return inner
            except ParseError as group_err:
                self.pos = save
                try:
                    return self.atom()
                except ParseError as atom_err:
                    raise max(
                        group_err, atom_err, key=lambda e: (e.line, e.col)
                    ) from None
        return self.atom()

    def atom(self):
        tok = self.peek()
        lhs = self.linexpr()
        op_tok = self.peek()
        if op_tok.kind != "op" or op_tok.text not in _RELOPS:
            raise ParseError(
                f"got {op_tok.describe()}",
                op_tok.line,
                op_tok.col,
                [f"'{o}'" for o in _RELOPS],
            )
        self.advance()
        rhs = self.linexpr()
        diff = _nterm_sub(lhs, rhs)
        if op_tok.text == "==" and self.at("("):
            save = self.pos
            self.advance()
            if self.eat("mod"):
                m = self.expect_int()
                if m < 1:
                    raise ParseError(
                        "modulus must be a positive integer", tok.line, tok.col
                    )
                self.expect(")")
                return NCong(diff, m, tok.line, tok.col)
            self.pos = save
        op = {
            ">=": (">=", diff),
            ">": (">", diff),
            "<=": (">=", _nterm_neg(diff)),
            "<": (">", _nterm_neg(diff)),
            "==": ("==", diff),
            "!=": ("!=", diff),
        }[op_tok.text]
        return NCmp(op[1], op[0], tok.line, tok.col)

    # -- linear expressions --------------------------------------------

    def linexpr(self) -> NTerm:
        sign = Q(-1) if self.eat("-") else Q(1)
        coeffs: list[tuple[str, Fraction]] = []
        const = Q(0)
        while True:
            coeffs, const = self.addend(sign, coeffs, const)
            if self.eat("+"):
                sign = Q(1)
            elif self.eat("-"):
                sign = Q(-1)
            else:
                break
        return NTerm(tuple(coeffs), const)

    def addend(self, sign, coeffs, const):
        tok = self.peek()
        if tok.kind == "int":
            value = Q(self.expect_int())
            if self.at("/"):
                save = self.pos
                self.advance()
                if self.peek().kind == "int":
                    value /= self.expect_int()
                else:
                    self.pos = save
            starred = self.eat("*")
            nxt = self.peek()
            if nxt.kind == "name" and nxt.text not in _KEYWORDS:
                coeffs = coeffs + [(self.advance().text, sign * value)]
            elif starred:
                raise ParseError(
                    f"got {nxt.describe()}", nxt.line, nxt.col, ["a variable"]
                )
            else:
                const += sign * value
            return coeffs, const
        if tok.kind == "name" and tok.text not in _KEYWORDS:
            coeffs = coeffs + [(self.advance().text, sign * Q(1))]
            return coeffs, const
        raise ParseError(
            f"got {tok.describe()}", tok.line, tok.col, ["a number", "a variable"]
        )

    # -- residue polynomials -------------------------------------------

    def respoly(self) -> tuple[ResClass, Optional[tuple[str, ...]]]:
        terms: list[tuple[int, int, int]] = []  # (coefficient, u power, v power)
        sign = -1 if self.eat("-") else 1
        while True:
            terms.append(self.resterm(sign))
            if self.eat("+"):
                sign = 1
            elif self.eat("-"):
                sign = -1
            else:
                break
        total = ResClass.zero()
        for c, ue, ve in terms:
            total = total + ResClass.monomial(ue + ve, ue, c)
        pattern = None
        if len(terms) == 1 and terms[0][0] == 1:
            pattern = (UNIT,) * terms[0][1] + (ONE,) * terms[0][2]
        return total, pattern

    def resterm(self, sign: int) -> tuple[int, int, int]:
        tok = self.peek()
        coeff = 1
        seen = False
        if tok.kind == "int":
            coeff = self.expect_int()
            seen = True
            self.eat("*")
        ue = ve = 0
        while True:
            tok = self.peek()
            if tok.kind != "name" or any(ch not in "uv" for ch in tok.text):
                break
            self.advance()
            seen = True
            chars = tok.text
            exp = 1
            if self.eat("^"):
                exp = self.expect_int()
            for ch in chars[:-1]:
                ue += ch == "u"
                ve += ch == "v"
            ue += (chars[-1] == "u") * exp
            ve += (chars[-1] == "v") * exp
            if not self.eat("*"):
                if self.peek().kind != "name":
                    break
        if not seen:
            tok = self.peek()
            raise ParseError(
                f"got {tok.describe()}",
                tok.line,
                tok.col,
                ["a residue monomial in u and v", "an integer"],
            )
        return sign * coeff, ue, ve


def _nterm_neg(t: NTerm) -> NTerm:
    return NTerm(tuple((n, -c) for n, c in t.coeffs), -t.const)


def _nterm_sub(a: NTerm, b: NTerm) -> NTerm:
    return NTerm(a.coeffs + tuple((n, -c) for n, c in b.coeffs), a.const - b.const)


def parse_spec(text: str) -> SpecDocument:
    return _Parser(text).document()


# ---------------------------------------------------------------------------
# canonical printing


def _coeff_str(c, name: str, leading: bool) -> str:
    c = Fraction(c)
    mag = abs(c)
    body = name if mag == 1 else f"{mag}*{name}"
    if leading:
        return body if c > 0 else f"-{body}"
    return f"+ {body}" if c > 0 else f"- {body}"


def _linexpr_str(coeffs: Sequence, const, arity: int, depth: int = 0) -> str:
    names = [f"x{i+1}" for i in range(arity)] + [f"y{d+1}" for d in range(depth)]
    chunks: list[str] = []
    for c, name in zip(coeffs, names):
        if c == 0:
            continue
        chunks.append(_coeff_str(c, name, leading=not chunks))
    const = Fraction(const)
    if const or not chunks:
        if not chunks:
            chunks.append(str(_num(const)))
        else:
            mag = _num(abs(const))
            chunks.append(f"+ {mag}" if const > 0 else f"- {mag}")
    return " ".join(chunks)


def _formula_str(f: fm.Formula, arity: int, depth: int = 0) -> tuple[str, int]:
    """Rendered text and its precedence (3 unary, 2 and, 1 or)."""
    if isinstance(f, fm.Cmp):
        return f"{_linexpr_str(f.term.coeffs, f.term.const, arity, depth)} {f.op} 0", 3
    if isinstance(f, fm.Cong):
        lhs = _linexpr_str(f.term.coeffs, f.term.const, arity, depth)
        return f"{lhs} == {f.residue} (mod {f.modulus})", 3
    if isinstance(f, fm.Not):
        body, prec = _formula_str(f.part, arity, depth)
        if prec < 3:
            body = f"({body})"
        return f"not {body}", 3
    if isinstance(f, fm.Exists):
        body, _ = _formula_str(f.body, arity, depth + 1)
        return f"exists y{depth + 1}. ({body})", 3
    if isinstance(f, fm.And):
        if not f.parts:
            return "0 >= 0", 3
        bits = []
        for p in f.parts:
            text, prec = _formula_str(p, arity, depth)
            bits.append(f"({text})" if prec <= 2 else text)
        return " and ".join(bits), 2
    if isinstance(f, fm.Or):
        if not f.parts:
            return "0 == 1", 3
        bits = []
        for p in f.parts:
            text, prec = _formula_str(p, arity, depth)
            bits.append(f"({text})" if prec <= 1 else text)
        return " or ".join(bits), 1
    raise TypeError(f"cannot print {type(f).__name__}")


def print_spec(doc: SpecDocument) -> str:
    out: list[str] = []
    for decl in doc.declarations.values():
        if isinstance(decl, SetDecl):
            body, _ = _formula_str(decl.formula, decl.arity)
            out.append(f"set {decl.name} {{ {body} }}")
        elif isinstance(decl, RegionDecl):
            out.append(f"region {decl.name} {{")
            for st in decl.strata:
                zeros = ", ".join(str(z + 1) for z in st.zeros)
                k = decl.arity - len(st.zeros)
                if isinstance(st.gamma, fm.And) and not st.gamma.parts:
                    gtxt = "{ }"
                else:
                    gtxt = "{ %s }" % _formula_str(st.gamma, k)[0]
                out.append(f"  strata {{ zeros [{zeros}]; gamma {gtxt}; fiber {st.res}; }}")
            out.append("}")
        else:
            out.append(f"weight {decl.name} {{")
            for i, (coeffs, const) in enumerate(decl.kappa):
                out.append(
                    f"  kappa {i+1}: {_linexpr_str(coeffs, const, decl.min_arity)};"
                )
            if decl.omega is not None:
                coeffs, const = decl.omega
                out.append(f"  omega: {_linexpr_str(coeffs, const, decl.min_arity)};")
            out.append("}")
        out.append("")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# command dispatch


@dataclass
class CommandResult:
    command: str
    payload: dict
    human: tuple[str, ...]
    ok: bool = True
    note: str = "exact rational arithmetic; numbers are integers or a/b"


def _rat(x) -> str:
    x = Fraction(x)
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


def _decimal_str(x, places: int) -> str:
    x = Fraction(x)
    with localcontext() as ctx:
        ctx.prec = places + 30
        d = Decimal(x.numerator) / Decimal(x.denominator)
        return str(d.quantize(Decimal(1).scaleb(-places)))


def _need(flags: dict, key: str, what: str):
    if flags.get(key) is None:
        raise CommandError(f"{what} (flag --{key.replace('_', '-')})")
    return flags[key]


def _get_set(doc: SpecDocument, name: str) -> SetDecl:
    decl = doc[name]
    if not isinstance(decl, SetDecl):
        raise CommandError(f"'{name}' is not a set")
    return decl


def _get_region(doc: SpecDocument, name: str) -> MonomialRegion:
    decl = doc[name]
    if isinstance(decl, RegionDecl):
        return decl.region
    if isinstance(decl, SetDecl):
        try:
            return full_region(decl.pset)
        except ValueError as exc:
            raise CommandError(f"set '{name}' is not usable as a region: {exc}") from exc
    raise CommandError(f"'{name}' is not a region")


def _get_weight(
    doc: SpecDocument, name: Optional[str], arity: int, kappa_values=None
) -> Optional[ValWeight]:
    if name is None:
        return None
    decl = doc[name]
    if not isinstance(decl, WeightDecl):
        raise CommandError(f"'{name}' is not a weight")
    return decl.build(arity, kappa_values)


def _pset_formula_text(pset: PresburgerSet, arity: int) -> str:
    names = [f"x{i+1}" for i in range(arity)]
    cells = []
    for c in pset.cells:
        bits = [f"{format_term(t, names)} >= 0" for t in c.ineqs]
        bits += [
            f"{format_term(g.term, names)} == {g.residue} (mod {g.modulus})"
            for g in c.congs
        ]
        cells.append(" and ".join(bits) if bits else "0 >= 0")
    if not cells:
        return "-1 >= 0"
    if len(cells) == 1:
        return cells[0]
    return " or ".join(f"({c})" if " and " in c else c for c in cells)


def _cmd_qe(doc, args, flags):
    decl = _get_set(doc, args[0])
    text = _pset_formula_text(decl.pset, decl.arity)
    payload = {
        "name": decl.name,
        "arity": decl.arity,
        "cells": len(decl.pset.cells),
        "formula": text,
    }
    return payload, (text,), True


def _cmd_euler(doc, args, flags):
    decl = _get_set(doc, args[0])
    if any(isinstance(a, fm.Cong) for a in fm.atoms_of(decl.formula)):
        raise CommandError(
            "euler reads the description over the rationals; congruence atoms "
            "have no meaning there"
        )
    s = SemilinearSet.decompose(decl.formula, decl.arity)
    chi_g, chi_b, cls = semilinear_euler(s)
    payload = {"chi_g": chi_g, "chi_b": chi_b, "class": str(cls)}
    return payload, (json.dumps(payload),), True


def _cmd_class(doc, args, flags):
    region = _get_region(doc, args[0])
    weight = _get_weight(doc, args[1] if len(args) > 1 else None, region.arity)
    cls = integral_class(region, weight)
    grades = {}
    human = []
    for k in cls.grades():
        reps = cls.parts[k]
        total = ResClass.zero()
        for p in reps.values():
            total = total + ResClass({k: dict(p)})
        grades[str(k)] = {"representatives": len(reps), "residue_total": str(total)}
        human.append(f"grade {k}: {len(reps)} representative(s), residue total {total}")
    payload = {"grades": grades, "zero": cls.is_zero()}
    if not human:
        human = ["0"]
    return payload, tuple(human), True


def _cmd_sum(doc, args, flags):
    decl = _get_set(doc, args[0])
    n = decl.arity
    if n == 0:
        raise CommandError("sum needs at least one coordinate")
    exponents = ExponentData(
        LinTerm((0,) * n, 0), tuple(unit_term(n, i) for i in range(n))
    )
    series = zeta_assemble(
        [(Poly.monomial(1, (0,), 1), decl.pset, exponents)], flags.get("rho", 1)
    )
    payload = {"series": str(series), "variables": n, "rho": flags.get("rho", 1)}
    return payload, (str(series),), True


def _cmd_zeta(doc, args, flags):
    region = _get_region(doc, args[0])
    weight = _get_weight(doc, args[1] if len(args) > 1 else None, region.arity)
    norm = "classical" if flags.get("classical") else "paper"
    value = zeta(region, weight, flags.get("rho", 1), norm)
    payload = {"zeta": str(value), "rho": flags.get("rho", 1), "normalization": norm}
    return payload, (str(value),), True


def _cmd_fubini(doc, args, flags):
    region = _get_region(doc, args[0])
    n = region.arity
    if n > 4:
        raise CommandError("fubini-check enumerates n! orders; supported up to n = 4")
    weight = _get_weight(doc, args[1] if len(args) > 1 else None, n)
    rho = flags.get("rho", 1)
    base = zeta(region, weight, rho)
    bad = []
    count = 0
    for perm in itertools.permutations(range(n)):
        count += 1
        if integrate_ordered(region, weight, list(perm), rho) != base:
            bad.append(list(perm))
    payload = {
        "value": str(base),
        "orders": count,
        "mismatched_orders": bad,
        "all_equal": not bad,
    }
    verdict = "agree" if not bad else "DISAGREE"
    return payload, (f"{count} orders {verdict}: {base}",), not bad


def _parse_matrix(text: str) -> list[list[int]]:
    rows = [r for r in text.split(";") if r.strip()]
    out = [[int(x) for x in r.replace(",", " ").split()] for r in rows]
    if not out:
        raise CommandError("empty matrix")
    return out


def _cmd_cov(doc, args, flags):
    """Transport the weight along the map; optionally audit a claimed result.

    With two names the transported weight is computed and certified against
    the source.  A third name supplies a claimed transported weight, and the
    command instead checks the claim -- the one way this check can fail.
    """
    region = _get_region(doc, args[0])
    n = region.arity
    weight = _get_weight(doc, args[1] if len(args) > 1 else None, n)
    mat = _parse_matrix(_need(flags, "matrix", "cov-check needs the map matrix"))
    units_text = flags.get("units")
    units = (
        [int(x) for x in units_text.replace(",", " ").split()] if units_text else [0] * n
    )
    try:
        mmap = MonomialMap(tuple(tuple(r) for r in mat), tuple(units))
        region2, weight2 = change_of_variables(
            region, weight if weight is not None else ValWeight.trivial(n), mmap
        )
    except ValueError as exc:
        raise CommandError(f"cov-check: {exc}") from exc
    if len(args) > 2:
        claimed = _get_weight(doc, args[2], n)
        if claimed.k != weight2.k:
            raise CommandError(
                "claimed weight must carry the same number of kappa forms"
            )
        weight2 = claimed
    z1 = zeta(region, weight)
    z2 = zeta(region2, weight2)
    om1 = weight.gamma_form if weight is not None else None
    verdict = check_measure_preserving(
        mmap, (region, om1), (region2, weight2.gamma_form)
    )
    equal = z1 == z2
    payload = {
        "zeta": str(z1),
        "transformed_zeta": str(z2),
        "zeta_equal": equal,
        "measure_preserving": bool(verdict),
        "reason": verdict.reason,
        "witness": [_rat(x) for x in verdict.witness] if verdict.witness else None,
    }
    ok = equal and bool(verdict)
    status = "preserved" if ok else "VIOLATED"
    return payload, (f"measure {status}; zeta {z1}",), ok


def _cmd_family(doc, args, flags):
    region = _get_region(doc, args[0])
    weight = _get_weight(doc, args[1] if len(args) > 1 else None, region.arity)
    rho_list = flags.get("rho_list") or [1, 2]
    pieces = zeta_pieces(region, weight)
    if not pieces:
        raise CommandError("the region has no full-support strata to sum over")
    report = uniform_family(pieces, rho_list)
    entries = [
        {
            "level": e.level,
            "piece": e.piece,
            "residues": list(e.residues),
            "count": e.count.format(["q"]),
            "series": str(e.ratfun),
        }
        for e in report.entries
    ]
    per_rho = {}
    matches = True
    for r in report.rho_values:
        total = report.total(r)
        direct = zeta(region, weight, r)
        same = total == direct
        matches = matches and same
        per_rho[str(r)] = {"series": str(total), "matches_direct": same}
    certified = report.all_certified()
    payload = {
        "rho_values": list(report.rho_values),
        "entries": entries,
        "per_rho": per_rho,
        "scaling_certified": certified,
        "matches_direct": matches,
    }
    ok = certified and matches
    human = [
        f"{len(entries)} primitive series across rho in {list(report.rho_values)}; "
        f"scaling {'certified' if certified else 'NOT certified'}"
    ]
    for r in report.rho_values:
        human.append(f"rho {r}: {per_rho[str(r)]['series']}")
    return payload, tuple(human), ok


def _cmd_oracle(doc, args, flags):
    region = _get_region(doc, args[0])
    n = region.arity
    wname = args[1] if len(args) > 1 else None
    kv = flags.get("kappa")
    wdecl = doc[wname] if wname is not None else None
    if wdecl is not None and not isinstance(wdecl, WeightDecl):
        raise CommandError(f"'{wname}' is not a weight")
    if wdecl is not None and wdecl.kappa and kv is None:
        raise CommandError(
            "oracle-check needs numeric kappa exponents for the weight "
            "(flag --kappa, comma separated)"
        )
    weight = wdecl.build(n, kv) if wdecl is not None else None
    p = _need(flags, "p", "oracle-check needs the residue characteristic")
    kind = "LaurentSeries" if flags.get("series") else "Qp"
    delta = flags.get("residue_degree") or 1
    precision = flags.get("precision") or 8
    try:
        cfg = padic.LocalFieldConfig(kind, p, delta, precision)
        symbolic = zeta(region, weight)
        report = padic.compare(symbolic, region, weight, cfg)
    except (ValueError, padic.PrecisionError) as exc:
        raise CommandError(f"oracle-check: {exc}") from exc
    diff = abs(report.truncated_value - report.symbolic_value)
    payload = {
        "field": kind,
        "p": p,
        "q": cfg.q,
        "precision": precision,
        "truncated": _rat(report.truncated_value),
        "tail_bound": _rat(report.tail_bound),
        "symbolic": _rat(report.symbolic_value),
        "difference": _rat(diff),
        "verdict": report.verdict,
    }
    places = flags.get("decimal")

    def show(x):
        return f"{_rat(x)} ({_decimal_str(x, places)})" if places else _rat(x)

    human = (
        f"truncated {show(report.truncated_value)} vs symbolic "
        f"{show(report.symbolic_value)}; |difference| {show(diff)} "
        f"{'<=' if report.verdict else '>'} tail {show(report.tail_bound)}",
    )
    return payload, human, report.verdict


_COMMANDS = {
    "qe": (_cmd_qe, 1, 1),
    "euler": (_cmd_euler, 1, 1),
    "class": (_cmd_class, 1, 2),
    "sum": (_cmd_sum, 1, 1),
    "zeta": (_cmd_zeta, 1, 2),
    "fubini-check": (_cmd_fubini, 1, 2),
    "cov-check": (_cmd_cov, 1, 3),
    "family": (_cmd_family, 1, 2),
    "oracle-check": (_cmd_oracle, 1, 2),
}


def run(command: Sequence[str], document: SpecDocument, flags: Optional[dict] = None) -> CommandResult:
    """Dispatch one subcommand against a parsed document."""
    if not command:
        raise CommandError("no command given")
    name, args = command[0], list(command[1:])
    if name not in _COMMANDS:
        raise CommandError(
            f"unknown command '{name}' (one of {', '.join(sorted(_COMMANDS))})"
        )
    handler, lo, hi = _COMMANDS[name]
    if not lo <= len(args) <= hi:
        raise CommandError(f"'{name}' takes {lo}..{hi} name argument(s)")
    flags = dict(flags or {})
    try:
        payload, human, ok = handler(document, args, flags)
    except CommandError:
        raise
    except (
        ValueError,
        TypeError,
        ArithmeticError,
        PoleHit,
        NonIntegralExponent,
        padic.PrecisionError,
    ) as exc:
        raise CommandError(f"{name}: {exc}") from exc
    return CommandResult(" ".join(command), payload, tuple(human), ok)


# ---------------------------------------------------------------------------
# entry point


def _build_argparser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="valzeta",
        description="Exact zeta functions and motivic classes of valuation-defined sets.",
    )
    ap.add_argument("--json", action="store_true", help="machine-readable output")
    ap.add_argument("--decimal", type=int, metavar="K", help="display-only decimals")
    ap.add_argument("--file", "-f", help="spec file (default: stdin)")
    ap.add_argument("--spec", help="inline spec text")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, extra=()):
        p = sub.add_parser(name)
        p.add_argument("names", nargs="+")
        # accept the global flags after the subcommand as well; SUPPRESS keeps
        # the subparser from clobbering values parsed before it
        sup = dict(default=argparse.SUPPRESS)
        p.add_argument("--json", action="store_true", **sup)
        p.add_argument("--decimal", type=int, metavar="K", **sup)
        p.add_argument("--file", "-f", **sup)
        p.add_argument("--spec", **sup)
        for args, kwargs in extra:
            p.add_argument(*args, **kwargs)
        return p

    add("qe")
    add("euler")
    add("class")
    add("sum", extra=[(["--rho"], dict(type=int, default=1))])
    add(
        "zeta",
        extra=[
            (["--rho"], dict(type=int, default=1)),
            (["--classical"], dict(action="store_true")),
        ],
    )
    add("fubini-check", extra=[(["--rho"], dict(type=int, default=1))])
    add(
        "cov-check",
        extra=[
            (["--matrix"], dict(help="rows separated by ';', e.g. '1 0; 1 1'")),
            (["--units"], dict(help="unit valuations, e.g. '0 0'")),
        ],
    )
    add("family", extra=[(["--rho-list"], dict(help="e.g. '1,2,3,4'"))])
    add(
        "oracle-check",
        extra=[
            (["--p"], dict(type=int)),
            (["--precision"], dict(type=int)),
            (["--residue-degree"], dict(type=int, default=1)),
            (["--series"], dict(action="store_true", help="Laurent series field")),
            (["--kappa"], dict(help="numeric kappa exponents, e.g. '1,2'")),
        ],
    )
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ns = _build_argparser().parse_args(argv)
    if ns.spec is not None:
        text = ns.spec
    elif ns.file is not None:
        try:
            with open(ns.file, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 3
    else:
        text = sys.stdin.read()
    try:
        doc = parse_spec(text)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 2
    raw_flags = {
        "rho": getattr(ns, "rho", None),
        "classical": getattr(ns, "classical", None),
        "matrix": getattr(ns, "matrix", None),
        "units": getattr(ns, "units", None),
        "p": getattr(ns, "p", None),
        "residue_degree": getattr(ns, "residue_degree", None),
        "series": getattr(ns, "series", None),
        "decimal": ns.decimal,
    }
    flags = {k: v for k, v in raw_flags.items() if v is not None}
    if getattr(ns, "rho_list", None):
        try:
            flags["rho_list"] = [int(x) for x in ns.rho_list.replace(",", " ").split()]
        except ValueError:
            print("error: --rho-list wants integers", file=sys.stderr)
            return 3
    if getattr(ns, "kappa", None):
        try:
            flags["kappa"] = tuple(
                Fraction(x) for x in ns.kappa.replace(",", " ").split()
            )
        except ValueError:
            print("error: --kappa wants rationals", file=sys.stderr)
            return 3
    if getattr(ns, "precision", None) is not None:
        flags["precision"] = ns.precision
    elif os.environ.get("VALZETA_PRECISION"):
        try:
            flags["precision"] = int(os.environ["VALZETA_PRECISION"])
        except ValueError:
            print("error: VALZETA_PRECISION wants an integer", file=sys.stderr)
            return 3
    try:
        result = run([ns.command] + list(ns.names), doc, flags)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    if ns.json:
        blob = {
            "command": result.command,
            "result": result.payload,
            "ok": result.ok,
            "note": result.note,
        }
        print(json.dumps(blob))
    else:
        for line in result.human:
            print(line)
    return 0 if result.ok else 4


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
