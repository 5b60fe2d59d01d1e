"""Ten end-to-end checks, one per numbered release gate.

Every test times itself and prints a single ``check N: PASS/FAIL`` line
(visible under ``pytest -s``); the time limit is part of the assertion.
Randomized parts use fixed seeds so failures reproduce.
"""

import itertools
import random
import time
from contextlib import contextmanager
from fractions import Fraction

from valzeta import formula as fm
from valzeta import padic as pd
from valzeta import vfrag as vf
from valzeta.genfun import RatFun, uniform_family
from valzeta.grothring import (
    LocalizedUV,
    ResClass,
    RVClass,
    generator_j,
    origin_rep,
    ray_rep,
    rep_product,
    retract,
)
from valzeta.intlinalg import det
from valzeta.polynomial import Poly
from valzeta.presburger import (
    PAffineMap,
    PAffinePiece,
    PresburgerSet,
    lt,
    make_cell,
    unimodularize,
)
from valzeta.semilinear import SemilinearSet, aff, convolve, euler, fiber, product

Q = Fraction


@contextmanager
def gate(number, limit):
    """Print one verdict line for the numbered check and enforce its budget."""
    t0 = time.monotonic()
    try:
        yield
    except BaseException:
        print(f"check {number}: FAIL ({time.monotonic() - t0:.2f} s)")
        raise
    dt = time.monotonic() - t0
    verdict = "PASS" if dt < limit else "FAIL"
    print(f"check {number}: {verdict} ({dt:.2f} s, limit {limit} s)")
    assert dt < limit, f"check {number} exceeded its {limit} s budget"


def atom(coeffs, const=0, op=">="):
    return fm.Cmp(fm.term(coeffs, const), op)


def rand_gamma_formula(rng, arity, natoms):
    atoms = []
    for _ in range(natoms):
        coeffs = [rng.randint(-2, 2) for _ in range(arity)]
        if all(c == 0 for c in coeffs):
            coeffs[rng.randrange(arity)] = 1
        op = rng.choice([">=", ">", ">=", ">", "=="])
        atoms.append(atom(coeffs, rng.randint(-3, 3), op))
    if len(atoms) == 1:
        return atoms[0]
    pick = rng.randrange(3)
    if pick == 0:
        return fm.And(tuple(atoms))
    if pick == 1:
        return fm.Or(tuple(atoms))
    return fm.conj(atoms[0], fm.Not(fm.Or(tuple(atoms[1:]))))


# ---------------------------------------------------------------------------
# 1. the two Euler characteristics


def test_01_euler_characteristics_and_refinement():
    with gate(1, 10):
        ray = SemilinearSet.decompose(atom([1], 0, ">"), 1)
        chi_g, chi_b, _ = euler(ray)
        assert chi_g == -1
        assert chi_b == 0

        rng = random.Random(101)
        for _ in range(30):
            arity = rng.choice([1, 1, 2, 2, 3])
            s = SemilinearSet.decompose(
                rand_gamma_formula(rng, arity, rng.randint(1, 3)), arity
            )
            base = euler(s)[:2]
            for _ in range(5):
                walls = []
                for _ in range(rng.randint(1, 2)):
                    coeffs = [rng.randint(-2, 2) for _ in range(arity)]
                    if all(c == 0 for c in coeffs):
                        coeffs[0] = 1
                    walls.append(aff(coeffs, Q(rng.randint(-4, 4), rng.choice([1, 2]))))
                refined = s.refine(walls)
                assert euler(refined)[:2] == base


# ---------------------------------------------------------------------------
# 2. the class ring Z[X]/(X^2+X)


def test_02_class_ring_is_multiplicative():
    with gate(2, 5):
        rng = random.Random(202)
        for _ in range(50):
            ra = rng.choice([1, 2])
            rb = 1 if ra == 2 else rng.choice([1, 2])
            a = SemilinearSet.decompose(rand_gamma_formula(rng, ra, rng.randint(1, 3)), ra)
            b = SemilinearSet.decompose(rand_gamma_formula(rng, rb, rng.randint(1, 3)), rb)
            assert euler(product(a, b))[2] == euler(a)[2] * euler(b)[2]

        ray = SemilinearSet.decompose(atom([1], 0, ">"), 1)
        x = euler(ray)[2]
        assert euler(product(ray, ray))[2] == -x
        assert x * x == -x


# ---------------------------------------------------------------------------
# 3. retractions kill the kernel generator


def mixed_rep(rng, k):
    rep = origin_rep(0)
    for _ in range(k):
        rep = rep_product(rep, ray_rep() if rng.random() < 0.5 else origin_rep(1))
    return rep


def rand_rv_of_grade(rng, top):
    """A random class whose highest grade is exactly ``top``."""
    out = RVClass.pair({rng.randint(0, top): rng.choice([-2, -1, 1, 2])}, mixed_rep(rng, top))
    for _ in range(rng.randint(0, 2)):
        k = rng.randint(0, top)
        out = out + RVClass.pair({rng.randint(0, k): rng.choice([-1, 1, 2])}, mixed_rep(rng, k))
    return out


def test_03_kernel_generator_killed_and_pure_division():
    with gate(3, 5):
        rng = random.Random(303)
        for trial in range(20):
            top = 1 + trial % 8  # grades 1..8, each hit at least twice
            x = rand_rv_of_grade(rng, top)
            for variant, mode in (("plain", "plain"), ("mu_gamma", "mu_gamma"), ("mu", "mu")):
                prod = x * generator_j(variant)
                assert retract(prod, "Eg", mode).is_zero()
                assert retract(prod, "Eb", mode).is_zero()

        for k in range(9):
            comp = {rng.randint(0, k): rng.choice([-3, -1, 1, 2]) for _ in range(2)}
            comp = {i: c for i, c in comp.items() if c}
            if not comp:
                comp = {0: 1}
            x = ResClass({k: comp})
            rv = RVClass.from_res(x)
            assert retract(rv, "Eg", "plain") == LocalizedUV.make("A", x.components[k], k)
            assert retract(rv, "Eb", "plain") == LocalizedUV.make("v", x.components[k], k)


# ---------------------------------------------------------------------------
# 4. monomial weights on the unit disc, against the field oracle


def test_04_monomial_suite_with_oracle():
    with gate(4, 60):
        disc = vf.unit_polydisc(1)
        q_minus_1 = RatFun.from_q_poly(1, Poly(1, {(1,): 1, (0,): -1}))
        for a in (1, 2, 3):
            w = vf.ValWeight.monomial(1, [(a,)])
            z = vf.zeta(disc, w)
            assert z == q_minus_1 * RatFun.inv_one_minus((-1, a))
            # the normalization gives the full disc volume q at T = 1
            assert z.evaluate(Q(7), (Q(1),)) == 7

        for a in (1, 2, 3):
            for p in (2, 3, 5):
                for kappa in (1, 2):
                    w = vf.ValWeight.monomial(1, [(a,)], kappa_values=(kappa,))
                    cfg = pd.LocalFieldConfig("Qp", p, 1, 15)
                    rep = pd.compare(vf.zeta(disc, w), disc, w, cfg)
                    assert rep.verdict
                    assert rep.tail_bound <= Q(1, 10**4)


# ---------------------------------------------------------------------------
# 5. the iterated integral never depends on the coordinate order


def rand_region_and_weight(rng, n):
    ineqs = [
        lt([int(i == j) for j in range(n)], rng.randint(-1, 2)) for i in range(n)
    ]
    if rng.random() < 0.5:
        row = [rng.randint(-1, 2) for _ in range(n)]
        row[rng.randrange(n)] = 1
        ineqs.append(lt(row, rng.randint(0, 3)))
    congs = []
    if rng.random() < 0.4:
        row = [rng.randint(0, 1) for _ in range(n)]
        row[rng.randrange(n)] = 1
        m = rng.choice([2, 3])
        congs.append((lt(row), rng.randrange(m), m))
    cell = make_cell(n, ineqs, congs)
    if cell is None:
        return None
    region = vf.full_region(PresburgerSet.from_cells(n, [cell]))
    k = rng.choice([0, 1, 1, 2])
    rows = []
    for _ in range(k):
        row = [rng.randint(0, 2) for _ in range(n)]
        row[rng.randrange(n)] = rng.randint(1, 2)
        rows.append(tuple(row))
    weight = vf.ValWeight.monomial(n, rows) if rows else None
    return region, weight


def test_05_fubini_exchange_of_order():
    with gate(5, 120):
        rng = random.Random(505)
        done = 0
        while done < 20:
            n = rng.choice([2, 3])
            made = rand_region_and_weight(rng, n)
            if made is None:
                continue
            region, weight = made
            try:
                base = vf.zeta(region, weight)
            except ValueError:
                continue  # not bounded below; draw again
            for order in itertools.permutations(range(n)):
                assert vf.integrate_ordered(region, weight, order=order) == base
            done += 1


# ---------------------------------------------------------------------------
# 6. unimodular monomial substitutions


def rand_positive_unimodular(rng, n):
    m = [[int(i == j) for j in range(n)] for i in range(n)]
    for _ in range(rng.randint(1, 3)):
        i, j = rng.sample(range(n), 2)
        c = rng.randint(1, 2)
        for col in range(n):
            m[i][col] += c * m[j][col]
    perm = list(range(n))
    rng.shuffle(perm)
    return tuple(tuple(m[i]) for i in perm)


def test_06_change_of_variables_with_oracle():
    with gate(6, 120):
        rng = random.Random(606)
        cfg = pd.LocalFieldConfig("Qp", 3, 1, 10)
        for _ in range(10):
            n = rng.choice([2, 3])
            mm = vf.MonomialMap(
                rand_positive_unimodular(rng, n),
                tuple(rng.randint(0, 2) for _ in range(n)),
            )
            cells = [make_cell(n, [lt([int(i == j) for j in range(n)], -rng.randint(0, 1))
                                  for i in range(n)])]
            region = vf.full_region(PresburgerSet.from_cells(n, cells))
            w = vf.ValWeight.monomial(
                n, [tuple(rng.randint(1, 2) for _ in range(n))], kappa_values=(1,)
            )
            region2, w2 = vf.change_of_variables(region, w, mm)
            assert vf.zeta(region, w) == vf.zeta(region2, w2)
            before = pd.compare(vf.zeta(region, w), region, w, cfg)
            after = pd.compare(vf.zeta(region2, w2), region2, w2, cfg)
            assert before.verdict and after.verdict
            assert before.symbolic_value == after.symbolic_value


# ---------------------------------------------------------------------------
# 7. convolution of finitely supported families


def rand_discrete_family(rng):
    """A family over the line with finitely many integer-indexed point fibers."""
    extra = rng.choice([0, 1])
    parts = []
    for g in rng.sample(range(-2, 5), rng.randint(1, 3)):
        if extra:
            for xv in rng.sample(range(-3, 4), rng.randint(1, 3)):
                parts.append(fm.conj(atom([1, 0], -g, "=="), atom([0, 1], -xv, "==")))
        else:
            parts.append(atom([1], -g, "=="))
    return SemilinearSet.decompose(fm.disj(*parts), 1 + extra)


def counting_series(family, lo, hi):
    out = {}
    for g in range(lo, hi + 1):
        c = euler(fiber(family, g))[0]
        if c:
            out[g] = c
    return out


def test_07_convolution_multiplies_counting_series():
    with gate(7, 120):
        rng = random.Random(707)
        for _ in range(20):
            fam_i = rand_discrete_family(rng)
            fam_j = rand_discrete_family(rng)
            s_i = counting_series(fam_i, -3, 5)
            s_j = counting_series(fam_j, -3, 5)
            expected = {}
            for g1, c1 in s_i.items():
                for g2, c2 in s_j.items():
                    expected[g1 + g2] = expected.get(g1 + g2, 0) + c1 * c2
            got = counting_series(convolve(fam_i, fam_j), -6, 10)
            assert got == expected


# ---------------------------------------------------------------------------
# 8. quantifier elimination against windowed brute force

W8 = 50
FULL8 = (1 << (2 * W8 + 1)) - 1
_RES8 = {
    m: [
        sum(1 << (x + W8) for x in range(-W8, W8 + 1) if x % m == s)
        for s in range(m)
    ]
    for m in range(2, 7)
}


def _span_mask(lo, hi):
    lo, hi = max(lo, -W8), min(hi, W8)
    if lo > hi:
        return 0
    return ((1 << (hi - lo + 1)) - 1) << (lo + W8)


def last_var_mask(f, prefix):
    """Truth of ``f`` over the last variable in [-W8, W8], the rest fixed."""
    if isinstance(f, fm.Cmp):
        a = int(f.term.coeffs[-1])
        c = int(f.term.const) + sum(
            int(co) * xv for co, xv in zip(f.term.coeffs, prefix)
        )
        if f.op == ">":
            c -= 1  # a*x + c > 0  <=>  a*x + (c-1) >= 0 over the integers
        if f.op in (">=", ">"):
            if a == 0:
                return FULL8 if c >= 0 else 0
            if a > 0:
                return _span_mask(-(c // a), W8)  # x >= ceil(-c/a)
            return _span_mask(-W8, c // (-a))  # x <= floor(c/-a)
        hit = a != 0 and (-c) % a == 0 and -W8 <= (-c) // a <= W8
        one = (1 << ((-c) // a + W8)) if hit else 0
        if a == 0:
            one = FULL8 if c == 0 else 0
        return one if f.op == "==" else (FULL8 & ~one)
    if isinstance(f, fm.Cong):
        a = int(f.term.coeffs[-1])
        c = int(f.term.const) + sum(
            int(co) * xv for co, xv in zip(f.term.coeffs, prefix)
        )
        out = 0
        for s in range(f.modulus):
            if (a * s + c - f.residue) % f.modulus == 0:
                out |= _RES8[f.modulus][s]
        return out
    if isinstance(f, fm.And):
        out = FULL8
        for p in f.parts:
            out &= last_var_mask(p, prefix)
        return out
    if isinstance(f, fm.Or):
        out = 0
        for p in f.parts:
            out |= last_var_mask(p, prefix)
        return out
    if isinstance(f, fm.Not):
        return FULL8 & ~last_var_mask(f.part, prefix)
    raise TypeError(f"unexpected node {type(f).__name__}")


def rand_qf_formula(rng, n):
    atoms = []
    for _ in range(rng.randint(2, 4)):
        coeffs = [rng.randint(-3, 3) for _ in range(n)]
        if all(c == 0 for c in coeffs):
            coeffs[rng.randrange(n)] = 1
        if rng.random() < 0.3:
            atoms.append(
                fm.Cong(fm.term(coeffs, rng.randint(-6, 6)), rng.randint(0, 2), rng.randint(2, 6))
            )
        else:
            atoms.append(atom(coeffs, rng.randint(-6, 6), rng.choice([">=", ">", "==", "!="])))
    rng.shuffle(atoms)
    head, tail = atoms[0], atoms[1:]
    if not tail:
        return head
    pick = rng.randrange(3)
    if pick == 0:
        return fm.And(tuple(atoms))
    if pick == 1:
        return fm.Or((head, fm.And(tuple(tail))))
    return fm.conj(head, fm.Not(fm.Or(tuple(tail))))


def test_08_elimination_matches_windowed_projection():
    with gate(8, 60):
        rng = random.Random(808)

        # the bitmask scanner must agree with direct evaluation
        for _ in range(5):
            n = rng.choice([2, 3])
            f = rand_qf_formula(rng, n)
            prefix = tuple(rng.randint(-6, 6) for _ in range(n - 1))
            mask = last_var_mask(f, prefix)
            for x in range(-W8, W8 + 1):
                assert bool(mask >> (x + W8) & 1) == fm.evaluate(f, prefix + (x,))

        for trial in range(100):
            n = 3 if trial % 5 == 0 else 2
            body = rand_qf_formula(rng, n)
            last = [0] * n
            last[-1] = 1
            phi = fm.conj(body, atom(last, W8), atom([-c for c in last], W8))
            projected = PresburgerSet.from_formula(fm.Exists(phi), n - 1)
            for prefix in itertools.product(range(-W8, W8 + 1), repeat=n - 1):
                want = last_var_mask(phi, prefix) != 0
                assert projected.contains(prefix) == want


# ---------------------------------------------------------------------------
# 9. one family report across ramification values


def test_09_uniform_family_reproduces_each_level():
    with gate(9, 60):
        disc = vf.unit_polydisc(1)
        for a in (1, 2, 3):
            w = vf.ValWeight.monomial(1, [(a,)])
            report = uniform_family(vf.zeta_pieces(disc, w), [1, 2, 3, 4])
            for rho in (1, 2, 3, 4):
                assert report.total(rho) == vf.zeta(disc, w, rho)
            assert report.all_certified()
            pairs = {(r1, r2) for r1, r2, _, _, _ in report.pair_certified}
            assert pairs == {(1, 2), (1, 3), (1, 4), (2, 4)}
            assert all(ok for *_, ok in report.pair_certified)


# ---------------------------------------------------------------------------
# 10. recovering piecewise integer-affine bijections


def _ident(n):
    return tuple(tuple(int(i == j) for j in range(n)) for i in range(n))


def parity_cells(n, coord):
    e = [0] * n
    e[coord] = 1
    even = make_cell(n, [], [(lt(e), 0, 2)])
    odd = make_cell(n, [], [(lt(e), 1, 2)])
    return even, odd


def build_bijections(rng):
    """Ten maps that are bijections of the full lattice by construction."""
    maps = []

    # interleavings controlled by a congruence on the first coordinate
    for n in (1, 2, 3):
        even, odd = parity_cells(n, 0)
        flip = tuple(
            tuple((-1 if i == j == n - 1 and n > 1 else int(i == j)) for j in range(n))
            for i in range(n)
        )
        shift_up = (1,) + (0,) * (n - 1)
        shift_dn = (-1,) + (0,) * (n - 1)
        maps.append(
            PAffineMap(n, (PAffinePiece(even, _ident(n), shift_up),
                           PAffinePiece(odd, flip, shift_dn)))
        )

    # rotation of the residues mod 3 on the line
    cells3 = [make_cell(1, [], [(lt([1]), r, 3)]) for r in range(3)]
    maps.append(
        PAffineMap(1, (PAffinePiece(cells3[0], ((1,),), (1,)),
                       PAffinePiece(cells3[1], ((1,),), (1,)),
                       PAffinePiece(cells3[2], ((1,),), (-2,))))
    )

    # one global unimodular affine map presented in two half-space pieces
    for n, mat in ((2, ((1, 1), (0, 1))), (3, ((1, 1, 0), (0, 1, 1), (0, 0, 1)))):
        row = [0] * n
        row[-1] = 1
        upper = make_cell(n, [lt(row, 0)])
        lower = make_cell(n, [lt([-c for c in row], -1)])
        shift = tuple(rng.randint(-2, 2) for _ in range(n))
        maps.append(
            PAffineMap(n, (PAffinePiece(upper, mat, shift),
                           PAffinePiece(lower, mat, shift)))
        )

    # shear applied on one parity class only
    for n in (2, 3):
        even, odd = parity_cells(n, 0)
        sheared = tuple(
            tuple(1 if i == j else (1 if (i, j) == (n - 1, 0) else 0) for j in range(n))
            for i in range(n)
        )
        maps.append(
            PAffineMap(n, (PAffinePiece(even, _ident(n), (0,) * n),
                           PAffinePiece(odd, sheared, (0,) * n)))
        )

    # half-plane dependent shear direction
    up = make_cell(2, [lt([0, 1], 0)])
    down = make_cell(2, [lt([0, -1], -1)])
    maps.append(
        PAffineMap(2, (PAffinePiece(up, ((1, 1), (0, 1)), (0, 0)),
                       PAffinePiece(down, ((1, -1), (0, 1)), (0, 0))))
    )

    # reflection of the line split at zero
    nonneg = make_cell(1, [lt([1], 0)])
    neg = make_cell(1, [lt([-1], -1)])
    maps.append(
        PAffineMap(1, (PAffinePiece(nonneg, ((-1,),), (3,)),
                       PAffinePiece(neg, ((-1,),), (3,))))
    )
    return maps


def build_rejects():
    """Five maps that fail to be lattice bijections."""
    out = []
    # doubling misses every odd target
    out.append((PAffineMap(1, (PAffinePiece(make_cell(1), ((2,),), (0,)),)), 1))
    # fold: x and -x-1 land on the same ray
    neg = make_cell(1, [lt([-1], -1)])
    nonneg = make_cell(1, [lt([1], 0)])
    out.append(
        (PAffineMap(1, (PAffinePiece(nonneg, ((1,),), (0,)),
                        PAffinePiece(neg, ((-1,),), (-1,)))), 1)
    )
    # a piece covering only half the domain
    out.append((PAffineMap(1, (PAffinePiece(nonneg, ((1,),), (0,)),)), 1))
    # rank-one collapse in the plane
    out.append((PAffineMap(2, (PAffinePiece(make_cell(2), ((1, 0), (1, 0)), (0, 0)),)), 2))
    # parity clash: odds shifted onto the next even
    even, odd = parity_cells(1, 0)
    out.append(
        (PAffineMap(1, (PAffinePiece(even, ((1,),), (0,)),
                        PAffinePiece(odd, ((1,),), (1,)))), 1)
    )
    return out


def test_10_unimodular_recovery_and_certified_rejection():
    with gate(10, 30):
        rng = random.Random(1010)
        maps = build_bijections(rng)
        assert len(maps) == 10
        for f in maps:
            n = f.arity
            full = PresburgerSet.universe(n)
            res = unimodularize(f, full, full)
            assert res.ok, f"bijection wrongly rejected: {res.rejection}"
            assert res.pieces
            for piece in res.pieces:
                assert det([list(r) for r in piece.matrix]) in (1, -1)

        for f, n in build_rejects():
            full = PresburgerSet.universe(n)
            res = unimodularize(f, full, full)
            assert not res.ok
            rej = res.rejection
            if rej.kind == "not_injective":
                a, b = rej.points[:2]
                assert a != b
                assert f.apply(a) == f.apply(b) is not None
            elif rej.kind == "not_surjective":
                (y,) = rej.points
                box = itertools.product(range(-12, 13), repeat=n)
                assert all(f.apply(x) != tuple(y) for x in box)
            elif rej.kind == "undefined":
                (x,) = rej.points
                assert f.apply(x) is None
            else:
                assert rej.kind == "not_unimodularizable"
                assert rej.matrix is not None
                assert det([list(r) for r in rej.matrix]) not in (1, -1)
