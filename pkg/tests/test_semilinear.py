"""Cell decomposition and Euler characteristics over the rational value group."""

import random
from fractions import Fraction

import pytest

from valzeta import formula as fm
from valzeta.semilinear import (
    Aff,
    Band,
    GammaBarClass,
    QCell,
    QPiecewiseMap,
    Section,
    SemilinearSet,
    aff,
    cell_class,
    check_mG_morphism,
    convolve,
    euler,
    fiber,
    gamma_jacobian,
    product,
    qdim,
    support,
)

Q = Fraction


def cmp(coeffs, const=0, op=">="):
    return fm.Cmp(fm.term(coeffs, const), op)


def open_interval():
    # 0 < x < 1
    return SemilinearSet.decompose(fm.conj(cmp([1], 0, ">"), cmp([-1], 1, ">")), 1)


def ray():
    return SemilinearSet.decompose(cmp([1], 0, ">"), 1)


def half_line_closed():
    return SemilinearSet.decompose(cmp([1], 0, ">="), 1)


# ---------------------------------------------------------------------------
# decomposition shapes


def test_decompose_open_interval_single_band():
    s = open_interval()
    assert len(s.cells) == 1
    c = s.cells[0]
    assert c.dimension == 1
    assert c.is_bounded()
    assert s.contains([Q(1, 2)]) and not s.contains([0]) and not s.contains([1])


def test_decompose_half_line_section_plus_band():
    s = half_line_closed()
    assert len(s.cells) == 2
    dims = sorted(c.dimension for c in s.cells)
    assert dims == [0, 1]
    band = next(c for c in s.cells if c.dimension == 1)
    assert not band.is_bounded()


def test_triangle_closure_seven_cells():
    f = fm.conj(cmp([1, 0], 0), cmp([0, 1], 0), cmp([-1, -1], 1))
    s = SemilinearSet.decompose(f, 2)
    by_dim = {}
    for c in s.cells:
        by_dim[c.dimension] = by_dim.get(c.dimension, 0) + 1
    assert by_dim == {0: 3, 1: 3, 2: 1}
    assert len(s.cells) == 7


def test_open_triangle_single_cell():
    f = fm.conj(cmp([1, 0], 0, ">"), cmp([0, 1], 0, ">"), cmp([-1, -1], 1, ">"))
    s = SemilinearSet.decompose(f, 2)
    assert len(s.cells) == 1
    assert s.cells[0].dimension == 2


def test_decompose_exists():
    # {x : exists y. y > 0 and x = 2y} is the open positive ray
    body = fm.conj(cmp([0, 1], 0, ">"), cmp([1, -2], 0, "=="))
    s = SemilinearSet.decompose(fm.Exists(body), 1)
    assert s.equivalent(ray())


def test_congruence_atom_rejected():
    with pytest.raises(ValueError):
        SemilinearSet.decompose(fm.Cong(fm.term([1], 0), 0, 2), 1)


def test_cells_are_disjoint_and_cover():
    rng = random.Random(7)
    f = fm.disj(
        fm.conj(cmp([1, 1], -1, ">"), cmp([-1, 2], 3)),
        fm.Not(cmp([2, -1], 0, ">")),
    )
    s = SemilinearSet.decompose(f, 2)
    for _ in range(200):
        p = [Q(rng.randint(-40, 40), rng.randint(1, 7)) for _ in range(2)]
        hits = sum(1 for c in s.cells if c.contains(p))
        assert hits == (1 if fm.evaluate(f, p) else 0)


def test_validate_band_ordering():
    s = SemilinearSet.decompose(
        fm.conj(cmp([1, 0], 0, ">"), cmp([-1, 1], 0, ">"), cmp([0, -1], 2, ">")), 2
    )
    assert all(c.validate() for c in s.cells)
    # x between x and x-1 over the whole line: empty band, malformed
    bad = QCell(2, (Band(None, None), Band(aff([1]), aff([1], -1))))
    assert not bad.validate()


# ---------------------------------------------------------------------------
# Euler characteristics


def test_euler_open_ray():
    chi_g, chi_b, cls = euler(ray())
    assert (chi_g, chi_b) == (-1, 0)
    assert cls == GammaBarClass.X


def test_euler_point():
    s = SemilinearSet.decompose(cmp([1], -5, "=="), 1)
    assert euler(s) == (1, 1, GammaBarClass.ONE)


def test_euler_quadrant_is_minus_x():
    quad = product(ray(), ray())
    chi_g, chi_b, cls = euler(quad)
    assert (chi_g, chi_b) == (1, 0)
    assert cls == -GammaBarClass.X
    assert GammaBarClass.X * GammaBarClass.X == -GammaBarClass.X


def test_euler_full_line():
    line = SemilinearSet.decompose(fm.TRUE, 1)
    assert len(line.cells) == 1
    assert euler(line) == (-1, 1, GammaBarClass(1, 2))
    # slicing the line at a point must not change either characteristic
    refined = line.refine([aff([1])])
    assert len(refined.cells) == 3
    assert euler(refined) == euler(line)


def test_characters_of_ring():
    # X -> 0 and X -> -1 are ring maps on Z[X]/(X^2+X)
    rng = random.Random(3)
    for _ in range(50):
        x = GammaBarClass(rng.randint(-5, 5), rng.randint(-5, 5))
        y = GammaBarClass(rng.randint(-5, 5), rng.randint(-5, 5))
        assert (x * y).chi_b == x.chi_b * y.chi_b
        assert (x * y).chi_g == x.chi_g * y.chi_g
        assert (x + y).chi_g == x.chi_g + y.chi_g


def random_gamma_formula(rng, arity, natoms):
    atoms = []
    for _ in range(natoms):
        coeffs = [rng.randint(-2, 2) for _ in range(arity)]
        if all(c == 0 for c in coeffs):
            coeffs[rng.randrange(arity)] = 1
        op = rng.choice([">=", ">", ">=", ">", "=="])
        atoms.append(cmp(coeffs, rng.randint(-3, 3), op))
    if len(atoms) == 1:
        return atoms[0]
    mode = rng.randrange(3)
    if mode == 0:
        return fm.And(tuple(atoms))
    if mode == 1:
        return fm.Or(tuple(atoms))
    return fm.conj(atoms[0], fm.Not(fm.Or(tuple(atoms[1:]))))


def chi_b_by_clipping(s):
    """Independent bounded characteristic: clip to a huge closed box."""
    n = s.arity
    box = []
    for i in range(n):
        e = [0] * n
        e[i] = 1
        box.append(cmp(e, 1000))
        box.append(cmp([-c for c in e], 1000))
    clipped = SemilinearSet.decompose(fm.conj(s.formula(), *box), n)
    return euler(clipped)[0]


def test_chi_b_matches_box_clipping():
    rng = random.Random(11)
    for _ in range(25):
        arity = rng.choice([1, 1, 2])
        f = random_gamma_formula(rng, arity, rng.randint(1, 3))
        s = SemilinearSet.decompose(f, arity)
        assert euler(s)[1] == chi_b_by_clipping(s)


def test_euler_additive_on_disjoint_pieces():
    rng = random.Random(23)
    for _ in range(15):
        arity = rng.choice([1, 2])
        f1 = random_gamma_formula(rng, arity, 2)
        f2 = random_gamma_formula(rng, arity, 2)
        a = SemilinearSet.decompose(f1, arity)
        b = SemilinearSet.decompose(fm.conj(f2, fm.Not(f1)), arity)
        u = a.union(b)
        assert euler(u)[2] == euler(a)[2] + euler(b)[2]


def test_euler_multiplicative_on_products():
    rng = random.Random(29)
    for _ in range(12):
        arity2 = rng.choice([1, 2])
        a = SemilinearSet.decompose(random_gamma_formula(rng, 1, 2), 1)
        b = SemilinearSet.decompose(random_gamma_formula(rng, arity2, 2), arity2)
        assert euler(product(a, b))[2] == euler(a)[2] * euler(b)[2]


def test_refinement_invariance():
    rng = random.Random(41)
    for _ in range(10):
        arity = rng.choice([1, 2, 2, 3])
        f = random_gamma_formula(rng, arity, rng.randint(1, 3))
        s = SemilinearSet.decompose(f, arity)
        base = euler(s)
        for _ in range(3):
            walls = []
            for _ in range(rng.randint(1, 2)):
                coeffs = [rng.randint(-2, 2) for _ in range(arity)]
                if all(c == 0 for c in coeffs):
                    coeffs[0] = 1
                walls.append(aff(coeffs, Q(rng.randint(-4, 4), rng.choice([1, 2]))))
            refined = s.refine(walls)
            assert s.equivalent(refined)
            assert euler(refined)[:2] == base[:2]


def test_qdim():
    assert qdim(SemilinearSet.decompose(cmp([1], 0, "=="), 1)) == 0
    assert qdim(ray()) == 1
    seg_and_point = SemilinearSet.decompose(
        fm.disj(fm.conj(cmp([1], 0, ">"), cmp([-1], 1, ">")), cmp([1], -3, "==")), 1
    )
    assert qdim(seg_and_point) == 1
    assert qdim(SemilinearSet.empty(2)) is None


# ---------------------------------------------------------------------------
# Jacobians


def test_gamma_jacobian_values():
    assert gamma_jacobian((1, 2), (3, 0)) == 0
    assert gamma_jacobian((0,), (5,)) == 5
    assert gamma_jacobian((1, 1, 1), (0, 0, 0)) == -3
    assert gamma_jacobian((Q(1, 2),), (Q(1, 3),)) == Q(-1, 6)


def test_gamma_jacobian_rejects_infinite():
    with pytest.raises(ValueError):
        gamma_jacobian((float("inf"),), (0,))


# ---------------------------------------------------------------------------
# morphisms


def shift_map(domain, delta):
    return QPiecewiseMap.affine_on(domain, ((1,),), (delta,))


def test_morphism_identity_accepted():
    s = open_interval()
    obj = (s, QPiecewiseMap.identity_on(s), QPiecewiseMap.constant_on(s, 0))
    verdict = check_mG_morphism(QPiecewiseMap.identity_on(s), obj, obj)
    assert verdict.ok


def test_morphism_shift_breaks_weight():
    s = open_interval()
    t = SemilinearSet.decompose(fm.conj(cmp([1], -1, ">"), cmp([-1], 2, ">")), 1)
    F = shift_map(s, 1)
    src = (s, QPiecewiseMap.identity_on(s), QPiecewiseMap.constant_on(s, 0))
    dst = (t, QPiecewiseMap.identity_on(t), QPiecewiseMap.constant_on(t, 0))
    verdict = check_mG_morphism(F, src, dst)
    assert not verdict.ok
    assert "weight" in verdict.reason
    assert verdict.witness is not None and s.contains(verdict.witness)


def test_morphism_shift_with_compensating_weight():
    s = open_interval()
    t = SemilinearSet.decompose(fm.conj(cmp([1], -1, ">"), cmp([-1], 2, ">")), 1)
    F = shift_map(s, 1)
    src = (s, QPiecewiseMap.identity_on(s), QPiecewiseMap.constant_on(s, 1))
    dst = (t, QPiecewiseMap.identity_on(t), QPiecewiseMap.constant_on(t, 0))
    assert check_mG_morphism(F, src, dst).ok


def test_morphism_not_surjective():
    s = open_interval()
    t = SemilinearSet.decompose(fm.conj(cmp([1], 0, ">"), cmp([-1], 2, ">")), 1)
    src = (s, QPiecewiseMap.identity_on(s), QPiecewiseMap.constant_on(s, 0))
    dst = (t, QPiecewiseMap.identity_on(t), QPiecewiseMap.constant_on(t, 0))
    verdict = check_mG_morphism(QPiecewiseMap.identity_on(s), src, dst)
    assert not verdict.ok
    assert "surjective" in verdict.reason
    assert t.contains(verdict.witness) and not s.contains(verdict.witness)


def test_morphism_collapse_rejected():
    sq = product(open_interval(), open_interval())
    tgt = open_interval()
    # project the open square onto its first coordinate: kills a direction
    F = QPiecewiseMap.affine_on(sq, ((1, 0),), (0,))
    src = (sq, QPiecewiseMap.identity_on(sq), QPiecewiseMap.constant_on(sq, 0))
    dst = (tgt, QPiecewiseMap.identity_on(tgt), QPiecewiseMap.constant_on(tgt, 0))
    verdict = check_mG_morphism(F, src, dst)
    assert not verdict.ok
    assert "injective" in verdict.reason


def test_morphism_requires_total_map():
    s = half_line_closed()
    sub = ray()
    src = (s, QPiecewiseMap.identity_on(s), QPiecewiseMap.constant_on(s, 0))
    with pytest.raises(ValueError):
        check_mG_morphism(QPiecewiseMap.identity_on(sub), src, src)


# ---------------------------------------------------------------------------
# convolution


def diag_family():
    # {(gamma, x): x = gamma, 0 <= gamma <= 1}
    f = fm.conj(cmp([1, -1], 0, "=="), cmp([1, 0], 0), cmp([-1, 0], 1))
    return SemilinearSet.decompose(f, 2)


def test_convolve_segment_fiber():
    K = convolve(diag_family(), diag_family())
    assert K.arity == 4
    fib = fiber(K, 1)
    # the anti-diagonal {(alpha, 1-alpha, alpha) : 0 <= alpha <= 1}
    assert fib.contains([Q(1, 4), Q(3, 4), Q(1, 4)])
    assert fib.contains([0, 1, 0]) and fib.contains([1, 0, 1])
    assert not fib.contains([Q(1, 2), Q(3, 5), Q(1, 2)])
    assert qdim(fib) == 1
    assert euler(fib)[2] == GammaBarClass.ONE  # a closed segment


def test_convolve_with_unit_family():
    unit = SemilinearSet.decompose(cmp([1], 0, "=="), 1)
    J = diag_family()
    K = convolve(unit, J)
    for g in (Q(0), Q(1, 2), Q(1)):
        assert euler(fiber(K, g))[2] == euler(fiber(J, g))[2]
    # off the support both fibers are empty
    assert fiber(K, 2).is_empty() and fiber(J, 2).is_empty()


def test_convolve_supports_add():
    I = SemilinearSet.decompose(fm.disj(cmp([1], 0, "=="), cmp([1], -1, "==")), 1)
    J = SemilinearSet.decompose(fm.disj(cmp([1], 0, "=="), cmp([1], -2, "==")), 1)
    K = convolve(I, J)
    sup = support(K)
    for v in (0, 1, 2, 3):
        assert sup.contains([v])
    for v in (Q(1, 2), -1, 4):
        assert not sup.contains([v])
    assert euler(sup)[0] == 4


def test_convolve_commutative_on_fiber_classes():
    I = diag_family()
    J = SemilinearSet.decompose(
        fm.conj(cmp([1, 0], 0, ">"), cmp([-1, 0], 2, ">"), cmp([0, 1], 0, ">")), 2
    )
    IJ, JI = convolve(I, J), convolve(J, I)
    for g in (Q(1, 2), Q(1), Q(3, 2), Q(5, 2)):
        assert euler(fiber(IJ, g))[2] == euler(fiber(JI, g))[2]


def test_convolve_associative_on_fiber_classes():
    I = diag_family()
    unit = SemilinearSet.decompose(cmp([1], 0, "=="), 1)
    two = SemilinearSet.decompose(cmp([1], -2, "=="), 1)
    left = convolve(convolve(I, unit), two)
    right = convolve(I, convolve(unit, two))
    for g in (Q(2), Q(5, 2), Q(3)):
        assert euler(fiber(left, g))[2] == euler(fiber(right, g))[2]


def test_project_prefix():
    tri = SemilinearSet.decompose(
        fm.conj(cmp([1, 0], 0), cmp([0, 1], 0), cmp([-1, -1], 1)), 2
    )
    shadow = tri.project(1)
    want = SemilinearSet.decompose(fm.conj(cmp([1], 0), cmp([-1], 1)), 1)
    assert shadow.equivalent(want)
