"""Exact linear algebra helpers over the integers and rationals.

Everything here is elementary and small-scale: Bareiss determinants,
adjugate inverses for unimodular matrices, Gaussian elimination over
Fraction, and a Smith normal form with transform matrices (used for
saturating lattices and completing primitive families to a basis).
"""

from __future__ import annotations

from fractions import Fraction
from math import gcd

Matrix = list[list[int]]


def identity(n: int) -> Matrix:
    return [[1 if i == j else 0 for j in range(n)] for i in range(n)]


def transpose(m):
    return [list(row) for row in zip(*m)]


def mat_mul(a, b):
    rows, inner, cols = len(a), len(b), len(b[0])
    return [
        [sum(a[i][k] * b[k][j] for k in range(inner)) for j in range(cols)]
        for i in range(rows)
    ]


def mat_vec(a, v):
    return [sum(a[i][k] * v[k] for k in range(len(v))) for i in range(len(a))]


def det(m: Matrix) -> int:
    """Fraction-free (Bareiss) determinant of an integer matrix."""
    n = len(m)
    if n == 0:
        return 1
    a = [list(row) for row in m]
    sign = 1
    prev = 1
    for k in range(n - 1):
        if a[k][k] == 0:
            for i in range(k + 1, n):
                if a[i][k] != 0:
                    a[k], a[i] = a[i], a[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) // prev
        prev = a[k][k]
    return sign * a[n - 1][n - 1]


def unimodular_inverse(m: Matrix) -> Matrix:
    """Inverse of an integer matrix with determinant +-1."""
    d = det(m)
    if d not in (1, -1):
        raise ValueError(f"matrix is not unimodular (det={d})")
    n = len(m)
    inv = frac_matrix_inverse([[Fraction(x) for x in row] for row in m])
    assert inv is not None
    out = []
    for row in inv:
        irow = []
        for x in row:
            assert x.denominator == 1
            irow.append(int(x))
        out.append(irow)
    return out


def frac_matrix_inverse(m: list[list[Fraction]]) -> list[list[Fraction]] | None:
    n = len(m)
    a = [[Fraction(m[i][j]) for j in range(n)] + [Fraction(int(i == j)) for j in range(n)] for i in range(n)]
    for col in range(n):
        piv = next((r for r in range(col, n) if a[r][col] != 0), None)
        if piv is None:
            return None
        a[col], a[piv] = a[piv], a[col]
        scale = a[col][col]
        a[col] = [x / scale for x in a[col]]
        for r in range(n):
            if r != col and a[r][col] != 0:
                f = a[r][col]
                a[r] = [x - f * y for x, y in zip(a[r], a[col])]
    return [row[n:] for row in a]


def frac_solve(m: list[list[Fraction]], b: list[Fraction]) -> list[Fraction] | None:
    """One solution of a (consistent) linear system, or None."""
    rows = len(m)
    cols = len(m[0]) if rows else 0
    a = [[Fraction(m[i][j]) for j in range(cols)] + [Fraction(b[i])] for i in range(rows)]
    pivots: list[int] = []
    r = 0
    for c in range(cols):
        piv = next((i for i in range(r, rows) if a[i][c] != 0), None)
        if piv is None:
            continue
        a[r], a[piv] = a[piv], a[r]
        scale = a[r][c]
        a[r] = [x / scale for x in a[r]]
        for i in range(rows):
            if i != r and a[i][c] != 0:
                f = a[i][c]
                a[i] = [x - f * y for x, y in zip(a[i], a[r])]
        pivots.append(c)
        r += 1
        if r == rows:
            break
    for i in range(r, rows):
        if a[i][cols] != 0:
            return None
    x = [Fraction(0)] * cols
    for i, c in enumerate(pivots):
        x[c] = a[i][cols]
    return x


def _apply_row_op(mat, op):
    kind = op[0]
    if kind == "swap":
        _, i, j = op
        mat[i], mat[j] = mat[j], mat[i]
    elif kind == "add":  # row i += f * row j
        _, i, j, f = op
        mat[i] = [x + f * y for x, y in zip(mat[i], mat[j])]
    elif kind == "neg":
        _, i = op
        mat[i] = [-x for x in mat[i]]


def smith_normal_form(a: Matrix) -> tuple[Matrix, Matrix, Matrix]:
    """Return (U, S, V) with A = U @ S @ V, U and V unimodular, S diagonal
    with the divisibility chain s1 | s2 | ... (nonnegative)."""
    rows = len(a)
    cols = len(a[0]) if rows else 0
    s = [list(row) for row in a]
    u = identity(rows)   # invariant: a == u @ s @ v
    v = identity(cols)

    def row_op(op):
        _apply_row_op(s, op)
        # compensate: u <- u * inverse(op)
        kind = op[0]
        if kind == "swap":
            _, i, j = op
            for r in range(rows):
                u[r][i], u[r][j] = u[r][j], u[r][i]
        elif kind == "add":
            _, i, j, f = op
            for r in range(rows):
                u[r][j] -= f * u[r][i]
        elif kind == "neg":
            _, i = op
            for r in range(rows):
                u[r][i] = -u[r][i]

    def col_op(op):
        st = transpose(s)
        _apply_row_op(st, op)
        s[:] = transpose(st)
        kind = op[0]
        if kind == "swap":
            _, i, j = op
            v[i], v[j] = v[j], v[i]
        elif kind == "add":  # col i += f * col j  =>  v row j -= f * v row i
            _, i, j, f = op
            v[j] = [x - f * y for x, y in zip(v[j], v[i])]
        elif kind == "neg":
            _, i = op
            v[i] = [-x for x in v[i]]

    k = 0
    while k < min(rows, cols):
        # find a pivot
        piv = None
        best = None
        for i in range(k, rows):
            for j in range(k, cols):
                if s[i][j] != 0 and (best is None or abs(s[i][j]) < best):
                    best = abs(s[i][j])
                    piv = (i, j)
        if piv is None:
            break
        i, j = piv
        if i != k:
            row_op(("swap", i, k))
        if j != k:
            col_op(("swap", j, k))
        # clear row and column k by Euclidean steps
        dirty = True
        while dirty:
            dirty = False
            for i in range(k + 1, rows):
                if s[i][k] != 0:
                    q = s[i][k] // s[k][k]
                    row_op(("add", i, k, -q))
                    if s[i][k] != 0:
                        row_op(("swap", i, k))
                    dirty = True
            for j in range(k + 1, cols):
                if s[k][j] != 0:
                    q = s[k][j] // s[k][k]
                    col_op(("add", j, k, -q))
                    if s[k][j] != 0:
                        col_op(("swap", j, k))
                    dirty = True
        if s[k][k] < 0:
            row_op(("neg", k))
        # enforce divisibility: s[k][k] must divide the rest
        fixed = True
        for i in range(k + 1, rows):
            for j in range(k + 1, cols):
                if s[i][j] % s[k][k] != 0:
                    row_op(("add", k, i, 1))
                    fixed = False
                    break
            if not fixed:
                break
        if fixed:
            k += 1
    return u, s, v


def saturated_row_basis(rows_in: list[list[int]], n: int) -> list[list[int]]:
    """Basis of the saturation (Z^n intersect Q-span of the given rows)."""
    rows = [r for r in rows_in if any(x != 0 for x in r)]
    if not rows:
        return []
    _, s, v = smith_normal_form(rows)
    rank = sum(1 for k in range(min(len(rows), n)) if s[k][k] != 0)
    return [list(v[i]) for i in range(rank)]


def unimodular_completion(p: Matrix) -> Matrix | None:
    """Given an n x d matrix whose columns span a primitive rank-d sublattice,
    return an n x (n-d) integer matrix R with [p | R] unimodular.
    Returns None when the column lattice is not primitive."""
    n = len(p)
    d = len(p[0]) if n else 0
    if d == 0:
        return identity(n)
    u, s, _ = smith_normal_form(p)
    for k in range(d):
        if s[k][k] != 1:
            return None
    r = [[u[i][j] for j in range(d, n)] for i in range(n)]
    full = [list(p[i]) + list(r[i]) for i in range(n)]
    if det(full) not in (1, -1):  # pragma: no cover - sanity guard
        raise AssertionError("unimodular completion failed")
    return r


def gcd_list(xs) -> int:
    g = 0
    for x in xs:
        g = gcd(g, abs(x))
    return g


def lcm_list(xs) -> int:
    out = 1
    for x in xs:
        x = abs(x)
        if x:
            out = out * x // gcd(out, x)
    return out
