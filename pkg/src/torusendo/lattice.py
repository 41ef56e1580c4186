"""Flat-torus geometry and exact 2x2 integer lattice arithmetic.

Torus points are represented as float arrays of shape ``(..., 2)`` with
coordinates in ``[0, 1)``. Everything involving the lattice ``Z^2`` is done
with Python integers so that coset bookkeeping never touches floating point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from math import gcd
from typing import NamedTuple

import numpy as np


def wrap(p):
    """Reduce real points to the fundamental domain ``[0, 1)^2``.

    Works on any array whose last axis has length 2. Non-finite input is
    rejected.
    """
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p)):
        raise ValueError("wrap: non-finite coordinates")
    out = p - np.floor(p)
    # x - floor(x) rounds up to exactly 1.0 for tiny negative x
    out[out >= 1.0] = 0.0
    return out


def torus_distance(p, q):
    """Flat distance on the torus between (arrays of) points."""
    diff = np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float))
    diff = diff - np.floor(diff)
    diff = np.minimum(diff, 1.0 - diff)
    return np.sqrt(np.sum(diff * diff, axis=-1))


def circle_offset(x, center):
    """Signed circular offset ``x - center`` reduced to ``[-1/2, 1/2)``."""
    return np.mod(np.asarray(x, dtype=float) - center + 0.5, 1.0) - 0.5


class LatticeVector(NamedTuple):
    a: int
    b: int

    def __add__(self, other):
        return LatticeVector(self.a + other[0], self.b + other[1])

    def __sub__(self, other):
        return LatticeVector(self.a - other[0], self.b - other[1])

    def __neg__(self):
        return LatticeVector(-self.a, -self.b)

    def __radd__(self, other):
        return self.__add__(other)


ZERO = LatticeVector(0, 0)


@dataclass(frozen=True)
class IntMatrix2:
    """A 2x2 integer matrix ``[[e11, e12], [e21, e22]]``."""

    e11: int
    e12: int
    e21: int
    e22: int

    def __post_init__(self):
        for name in ("e11", "e12", "e21", "e22"):
            value = getattr(self, name)
            if isinstance(value, (bool, float)) or int(value) != value:
                raise TypeError(f"IntMatrix2.{name} must be an integer, got {value!r}")
            object.__setattr__(self, name, int(value))

    @classmethod
    def from_rows(cls, rows) -> "IntMatrix2":
        (a, b), (c, d) = rows
        return cls(a, b, c, d)

    @classmethod
    def identity(cls) -> "IntMatrix2":
        return cls(1, 0, 0, 1)

    @classmethod
    def diag(cls, a: int, b: int) -> "IntMatrix2":
        return cls(a, 0, 0, b)

    @property
    def det(self) -> int:
        return self.e11 * self.e22 - self.e12 * self.e21

    @property
    def degree(self) -> int:
        return abs(self.det)

    @property
    def rows(self):
        return ((self.e11, self.e12), (self.e21, self.e22))

    def adjugate(self) -> "IntMatrix2":
        return IntMatrix2(self.e22, -self.e12, -self.e21, self.e11)

    def inverse_unimodular(self) -> "IntMatrix2":
        """Exact integer inverse; only defined when ``|det| = 1``."""
        det = self.det
        if abs(det) != 1:
            raise ValueError(f"matrix with det {det} has no integer inverse")
        adj = self.adjugate()
        return IntMatrix2(det * adj.e11, det * adj.e12, det * adj.e21, det * adj.e22)

    def gcd_entries(self) -> int:
        return gcd(gcd(self.e11, self.e12), gcd(self.e21, self.e22))

    def __matmul__(self, other):
        if isinstance(other, IntMatrix2):
            return IntMatrix2(
                self.e11 * other.e11 + self.e12 * other.e21,
                self.e11 * other.e12 + self.e12 * other.e22,
                self.e21 * other.e11 + self.e22 * other.e21,
                self.e21 * other.e12 + self.e22 * other.e22,
            )
        a, b = other
        return LatticeVector(self.e11 * a + self.e12 * b, self.e21 * a + self.e22 * b)

    def __mul__(self, scalar: int) -> "IntMatrix2":
        return IntMatrix2(self.e11 * scalar, self.e12 * scalar, self.e21 * scalar, self.e22 * scalar)

    __rmul__ = __mul__

    def to_array(self) -> np.ndarray:
        return np.array(self.rows, dtype=float)

    def tolist(self):
        return [list(self.rows[0]), list(self.rows[1])]


def in_image(A: IntMatrix2, u) -> bool:
    """Whether ``u`` lies in ``A(Z^2)``, decided in exact integer arithmetic."""
    det = A.det
    if det == 0:
        raise ValueError("singular matrix")
    s = A.adjugate() @ u
    return s.a % det == 0 and s.b % det == 0


def solve_exact(A: IntMatrix2, u) -> LatticeVector:
    """The unique ``z`` in ``Z^2`` with ``A z = u``; raises if none exists."""
    det = A.det
    if det == 0:
        raise ValueError("singular matrix")
    s = A.adjugate() @ u
    if s.a % det or s.b % det:
        raise ValueError(f"{tuple(u)} is not in the image of {A.tolist()}")
    return LatticeVector(s.a // det, s.b // det)


@dataclass(frozen=True)
class CosetSystem:
    """Representatives ``w_1..w_d`` of ``Z^2 / A(Z^2)`` with ``w_1 = 0``.

    Branch labels are 1-based throughout the package, matching the symbol
    alphabet ``{1, ..., d}``.
    """

    matrix: IntMatrix2
    reps: tuple
    _lookup: dict = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        lookup = {tuple(self.reduce(w)): i + 1 for i, w in enumerate(self.reps)}
        if len(lookup) != len(self.reps):
            raise ValueError("coset representatives are not pairwise inequivalent")
        object.__setattr__(self, "_lookup", lookup)

    @property
    def d(self) -> int:
        return len(self.reps)

    def reduce(self, u) -> LatticeVector:
        """Canonical element of the class of ``u``: the point of the
        half-open parallelepiped ``A[0,1)^2`` congruent to it."""
        A = self.matrix
        det = A.det
        s = A.adjugate() @ u
        q = LatticeVector(s.a // det, s.b // det)
        return LatticeVector(u[0], u[1]) - (A @ q)

    def label_of(self, u) -> int:
        """1-based label ``i`` with ``u - w_i`` in ``A(Z^2)``."""
        return self._lookup[tuple(self.reduce(u))]

    def rep(self, label: int) -> LatticeVector:
        if not 1 <= label <= self.d:
            raise ValueError(f"branch label {label} outside 1..{self.d}")
        return self.reps[label - 1]

    @cached_property
    def reps_array(self) -> np.ndarray:
        return np.array(self.reps, dtype=float).reshape(-1, 2)


def _parallelepiped_points(A: IntMatrix2):
    det = A.det
    adj = A.adjugate()
    cols = [(0, 0), (A.e11, A.e21), (A.e12, A.e22), (A.e11 + A.e12, A.e21 + A.e22)]
    xs = [c[0] for c in cols]
    ys = [c[1] for c in cols]
    sign = 1 if det > 0 else -1
    pts = []
    for a in range(min(xs), max(xs) + 1):
        for b in range(min(ys), max(ys) + 1):
            s = adj @ (a, b)
            # 0 <= s/det < 1 in exact arithmetic
            if 0 <= sign * s.a < abs(det) and 0 <= sign * s.b < abs(det):
                pts.append(LatticeVector(a, b))
    return pts


def coset_representatives(A: IntMatrix2) -> CosetSystem:
    """Canonical coset system of ``Z^2 / A(Z^2)``.

    Representatives are the integer points of the half-open fundamental
    parallelepiped ``A[0,1)^2``, ``(0, 0)`` first and the rest in
    lexicographic order.
    """
    if A.det == 0:
        raise ValueError("coset_representatives: singular matrix")
    pts = sorted(_parallelepiped_points(A))
    pts.remove(ZERO)
    reps = (ZERO, *pts)
    if len(reps) != A.degree:
        raise AssertionError(f"found {len(reps)} representatives, expected {A.degree}")
    return CosetSystem(A, reps)


class SmithForm(NamedTuple):
    """``E = U @ A @ V`` with ``A = diag(tau1, tau2)`` and ``tau2 | tau1``."""

    U: IntMatrix2
    A: IntMatrix2
    V: IntMatrix2

    @property
    def tau1(self) -> int:
        return self.A.e11

    @property
    def tau2(self) -> int:
        return self.A.e22


def _reduce_to_diagonal(E: IntMatrix2):
    """Row/column gcd elimination. Returns ``P, D, Q`` with ``P E Q = D``."""
    m = [list(E.rows[0]), list(E.rows[1])]
    P = [[1, 0], [0, 1]]
    Q = [[1, 0], [0, 1]]

    def swap_rows(M):
        M[0], M[1] = M[1], M[0]

    def swap_cols(M):
        for row in M:
            row[0], row[1] = row[1], row[0]

    def add_row(M, src, dst, k):
        M[dst] = [M[dst][j] + k * M[src][j] for j in range(2)]

    def add_col(M, src, dst, k):
        for row in M:
            row[dst] += k * row[src]

    while True:
        # pivot: nonzero entry of least absolute value moved to (0, 0)
        entries = [(abs(m[i][j]), i, j) for i in range(2) for j in range(2) if m[i][j] != 0]
        _, i, j = min(entries)
        if i == 1:
            swap_rows(m)
            swap_rows(P)
        if j == 1:
            swap_cols(m)
            swap_cols(Q)
        piv = m[0][0]
        changed = False
        if m[1][0] != 0:
            k = -(m[1][0] // piv)
            add_row(m, 0, 1, k)
            add_row(P, 0, 1, k)
            changed = changed or m[1][0] != 0
        if m[0][1] != 0:
            k = -(m[0][1] // piv)
            add_col(m, 0, 1, k)
            add_col(Q, 0, 1, k)
            changed = changed or m[0][1] != 0
        if changed:
            continue
        if m[1][1] % piv != 0:
            # restore divisibility: fold row 1 into row 0 and repeat
            add_row(m, 1, 0, 1)
            add_row(P, 1, 0, 1)
            continue
        break
    return P, m, Q


def _as_matrix(rows) -> IntMatrix2:
    return IntMatrix2.from_rows(rows)


def smith_normal_form(E: IntMatrix2) -> SmithForm:
    """Smith normal form ``E = U A V`` of a nonsingular 2x2 integer matrix.

    ``A = diag(tau1, tau2)`` with ``tau2 = gcd`` of the entries of ``E`` and
    ``tau1 * tau2 = |det E|``. ``U`` and ``V`` are unimodular. When
    ``det E > 0`` both have determinant +1; when ``det E < 0`` one sign must
    be negative and ``V`` carries it.
    """
    if E.det == 0:
        raise ValueError("smith_normal_form: singular matrix")
    P, D, Q = _reduce_to_diagonal(E)
    P, Q = _as_matrix(P), _as_matrix(Q)
    g, h = D[0][0], D[1][1]
    # make the diagonal positive by flipping rows of P
    if g < 0:
        P = IntMatrix2(-P.e11, -P.e12, P.e21, P.e22)
        g = -g
    if h < 0:
        P = IntMatrix2(P.e11, P.e12, -P.e21, -P.e22)
        h = -h
    S = IntMatrix2(0, 1, 1, 0)
    U = P.inverse_unimodular() @ S
    V = S @ Q.inverse_unimodular()
    J = IntMatrix2(-1, 0, 0, 1)
    if U.det == -1:
        # J commutes with the diagonal factor, so U J . A . J V is still E
        U, V = U @ J, J @ V
    A = IntMatrix2.diag(h, g)
    assert U @ A @ V == E
    return SmithForm(U, A, V)
