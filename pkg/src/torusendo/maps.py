"""Evaluatable self-covers of the 2-torus.

Every map is described by a lift ``F: R^2 -> R^2`` with
``F(p + v) = F(p) + L v`` for the integer linear part ``L``. The lift is a
diffeomorphism of the plane, and its global inverse ``lift_inverse`` is what
the preimage machinery uses: the preimages of ``x`` are
``F^{-1}(x~ + w_i)`` for the coset representatives ``w_i`` of
``Z^2 / L(Z^2)``.

All evaluation methods are vectorised over leading axes: points have shape
``(..., 2)``, Jacobians ``(..., 2, 2)`` and second derivatives
``(..., 2, 2, 2)`` indexed as ``H[i, j, k] = d^2 F_i / dp_j dp_k``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .lattice import IntMatrix2, coset_representatives, wrap

MAX_FACTORS = 8
TWO_PI = 2.0 * np.pi


class TorusMap:
    """Base class. Subclasses implement the lift and its derivatives."""

    kind = "abstract"

    def __init__(self, linear_part: IntMatrix2):
        if linear_part.det == 0:
            raise ValueError("linear part must be nonsingular")
        self.linear_part = linear_part

    # -- interface --------------------------------------------------------
    def lift(self, p):
        raise NotImplementedError

    def lift_inverse(self, q):
        raise NotImplementedError

    def jacobian(self, p):
        raise NotImplementedError

    def hessian(self, p):
        raise NotImplementedError

    def det_jacobian(self, p):
        J = self.jacobian(p)
        return J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]

    def describe(self) -> str:
        raise NotImplementedError

    # -- derived ----------------------------------------------------------
    @property
    def factors(self):
        return (self,)

    @property
    def degree(self) -> int:
        return self.linear_part.degree

    @cached_property
    def cosets(self):
        return coset_representatives(self.linear_part)

    def __call__(self, p):
        return wrap(self.lift(p))

    def __repr__(self):
        return f"<{type(self).__name__} {self.describe()}>"


class LinearMap(TorusMap):
    kind = "linear"

    def __init__(self, A: IntMatrix2):
        if A.det == 0:
            raise ValueError("make_linear: singular matrix")
        super().__init__(A)
        self._M = A.to_array()
        self._Minv = np.linalg.inv(self._M)

    def lift(self, p):
        return np.asarray(p, dtype=float) @ self._M.T

    def lift_inverse(self, q):
        return np.asarray(q, dtype=float) @ self._Minv.T

    def jacobian(self, p):
        p = np.asarray(p, dtype=float)
        return np.broadcast_to(self._M, p.shape[:-1] + (2, 2)).copy()

    def hessian(self, p):
        p = np.asarray(p, dtype=float)
        return np.zeros(p.shape[:-1] + (2, 2, 2))

    def det_jacobian(self, p):
        p = np.asarray(p, dtype=float)
        return np.full(p.shape[:-1], float(self.linear_part.det))

    def describe(self):
        A = self.linear_part
        return f"linear[{A.e11},{A.e12};{A.e21},{A.e22}]"


class ShearMap(TorusMap):
    """``(x, y) -> (x + s sin(2 pi y), y)`` or its vertical counterpart."""

    kind = "shear"

    def __init__(self, s: float, axis: str = "horizontal"):
        if not np.isfinite(s):
            raise ValueError("make_shear: non-finite amplitude")
        if axis not in ("horizontal", "vertical"):
            raise ValueError(f"make_shear: unknown axis {axis!r}")
        super().__init__(IntMatrix2.identity())
        self.s = float(s)
        self.axis = axis
        # index of the moved coordinate and of the one driving it
        self._i, self._j = (0, 1) if axis == "horizontal" else (1, 0)

    def _bump(self, p):
        return self.s * np.sin(TWO_PI * p[..., self._j])

    def lift(self, p):
        p = np.asarray(p, dtype=float)
        out = p.copy()
        out[..., self._i] += self._bump(p)
        return out

    def lift_inverse(self, q):
        # the driving coordinate is untouched, so the inverse is explicit
        q = np.asarray(q, dtype=float)
        out = q.copy()
        out[..., self._i] -= self._bump(q)
        return out

    def jacobian(self, p):
        p = np.asarray(p, dtype=float)
        J = np.zeros(p.shape[:-1] + (2, 2))
        J[..., 0, 0] = 1.0
        J[..., 1, 1] = 1.0
        J[..., self._i, self._j] = TWO_PI * self.s * np.cos(TWO_PI * p[..., self._j])
        return J

    def hessian(self, p):
        p = np.asarray(p, dtype=float)
        H = np.zeros(p.shape[:-1] + (2, 2, 2))
        H[..., self._i, self._j, self._j] = -(TWO_PI**2) * self.s * np.sin(TWO_PI * p[..., self._j])
        return H

    def det_jacobian(self, p):
        p = np.asarray(p, dtype=float)
        return np.ones(p.shape[:-1])

    def describe(self):
        return f"shear[{self.s!r},{self.axis}]"


def _chain_jets(factors, p):
    """Value, Jacobian and second derivative of ``factors[0] o ... o factors[-1]``."""
    x = np.asarray(p, dtype=float)
    J = None
    H = None
    for g in reversed(factors):
        Jg = g.jacobian(x)
        Hg = g.hessian(x)
        if J is None:
            J, H = Jg, Hg
        else:
            H = np.einsum("...iab,...aj,...bk->...ijk", Hg, J, J) + np.einsum("...ia,...ajk->...ijk", Jg, H)
            J = Jg @ J
        x = g.lift(x)
    return x, J, H


class CompositeMap(TorusMap):
    """``factors[0] o factors[1] o ... o factors[-1]`` (last applied first)."""

    kind = "composite"

    def __init__(self, factors):
        flat = []
        for f in factors:
            flat.extend(f.factors)
        if not flat:
            raise ValueError("compose: no factors")
        if len(flat) > MAX_FACTORS:
            raise ValueError(f"compose: {len(flat)} factors exceeds the limit of {MAX_FACTORS}")
        L = flat[0].linear_part
        for f in flat[1:]:
            L = L @ f.linear_part
        super().__init__(L)
        self._factors = tuple(flat)

    @property
    def factors(self):
        return self._factors

    def lift(self, p):
        x = np.asarray(p, dtype=float)
        for g in reversed(self._factors):
            x = g.lift(x)
        return x

    def lift_inverse(self, q):
        x = np.asarray(q, dtype=float)
        for g in self._factors:
            x = g.lift_inverse(x)
        return x

    def jacobian(self, p):
        x = np.asarray(p, dtype=float)
        J = None
        for g in reversed(self._factors):
            Jg = g.jacobian(x)
            J = Jg if J is None else Jg @ J
            x = g.lift(x)
        return J

    def hessian(self, p):
        return _chain_jets(self._factors, p)[2]

    def det_jacobian(self, p):
        x = np.asarray(p, dtype=float)
        det = np.ones(x.shape[:-1])
        for g in reversed(self._factors):
            det = det * g.det_jacobian(x)
            x = g.lift(x)
        return det

    def describe(self):
        return " * ".join(f.describe() for f in self._factors)


@dataclass(frozen=True)
class Jet2:
    """Second-order jet of a map at a point."""

    value: np.ndarray
    D: np.ndarray
    D2: np.ndarray


def make_linear(A) -> LinearMap:
    if not isinstance(A, IntMatrix2):
        A = IntMatrix2.from_rows(A)
    return LinearMap(A)


def make_shear(s: float, axis: str = "horizontal") -> ShearMap:
    return ShearMap(s, axis)


def compose(f: TorusMap, g: TorusMap) -> CompositeMap:
    """The map ``f o g``."""
    return CompositeMap([f, g])


def jet2(f: TorusMap, p) -> Jet2:
    p = np.asarray(p, dtype=float)
    value, D, D2 = _chain_jets(f.factors, p)
    return Jet2(wrap(value), D, D2)


def min_abs_det(f: TorusMap, m: int = 100) -> float:
    """Smallest ``|det Df|`` over an ``m x m`` grid (local-diffeo probe)."""
    g = (np.arange(m) + 0.5) / m
    pts = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    return float(np.min(np.abs(f.det_jacobian(pts))))


def sup_norm_derivative(f: TorusMap, m: int = 128) -> float:
    """Grid estimate of ``sup_x ||Df_x||`` (operator 2-norm)."""
    g = (np.arange(m) + 0.5) / m
    pts = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    return float(np.max(np.linalg.norm(f.jacobian(pts), ord=2, axis=(-2, -1))))


# -- textual map descriptions --------------------------------------------

_FACTOR = re.compile(r"^\s*(\w+)\s*\[(.*)\]\s*$")


def _parse_matrix(text: str) -> IntMatrix2:
    rows = [r.split(",") for r in text.split(";")]
    if len(rows) != 2 or any(len(r) != 2 for r in rows):
        raise ValueError(f"bad 2x2 matrix {text!r}")
    return IntMatrix2.from_rows([[int(v) for v in r] for r in rows])


def _parse_factor(text: str) -> TorusMap:
    m = _FACTOR.match(text)
    if not m:
        raise ValueError(f"cannot parse map factor {text!r}")
    name, body = m.group(1), m.group(2)
    if name == "linear":
        return make_linear(_parse_matrix(body))
    if name == "shear":
        parts = [s.strip() for s in body.split(",")]
        if len(parts) != 2:
            raise ValueError(f"shear needs amplitude and axis, got {body!r}")
        return make_shear(float(parts[0]), parts[1])
    if name == "perturbed":
        from .perturbation import parse_perturbed

        return parse_perturbed(body)
    raise ValueError(f"unknown map kind {name!r}")


def parse_map(text: str) -> TorusMap:
    """Inverse of ``TorusMap.describe``: ``"shear[0.3,horizontal] * linear[3,1;1,1]"``."""
    parts = [p for p in text.split("*")]
    maps = [_parse_factor(p) for p in parts]
    if len(maps) == 1:
        return maps[0]
    return CompositeMap(maps)
