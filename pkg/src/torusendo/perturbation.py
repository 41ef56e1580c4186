"""Conservative perturbations of linear covers with non-constant Jacobian.

A smooth bump is grafted onto ``R_k(x) = kx`` on an interval ``I_0`` and
compensated on the translate ``I_1 = I_0 + 1/k`` through the diffeomorphism
``T(x) = x + 1/k + (2/k) phi(x)``, which keeps ``sum 1/|S'|`` over every
fiber equal to one. The two-dimensional version conjugates
``(x, y) -> (S(x), tau2 y)`` by the Smith factors of an integer matrix.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import BranchInverseError, CoverageError, PreconditionError
from .lattice import IntMatrix2, circle_offset, smith_normal_form, wrap
from .maps import TorusMap

# max |d/dt exp(1 - 1/(1 - t^2))| on (-1, 1), times 2
BUMP_SLOPE_CONSTANT = 4.340714171412

BISECT_TOL = 1e-6
NEWTON_TOL = 1e-14
JUNCTION_TOL = 1e-9


def _profile_value(t):
    """``h(t)`` alone (the hot path of branch inversion)."""
    t = np.asarray(t, dtype=float)
    h = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    ti = t[inside]
    h[inside] = np.exp(1.0 - 1.0 / (1.0 - ti * ti))
    return h


def _profile(t):
    """``h(t) = exp(1 - 1/(1 - t^2))`` on ``|t| < 1`` and its two derivatives."""
    t = np.asarray(t, dtype=float)
    h = np.zeros_like(t)
    h1 = np.zeros_like(t)
    h2 = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    if np.any(inside):
        ti = t[inside]
        u = 1.0 - ti * ti
        hi = np.exp(1.0 - 1.0 / u)
        h[inside] = hi
        h1[inside] = -2.0 * ti * hi / u**2
        h2[inside] = -2.0 * hi / u**2 + 4.0 * ti * ti * hi / u**4 - 8.0 * ti * ti * hi / u**3
    return h, h1, h2


@dataclass(frozen=True)
class Bump:
    """``phi(x) = height * h(2 (x - p) / delta)`` on the circle.

    ``delta`` is the radius of the interval ``I_0 = [p - delta, p + delta]``;
    the bump itself vanishes for ``|x - p| >= delta / 2``.
    """

    p: float
    delta: float
    height: float

    @property
    def max_slope(self) -> float:
        return self.height * BUMP_SLOPE_CONSTANT / self.delta

    def _t(self, x):
        return 2.0 * circle_offset(x, self.p) / self.delta

    def value(self, x):
        return self.height * _profile_value(self._t(x))

    def derivative(self, x):
        return self.height * (2.0 / self.delta) * _profile(self._t(x))[1]

    def second_derivative(self, x):
        return self.height * (2.0 / self.delta) ** 2 * _profile(self._t(x))[2]

    def jets(self, x):
        """Value, first and second derivative from a single profile evaluation."""
        h, h1, h2 = _profile(self._t(x))
        c = 2.0 / self.delta
        return self.height * h, self.height * c * h1, self.height * c * c * h2

    def properties(self, m: int = 100_001) -> dict:
        """Grid check of the four listed bump properties."""
        xs = self.p + np.linspace(-self.delta, self.delta, m)
        v = self.value(xs)
        far = np.abs(xs - self.p) >= self.delta / 2
        return {
            "bounded": bool(np.all(v >= 0.0) and np.all(v <= self.height)),
            "positive_at_center": bool(self.value(self.p) > 0.0),
            "compact_support": bool(np.all(v[far] == 0.0)),
            "slope_below_height": bool(np.max(np.abs(self.derivative(xs))) < self.height),
        }


def make_bump(p: float, delta: float, eps: float) -> Bump:
    if not (np.isfinite(p) and np.isfinite(delta) and np.isfinite(eps)):
        raise ValueError("make_bump: non-finite parameter")
    if delta <= 0:
        raise ValueError("make_bump: support radius delta must be positive")
    if eps < 0:
        raise ValueError("make_bump: height eps must be nonnegative (0 <= phi <= eps)")
    if eps >= delta:
        raise ValueError("make_bump: need eps < delta")
    return Bump(float(p) % 1.0, float(delta), float(eps))


def _solve_monotone(func, dfunc, target, lo, hi, sections: int = 32):
    """Vectorised bracketed root finding for increasing ``func``.

    The bracket is shrunk by multisection (``sections`` evaluations per pass,
    the same invariant as bisection with fewer passes) down to
    ``BISECT_TOL``, then polished by Newton steps.
    """
    target = np.asarray(target, dtype=float)
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    frac = np.linspace(0.0, 1.0, sections + 1)[1:-1]
    for _ in range(50):
        width = hi - lo
        if np.all(width <= BISECT_TOL):
            break
        pts = lo[..., None] + width[..., None] * frac
        below = func(pts) < target[..., None]
        # number of probe points still below the target locates the root
        j = np.sum(below, axis=-1)
        step = width / sections
        lo, hi = lo + j * step, lo + (j + 1) * step
    x = 0.5 * (lo + hi)
    for _ in range(30):
        step = (func(x) - target) / dfunc(x)
        x = x - step
        if np.all(np.abs(step) <= NEWTON_TOL * np.maximum(1.0, np.abs(x))):
            break
    resid = np.abs(func(x) - target)
    if resid.size and np.max(resid) > 1e-12 * max(1.0, float(np.max(np.abs(target)))):
        raise BranchInverseError(f"monotone root finding left residual {np.max(resid):.3e}")
    return x


class CircleCover:
    """The degree-``k`` conservative cover ``S_eps`` of the circle.

    The lift is ``S(x) = k x + Delta(x)`` with ``Delta = phi`` on ``I_0``,
    ``Delta = -phi o T^{-1}`` on ``I_1`` and zero elsewhere.
    """

    def __init__(self, k: int, bump: Bump):
        if int(k) != k or k < 2:
            raise ValueError("make_s_epsilon: degree k must be an integer >= 2")
        self.k = int(k)
        self.bump = bump
        if not bump.delta < 1.0 / (2 * self.k):
            raise ValueError(f"make_s_epsilon: need delta < 1/(2k) = {1.0 / (2 * self.k):.6g}")
        # S' on I_0 is k + phi', T' is 1 + 2 phi'/k: both must stay positive
        if bump.max_slope >= self.k / 2.0:
            raise ValueError(
                f"make_s_epsilon: bump slope {bump.max_slope:.4g} >= k/2 breaks monotonicity of the branches"
            )
        self._check_junctions()

    @property
    def eps(self) -> float:
        return self.bump.height

    @property
    def p(self) -> float:
        return self.bump.p

    @property
    def delta(self) -> float:
        return self.bump.delta

    # -- the diffeomorphism T: I_0 -> I_1 ------------------------------------
    def T(self, x):
        x = np.asarray(x, dtype=float)
        return x + 1.0 / self.k + (2.0 / self.k) * self.bump.value(x)

    def T_inverse(self, x):
        """``T^{-1}`` on lifts near ``I_1``; returns a lift near ``I_0``."""
        x = np.asarray(x, dtype=float)
        shift = 1.0 / self.k
        eps = self.bump.height
        z = _solve_monotone(
            lambda z: z + shift + (2.0 / self.k) * self.bump.value(z),
            lambda z: 1.0 + (2.0 / self.k) * self.bump.derivative(z),
            x,
            x - shift - 2.0 * eps / self.k - 1e-12,
            x - shift + 1e-12,
        )
        return z

    def _support_masks(self, x):
        half = self.bump.delta / 2.0
        o0 = circle_offset(x, self.p)
        o1 = circle_offset(x, self.p + 1.0 / self.k)
        return np.abs(o0) < half, np.abs(o1) < half

    def _deltas(self, x):
        """``Delta, Delta', Delta''`` of the lift at ``x``."""
        x = np.asarray(x, dtype=float)
        on0, on1 = self._support_masks(x)
        D = np.zeros_like(x)
        D1 = np.zeros_like(x)
        D2 = np.zeros_like(x)
        if np.any(on0):
            xs = x[on0]
            D[on0], D1[on0], D2[on0] = self.bump.jets(xs)
        if np.any(on1):
            z = self.T_inverse(x[on1])
            ph0, ph1, ph2 = self.bump.jets(z)
            Tp = 1.0 + (2.0 / self.k) * ph1
            D[on1] = -ph0
            D1[on1] = -ph1 / Tp
            D2[on1] = -ph2 / Tp**3
        return D, D1, D2

    def lift(self, x):
        x = np.asarray(x, dtype=float)
        return self.k * x + self._deltas(x)[0]

    def __call__(self, x):
        return np.mod(self.lift(x), 1.0)

    def derivative(self, x):
        return self.k + self._deltas(x)[1]

    def second_derivative(self, x):
        return self._deltas(x)[2]

    def lift_inverse(self, y):
        """Global inverse of the increasing lift ``S: R -> R``."""
        y = np.asarray(y, dtype=float)
        shape = y.shape
        y = y.reshape(-1)
        x0 = y / self.k
        out = x0.copy()
        o0 = circle_offset(x0, self.p)
        o1 = circle_offset(x0, self.p + 1.0 / self.k)
        half = self.bump.delta / 2.0
        # the unperturbed preimage stays put unless it lands in a support
        hit0 = np.abs(o0) < half + 2.0 * self.eps / self.k
        hit1 = np.abs(o1) < half + 2.0 * self.eps / self.k
        if np.any(hit0 | hit1):
            # both cases reduce to solving k z + phi(z) = c near I_0, since
            # S(T(z)) = S(z) + 1
            c = np.where(hit1, y - 1.0, y)
            c = c[hit0 | hit1]
            z = _solve_monotone(
                lambda z: self.k * z + self.bump.value(z),
                lambda z: self.k + self.bump.derivative(z),
                c,
                (c - self.eps) / self.k - 1e-12,
                c / self.k + 1e-12,
            )
            mask1 = hit1[hit0 | hit1]
            z = np.where(mask1, self.T(z), z)
            out[hit0 | hit1] = z
        return out.reshape(shape)

    def preimages(self, y):
        """The ``k`` preimages of ``y`` (mod 1), shape ``y.shape + (k,)``."""
        y = np.mod(np.asarray(y, dtype=float), 1.0)
        targets = y[..., None] + np.arange(self.k)
        return np.mod(self.lift_inverse(targets), 1.0)

    def _check_junctions(self):
        # the pieces meet where Delta switches on; compare one-sided limits
        half = self.bump.delta / 2.0
        h = 1e-7
        for c in (self.p, self.p + 1.0 / self.k):
            for edge in (c - half, c + half):
                xs = np.array([edge - h, edge + h])
                d = self.derivative(xs)
                v = self.lift(xs)
                if abs(d[1] - d[0]) > JUNCTION_TOL * 10 or abs(v[1] - v[0] - self.k * 2 * h) > JUNCTION_TOL:
                    raise ValueError(f"make_s_epsilon: continuity defect at junction {edge:.6g}")

    def describe(self):
        return f"k={self.k},eps={self.eps!r},p={self.p!r},delta={self.delta!r}"


def make_s_epsilon(k: int, p: float | None = None, delta: float | None = None, eps: float = 0.0) -> CircleCover:
    """Conservative degree-``k`` circle cover; defaults ``p = delta = 1/(4k)``."""
    if p is None:
        p = 1.0 / (4 * k)
    if delta is None:
        delta = 1.0 / (4 * k)
    if not delta < 1.0 / (2 * k):
        raise ValueError(f"make_s_epsilon: need delta < 1/(2k) = {1.0 / (2 * k):.6g}")
    return CircleCover(k, make_bump(p, delta, eps))


def check_conservative_1d(S: CircleCover, samples) -> float:
    """Max over sampled ``y`` of ``|sum_{S(z)=y} 1/|S'(z)| - 1|``."""
    y = np.mod(np.asarray(samples, dtype=float).ravel(), 1.0)
    z = S.preimages(y)
    back = S(z)
    err = np.abs(circle_offset(back, y[:, None]))
    if z.shape[-1] != S.k or np.max(err, initial=0.0) > 1e-10:
        raise CoverageError(f"missing branch preimage (residual {np.max(err):.3e})")
    total = np.sum(1.0 / np.abs(S.derivative(z)), axis=-1)
    return float(np.max(np.abs(total - 1.0)))


class PerturbedCover2D(TorusMap):
    """``g = U o A_eps o V`` with ``A_eps(x, y) = (S_eps(x), tau2 y)``."""

    kind = "perturbed"

    def __init__(self, E: IntMatrix2, eps: float, p: float | None = None, delta: float | None = None):
        if E.degree < 2:
            raise ValueError("make_g_epsilon: need |det E| >= 2")
        snf = smith_normal_form(E)
        if snf.tau1 < 2:
            raise ValueError("make_g_epsilon: tau1 = 1")
        super().__init__(E)
        self.E = E
        self.smith = snf
        self.U, self.A, self.V = snf
        self.tau1, self.tau2 = snf.tau1, snf.tau2
        self.circle = make_s_epsilon(self.tau1, p=p, delta=delta, eps=eps)
        self.eps = float(eps)
        self._U = self.U.to_array()
        self._V = self.V.to_array()
        self._Uinv = self.U.inverse_unimodular().to_array()
        self._Vinv = self.V.inverse_unimodular().to_array()
        self._detUV = float(self.U.det * self.V.det)

    def lift(self, p):
        q = np.asarray(p, dtype=float) @ self._V.T
        a = np.stack([self.circle.lift(q[..., 0]), self.tau2 * q[..., 1]], axis=-1)
        return a @ self._U.T

    def lift_inverse(self, q):
        a = np.asarray(q, dtype=float) @ self._Uinv.T
        b = np.stack([self.circle.lift_inverse(a[..., 0]), a[..., 1] / self.tau2], axis=-1)
        return b @ self._Vinv.T

    def _inner(self, p):
        return (np.asarray(p, dtype=float) @ self._V.T)[..., 0]

    def jacobian(self, p):
        x = self._inner(p)
        DA = np.zeros(x.shape + (2, 2))
        DA[..., 0, 0] = self.circle.derivative(x)
        DA[..., 1, 1] = self.tau2
        return self._U @ DA @ self._V

    def hessian(self, p):
        x = self._inner(p)
        s2 = self.circle.second_derivative(x)
        # only d^2 A_0 / dx^2 is nonzero
        return np.einsum("...,i,j,k->...ijk", s2, self._U[:, 0], self._V[0, :], self._V[0, :])

    def det_jacobian(self, p):
        return self._detUV * self.tau2 * self.circle.derivative(self._inner(p))

    def describe(self):
        E = self.E
        c = self.circle
        return f"perturbed[{E.e11},{E.e12};{E.e21},{E.e22};eps={self.eps!r};p={c.p!r};delta={c.delta!r}]"


def make_g_epsilon(E, eps: float, p: float | None = None, delta: float | None = None) -> PerturbedCover2D:
    if not isinstance(E, IntMatrix2):
        E = IntMatrix2.from_rows(E)
    return PerturbedCover2D(E, eps, p=p, delta=delta)


_KV = re.compile(r"^\s*(\w+)\s*=\s*(.+?)\s*$")


def parse_perturbed(body: str) -> PerturbedCover2D:
    parts = body.split(";")
    if len(parts) < 3:
        raise ValueError(f"perturbed needs a 2x2 matrix and eps, got {body!r}")
    rows = [[int(v) for v in parts[0].split(",")], [int(v) for v in parts[1].split(",")]]
    opts = {}
    for item in parts[2:]:
        m = _KV.match(item)
        if not m:
            raise ValueError(f"bad perturbed option {item!r}")
        opts[m.group(1)] = float(m.group(2))
    if "eps" not in opts:
        raise ValueError("perturbed map needs eps=")
    unknown = set(opts) - {"eps", "p", "delta"}
    if unknown:
        raise ValueError(f"unknown perturbed options {sorted(unknown)}")
    return make_g_epsilon(IntMatrix2.from_rows(rows), opts["eps"], p=opts.get("p"), delta=opts.get("delta"))


def check_conservative_2d(g: TorusMap, samples) -> float:
    """Max over sampled ``q`` of ``|sum_{g(z)=q} 1/|det Dg(z)| - 1|``."""
    from .preimage import preimage_points

    q = wrap(np.asarray(samples, dtype=float).reshape(-1, 2))
    z = preimage_points(g, q)
    if z.shape[-2] != g.degree:
        raise CoverageError(f"expected {g.degree} preimages, got {z.shape[-2]}")
    total = np.sum(1.0 / np.abs(g.det_jacobian(z)), axis=-1)
    return float(np.max(np.abs(total - 1.0)))


def det_spread(g: TorusMap, m: int = 256) -> tuple[float, float]:
    """Grid min and max of ``|det Dg|``."""
    c = (np.arange(m) + 0.5) / m
    pts = np.stack(np.meshgrid(c, c, indexing="ij"), axis=-1).reshape(-1, 2)
    dets = np.abs(g.det_jacobian(pts))
    return float(dets.min()), float(dets.max())


def folding_entropy_leb(g: TorusMap, m: int = 1024, probe: int = 200, seed: int = 0) -> tuple[float, float]:
    """Midpoint-rule estimate of ``int log|det Dg| dLeb`` and an error estimate.

    The error estimate is the Richardson difference between the ``m`` and
    ``m/2`` grids, ``|F_m - F_{m/2}| / 3``. Rejects maps failing a
    conservativity probe, since ``J_Leb = |det Dg|`` presumes invariance of
    Lebesgue measure.
    """
    rng = np.random.default_rng(seed)
    resid = check_conservative_2d(g, rng.random((probe, 2)))
    if resid > 1e-8:
        raise PreconditionError(f"folding_entropy_leb: map is not conservative (residual {resid:.3e})")

    def midpoint(n):
        c = (np.arange(n) + 0.5) / n
        total = 0.0
        for row in np.array_split(c, max(1, n // 256)):
            pts = np.stack(np.meshgrid(row, c, indexing="ij"), axis=-1)
            total += np.sum(np.log(np.abs(g.det_jacobian(pts))))
        return total / (n * n)

    fine = midpoint(m)
    coarse = midpoint(m // 2)
    return float(fine), float(abs(fine - coarse) / 3.0)
