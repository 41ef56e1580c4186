"""C^2 curves on the torus and their backward iterates.

A curve is a map ``[-1, 1] -> R^2`` (a continuous lift of a torus curve)
given through its 2-jet: value, first and second derivative at any array
of parameters. Backward iterates are evaluated lazily by pushing jets
through inverse branches:

    z = F^{-1}(y + w),  z' = Df_z^{-1} y',  z'' = Df_z^{-1} (y'' - D^2f_z[z', z']).

The branch for the whole curve is the one selected at its centre point.
Since ``F^{-1}`` is a global diffeomorphism of the plane and the lift of the
curve is continuous, the image is again a continuous lift: no branch cut is
ever crossed and no subdivision is needed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import CapacityError, GrowthStalledError
from .expansion import find_expanding_preimage
from .lattice import torus_distance, wrap
from .maps import TorusMap
from .preimage import inverse_2x2, preimage_points, tree_levels

N_SAMPLES = 1024


def _param_grid(m: int = N_SAMPLES) -> np.ndarray:
    return np.linspace(-1.0, 1.0, m)


class Curve:
    """Base class: subclasses implement ``jets(t) -> (value, d1, d2)``."""

    def jets(self, t):
        raise NotImplementedError

    def __call__(self, t):
        return self.jets(t)[0]

    def point(self, t=0.0) -> np.ndarray:
        return wrap(self.jets(np.atleast_1d(float(t)))[0][0])

    def tangent(self, t=0.0) -> np.ndarray:
        d1 = self.jets(np.atleast_1d(float(t)))[1][0]
        return d1 / np.linalg.norm(d1)

    def sample(self, m: int = N_SAMPLES):
        return self.jets(_param_grid(m))

    def speed(self, m: int = N_SAMPLES) -> np.ndarray:
        return np.linalg.norm(self.sample(m)[1], axis=-1)

    def length(self, m: int = 4097) -> float:
        """Integrated speed (composite Simpson on ``m`` points)."""
        from scipy.integrate import simpson

        t = _param_grid(m)
        return float(simpson(np.linalg.norm(self.jets(t)[1], axis=-1), x=t))

    def reparametrize(self, s0: float, h: float) -> "Curve":
        """The curve ``t -> self(s0 + h t)``."""
        return AffineReparam(self, float(s0), float(h))

    def derivative_residuals(self, m: int = 257, steps=(1e-3, 1e-4, 1e-5, 1e-6)):
        """Relative mismatch of ``d1``/``d2`` against five-point central differences.

        ``d1`` is compared with differences of the values and ``d2`` with
        differences of ``d1``, each normalised by the sup of the jet (``d2``
        also by ``sup ||d1||`` so straight curves do not divide by zero).
        Backward iterates can have speed spikes that a coarse stencil cannot
        resolve, so the best step of the ladder is reported per component.
        """
        best1 = best2 = np.inf
        for step in steps:
            t = np.linspace(-1.0 + 2 * step, 1.0 - 2 * step, m)
            _, d1, d2 = self.jets(t)
            c = np.array([1.0, -8.0, 8.0, -1.0]) / (12 * step)
            jets = [self.jets(t + o) for o in (-2 * step, -step, step, 2 * step)]
            fd1 = sum(ci * j[0] for ci, j in zip(c, jets))
            fd2 = sum(ci * j[1] for ci, j in zip(c, jets))
            s1 = max(np.max(np.linalg.norm(d1, axis=-1)), 1e-300)
            e1 = np.max(np.linalg.norm(fd1 - d1, axis=-1)) / s1
            e2 = np.max(np.linalg.norm(fd2 - d2, axis=-1)) / max(np.max(np.linalg.norm(d2, axis=-1)), s1)
            best1, best2 = min(best1, e1), min(best2, e2)
        return float(best1), float(best2)

    def to_csv(self, path, m: int = N_SAMPLES):
        v, d1, _ = self.sample(m)
        pts = wrap(v)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "y", "dx", "dy"])
            for t, p, d in zip(_param_grid(m), pts, d1):
                w.writerow([repr(float(t)), repr(float(p[0])), repr(float(p[1])), repr(float(d[0])), repr(float(d[1]))])


@dataclass
class FunctionCurve(Curve):
    """Curve from a closed-form jet function."""

    fn: object

    def jets(self, t):
        return self.fn(np.asarray(t, dtype=float))


@dataclass
class AffineReparam(Curve):
    base: Curve
    s0: float
    h: float

    def jets(self, t):
        v, d1, d2 = self.base.jets(self.s0 + self.h * np.asarray(t, dtype=float))
        return v, self.h * d1, self.h * self.h * d2


def segment(center, direction, half_length: float) -> FunctionCurve:
    """Straight segment ``c + t * half_length * u`` with ``u`` a unit vector."""
    c = np.asarray(center, dtype=float)
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    vel = half_length * u

    def fn(t):
        t = t[..., None]
        return c + t * vel, np.broadcast_to(vel, t.shape[:-1] + (2,)).copy(), np.zeros(t.shape[:-1] + (2,))

    return FunctionCurve(fn)


def circle_arc(center, radius: float, speed: float, phase: float = 0.0) -> FunctionCurve:
    """Arc of a circle of radius ``radius`` traversed at constant ``speed``."""
    c = np.asarray(center, dtype=float)
    w = speed / radius

    def fn(t):
        a = phase + w * t
        ca, sa = np.cos(a)[..., None], np.sin(a)[..., None]
        e = np.concatenate([ca, sa], axis=-1)
        n = np.concatenate([-sa, ca], axis=-1)
        return c + radius * e, speed * n, -speed * w * e

    return FunctionCurve(fn)


def exponential_speed_curve(center, direction, rate: float = 3.0, scale: float = 0.01) -> FunctionCurve:
    """Straight curve ``c + scale * e^{rate t} u``: speed ratio ``e^{2 rate}`` over ``[-1, 1]``."""
    c = np.asarray(center, dtype=float)
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)

    def fn(t):
        e = np.exp(rate * t)[..., None]
        return c + scale * e * u, scale * rate * e * u, scale * rate * rate * e * u

    return FunctionCurve(fn)


def quadratic_curve(center, d1, d2) -> FunctionCurve:
    """``c + d1 t + d2 t^2 / 2``: constant second derivative."""
    c, a, b = (np.asarray(v, dtype=float) for v in (center, d1, d2))

    def fn(t):
        t = t[..., None]
        return c + a * t + 0.5 * b * t * t, a + b * t, np.broadcast_to(b, t.shape[:-1] + (2,)).copy()

    return FunctionCurve(fn)


def inverse_jets(f: TorusMap, y, y1, y2, shift):
    """Push a 2-jet through ``F^{-1}(. + shift)``."""
    z = f.lift_inverse(y + shift)
    J = f.jacobian(z)
    Jinv = inverse_2x2(J)
    z1 = np.einsum("...ij,...j->...i", Jinv, y1)
    H = f.hessian(z)
    z2 = np.einsum("...ij,...j->...i", Jinv, y2 - np.einsum("...ijk,...j,...k->...i", H, z1, z1))
    return z, z1, z2


@dataclass
class BackwardCurve(Curve):
    """Backward iterate of ``base`` along a fixed list of branch shifts.

    The base lift is first moved by the integer vector ``pre_offset`` so that
    its centre lies in ``[0, 1)^2``. Then ``shifts[k]`` is added before the
    ``k``-th inverse and ``offsets[k]`` (integer) subtracted after it, which
    keeps every intermediate centre in ``[0, 1)^2``.
    """

    f: TorusMap
    base: Curve
    pre_offset: np.ndarray = field(default_factory=lambda: np.zeros(2))
    shifts: list = field(default_factory=list)
    offsets: list = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.shifts)

    def jets(self, t):
        y, y1, y2 = self.base.jets(t)
        y = y - self.pre_offset
        for w, off in zip(self.shifts, self.offsets):
            y, y1, y2 = inverse_jets(self.f, y, y1, y2, w)
            y = y - off
        return y, y1, y2

    def with_base(self, base: Curve) -> "BackwardCurve":
        return BackwardCurve(self.f, base, self.pre_offset, list(self.shifts), list(self.offsets))

    def extended(self, labels, center: float = 0.0) -> "BackwardCurve":
        """Continue the iteration along local branch labels chosen at ``center``."""
        pre = self.pre_offset
        if not self.shifts:
            pre = np.floor(self.base.jets(np.atleast_1d(center))[0][0])
        out = BackwardCurve(self.f, self.base, pre, list(self.shifts), list(self.offsets))
        c = out.jets(np.atleast_1d(center))[0][0]
        reps = self.f.cosets.reps_array
        for j in labels:
            w = reps[int(j) - 1]
            z = self.f.lift_inverse(c + w)
            off = np.floor(z)
            out.shifts.append(w)
            out.offsets.append(off)
            c = z - off
        return out


def backward_iterate_curve(f: TorusMap, sigma: Curve, word=None, center: float = 0.0, branches=None) -> BackwardCurve:
    """``sigma_n``: backward iterate of ``sigma`` along a symbol word or local labels.

    Exactly one of ``word`` (a symbol word relative to the lift of
    ``sigma(center)``) and ``branches`` (local labels) must be given.
    """
    if (word is None) == (branches is None):
        raise ValueError("give exactly one of word or branches")
    if word is not None:
        from .solenoid import branches_from_word

        branches = branches_from_word(f, sigma.point(center), word)[0]
    start = sigma if isinstance(sigma, BackwardCurve) and sigma.f is f else BackwardCurve(f, sigma)
    return start.extended(branches, center)


# -- boundedness ------------------------------------------------------------


def _sampled_sup(curve: Curve, which: int, m: int):
    """Sup of ``||d^which||`` on ``m`` samples with a local refinement near the argmax."""
    t = _param_grid(m)
    vals = np.linalg.norm(curve.jets(t)[which], axis=-1)
    i = int(np.argmax(vals))
    lo, hi = t[max(i - 1, 0)], t[min(i + 1, m - 1)]
    fine = np.linspace(lo, hi, 65)
    return float(max(vals[i], np.max(np.linalg.norm(curve.jets(fine)[which], axis=-1))))


def strongly_bounded_check(sigma: Curve, eps: float, m: int = N_SAMPLES) -> dict:
    """``sup ||d^2|| <= sup ||d|| / 6`` (bounded) and additionally ``sup ||d|| <= eps`` (strongly)."""
    s1 = _sampled_sup(sigma, 1, m)
    s2 = _sampled_sup(sigma, 2, m)
    bounded = s2 <= s1 / 6.0
    return {
        "bounded": bool(bounded),
        "strongly": bool(bounded and s1 <= eps),
        "sup_d1": s1,
        "sup_d2": s2,
        "margin_bounded": s1 / 6.0 - s2,
        "margin_speed": eps - s1,
    }


def distortion_check(sigma: Curve, m: int = N_SAMPLES) -> float:
    """Largest speed ratio ``||d(t)|| / ||d(s)||`` over sampled parameters."""
    sp = sigma.speed(m)
    return float(np.max(sp) / np.min(sp))


def tangent_oscillation(sigma: Curve, m: int = N_SAMPLES) -> float:
    """Range of the tangent angle along the curve."""
    d1 = sigma.sample(m)[1]
    ang = np.unwrap(np.arctan2(d1[:, 1], d1[:, 0]))
    return float(np.max(ang) - np.min(ang))


# -- geometric times --------------------------------------------------------


@dataclass
class GeometricTimeRecord:
    branches: tuple
    s0: float
    n_max: int
    alpha: float
    eps: float
    times: list
    half_widths: dict
    speeds: dict
    ladder_depth: int
    samples: int

    def density(self) -> float:
        return len(self.times) / self.n_max


def _window_ladder(s0: float, depth: int) -> np.ndarray:
    hs = 2.0 ** -np.arange(depth + 1)
    return hs[np.abs(s0) + hs <= 1.0 + 1e-15]


def geometric_time_scan(
    f: TorusMap,
    sigma: Curve,
    s0: float,
    n_max: int,
    alpha: float,
    eps: float,
    word=None,
    branches=None,
    ladder_depth: int = 20,
    m: int = 256,
) -> GeometricTimeRecord:
    """Detect geometric times of the backward iterates of ``sigma`` through ``sigma(s0)``.

    ``n`` is recorded when some centred window ``theta(t) = s0 + h t`` with
    ``h`` on the dyadic ladder keeps ``sigma_k o theta`` strongly
    ``eps``-bounded for every ``k <= n`` and
    ``||d(sigma_n o theta)(0)|| >= (3/2) alpha eps``. This is a
    sufficient-condition search over centred windows only.
    """
    if (word is None) == (branches is None):
        raise ValueError("give exactly one of word or branches")
    if word is not None:
        from .solenoid import branches_from_word

        branches = branches_from_word(f, sigma.point(s0), word)[0]
    branches = [int(b) for b in branches][:n_max]
    if len(branches) < n_max:
        raise ValueError("branch sequence shorter than n_max")
    hs = _window_ladder(s0, ladder_depth)
    H = len(hs)
    t = np.concatenate([_param_grid(m), [0.0]])
    T = len(t)
    params = s0 + hs[:, None] * t[None, :]
    y, y1, y2 = sigma.jets(params.ravel())
    y1 = y1 * np.repeat(hs, T)[:, None]
    y2 = y2 * np.repeat(hs * hs, T)[:, None]
    y, y1, y2 = (a.reshape(H, T, 2) for a in (y, y1, y2))
    # normalise the lift so the centre of the curve sits in [0, 1)^2
    off = np.floor(y[0, -1])
    y = y - off
    reps = f.cosets.reps_array

    def bounded_ok(d1, d2):
        s1 = np.max(np.linalg.norm(d1[:, :-1], axis=-1), axis=1)
        s2 = np.max(np.linalg.norm(d2[:, :-1], axis=-1), axis=1)
        return (s2 <= s1 / 6.0) & (s1 <= eps)

    alive = bounded_ok(y1, y2)
    times, widths, speeds = [], {}, {}
    threshold = 1.5 * alpha * eps
    for n, j in enumerate(branches, start=1):
        y, y1, y2 = inverse_jets(f, y, y1, y2, reps[j - 1])
        c = np.floor(y[0, -1])
        y = y - c
        alive &= bounded_ok(y1, y2)
        sp0 = np.linalg.norm(y1[:, -1], axis=-1)
        good = alive & (sp0 >= threshold)
        if np.any(good):
            k = int(np.argmax(good))
            times.append(n)
            widths[n] = float(hs[k])
            speeds[n] = float(sp0[k])
        if not np.any(alive):
            break
    return GeometricTimeRecord(tuple(branches), float(s0), n_max, alpha, eps, times, widths, speeds, ladder_depth, m)


def geometric_time_density(
    f: TorusMap,
    sigma: Curve,
    n_max: int,
    n_words: int,
    alpha: float,
    eps: float,
    seed: int = 0,
    m: int = 256,
    ladder_depth: int = 20,
) -> dict:
    """Distribution over Bernoulli words and base parameters of ``#E / n_max``."""
    rng = np.random.default_rng(seed)
    d = f.degree
    dens = np.empty(n_words)
    for i in range(n_words):
        labels = rng.integers(1, d + 1, size=n_max)
        s0 = rng.uniform(-0.5, 0.5)
        rec = geometric_time_scan(f, sigma, s0, n_max, alpha, eps, branches=labels, ladder_depth=ladder_depth, m=m)
        dens[i] = rec.density()
    return {
        "densities": dens.tolist(),
        "beta_hat": float(np.percentile(dens, 10)),
        "mean": float(np.mean(dens)),
        "n_max": n_max,
        "n_words": n_words,
        "alpha": alpha,
        "eps": eps,
        "ladder_depth": ladder_depth,
        "samples": m,
    }


# -- growing expanding curves ----------------------------------------------


@dataclass
class GrownCurve:
    curve: BackwardCurve
    steps: int
    scale: float
    lengths: list
    forward_residual: float
    N_step: int


def _graph_window(curve: Curve, m: int = N_SAMPLES) -> float:
    """Largest ``a`` such that on ``[-a, a]`` the tangent makes slope <= 1 with the centre tangent."""
    t = _param_grid(m)
    d1 = curve.jets(t)[1]
    u = curve.tangent(0.0)
    along = d1 @ u
    across = d1 @ np.array([-u[1], u[0]])
    bad = np.abs(across) > np.abs(along)
    if not np.any(bad):
        return 1.0
    a = float(np.min(np.abs(t[bad])))
    # step back to the last good sample
    return max(a - 2.0 / (m - 1), 2.0 / (m - 1))


def chord_slope(curve: Curve, m: int = N_SAMPLES) -> float:
    """Max ``|across| / |along|`` of the tangent relative to the chord direction."""
    v, d1, _ = curve.sample(m)
    chord = v[-1] - v[0]
    u = chord / np.linalg.norm(chord)
    return float(np.max(np.abs(d1 @ np.array([-u[1], u[0]])) / np.abs(d1 @ u)))


def forward_residual(f: TorusMap, gamma: Curve, sigma: Curve, n: int, scale: float, m: int = N_SAMPLES) -> float:
    """``max_t dist(f^n(gamma(t)), sigma(scale * t))`` on the torus."""
    t = _param_grid(m)
    x = wrap(gamma(t))
    for _ in range(n):
        x = f(x)
    return float(np.max(torus_distance(x, wrap(sigma(scale * t)))))


def grow_expanding_curve(
    f: TorusMap,
    sigma: Curve,
    target_length: float,
    N_step: int = 1,
    max_iters: int = 64,
    m: int = N_SAMPLES,
) -> GrownCurve:
    """Grow a backward iterate of ``sigma`` until it is at least ``target_length`` long.

    Each step picks the depth-``N_step`` preimage of the midpoint that
    expands the tangent most, iterates the curve along it, and trims the
    result to the window around its midpoint where it is a 1-Lipschitz graph
    over the midpoint tangent.
    """
    base = BackwardCurve(f, sigma)
    scale = 1.0
    cur = base
    lengths = [sigma.length()]
    for step in range(1, max_iters + 1):
        x = cur.point(0.0)
        v = cur.tangent(0.0)
        hit = find_expanding_preimage(f, x, v, N_step)
        if hit is None:
            raise GrowthStalledError(f"no expanding preimage at step {step}", step=step)
        labels = _leaf_labels(hit.index, f.degree, N_step)
        nxt = cur.extended(labels)
        a = _graph_window(nxt, m)
        if a < 1.0:
            scale *= a
            nxt = nxt.with_base(sigma.reparametrize(0.0, scale))
        cur = nxt
        lengths.append(cur.length())
        if lengths[-1] >= target_length:
            res = forward_residual(f, cur, sigma, step * N_step, scale, m)
            return GrownCurve(cur, step, scale, lengths, res, N_step)
    raise GrowthStalledError(f"target length not reached after {max_iters} steps", step=max_iters)


def _leaf_labels(index: int, d: int, depth: int):
    labels = []
    for _ in range(depth):
        labels.append(index % d + 1)
        index //= d
    return labels[::-1]


# -- density of preimages ---------------------------------------------------


POINT_CAP = 10_000_000


def preimage_density(f: TorusMap, sigma: Curve, N: int, m_probe: int = 64, samples: int = 256, point_cap: int = POINT_CAP):
    """Covering radius of ``union_{k<=n} f^{-k}(sigma)`` for ``n = 0..N``.

    Points sampled on ``sigma`` are pushed through every branch; after each
    depth the distance from each probe point to its nearest cloud point is
    updated by a running minimum, so the radii are nonincreasing.
    """
    d = f.degree
    total = samples * sum(d**k for k in range(N + 1))
    if total > point_cap:
        raise CapacityError(f"{total} preimage points (d^N = {d}^{N} x {samples} samples) exceeds cap {point_cap}", total, point_cap)
    g = (np.arange(m_probe) + 0.5) / m_probe
    probes = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    best = np.full(len(probes), np.inf)
    layer = wrap(sigma(_param_grid(samples)))
    radii = []
    for k in range(N + 1):
        if k > 0:
            layer = preimage_points(f, layer).reshape(-1, 2)
        tree = cKDTree(layer, boxsize=1.0)
        dist, _ = tree.query(probes)
        best = np.minimum(best, dist)
        radii.append(float(np.max(best)))
    return radii
