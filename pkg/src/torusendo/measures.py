"""Empirical measures of random backward orbits and Lyapunov exponents.

Backward Birkhoff averages are accumulated into an ``m x m`` histogram on
the torus. Randomness is split per start point: start ``k`` draws from
``Generator(PCG64(SeedSequence(seed).spawn(K)[k]))`` and all its trials
run as one vectorised batch, so results depend only on ``(seed, starts,
trials, n)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError
from .lattice import wrap
from .maps import TorusMap
from .preimage import BackwardOrbit, backward_steps, inverse_2x2

BIN_FLUSH = 1 << 20


@dataclass
class EmpiricalMeasure:
    """Histogram of sample counts on an ``m x m`` grid of the torus."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ValueError("counts must be a square grid")
        if np.any(self.counts < 0):
            raise ValueError("negative counts")

    @property
    def m(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def probabilities(self) -> np.ndarray:
        total = self.total
        if total == 0:
            return np.zeros(self.counts.shape)
        return self.counts / total

    @classmethod
    def empty(cls, m: int) -> "EmpiricalMeasure":
        return cls(np.zeros((m, m), dtype=np.int64))

    @classmethod
    def uniform(cls, m: int) -> "EmpiricalMeasure":
        """Exact uniform reference: one count per bin."""
        return cls(np.ones((m, m), dtype=np.int64))

    @classmethod
    def from_points(cls, pts, m: int) -> "EmpiricalMeasure":
        out = cls.empty(m)
        out.add_points(pts)
        return out

    def add_points(self, pts):
        idx = bin_index(pts, self.m)
        self.counts += np.bincount(idx.ravel(), minlength=self.m**2).reshape(self.m, self.m)

    def merge(self, other: "EmpiricalMeasure") -> "EmpiricalMeasure":
        _check_grid(self, other)
        return EmpiricalMeasure(self.counts + other.counts)

    def to_csv(self, path):
        p = self.probabilities
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "count", "probability"])
            for i in range(self.m):
                for j in range(self.m):
                    w.writerow([i, j, int(self.counts[i, j]), repr(float(p[i, j]))])


def bin_index(pts, m: int) -> np.ndarray:
    """Flat bin index ``i * m + j`` of each point (``i`` from x, ``j`` from y)."""
    pts = wrap(pts)
    ij = np.minimum((pts * m).astype(np.int64), m - 1)
    return ij[..., 0] * m + ij[..., 1]


def _check_grid(a: EmpiricalMeasure, b: EmpiricalMeasure):
    if a.m != b.m:
        raise ValueError(f"bin grids differ: {a.m}x{a.m} vs {b.m}x{b.m}")


def measure_distance_l1(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Total variation style distance ``sum |p_i - q_i|`` in ``[0, 2]``."""
    _check_grid(mu, nu)
    return float(np.abs(mu.probabilities - nu.probabilities).sum())


def noise_floor(m: int, n_samples: int) -> float:
    """Typical L1 fluctuation ``sqrt(m^2 / N)`` of an ``N``-sample histogram."""
    if n_samples <= 0:
        return float("inf")
    return float(np.sqrt(m * m / n_samples))


def compare_measures(mu: EmpiricalMeasure, nu: EmpiricalMeasure, factor: float = 3.0) -> dict:
    """L1 distance, noise floor and a verdict.

    With ``floor = sqrt(m^2 / min(N_mu, N_nu))``: distances at most
    ``factor * floor`` are "indistinguishable"; larger ones are "distinct"
    provided ``factor * floor < 1`` (otherwise the histograms are too thin
    to separate anything and the verdict is "inconclusive").
    """
    dist = measure_distance_l1(mu, nu)
    floor = noise_floor(mu.m, min(mu.total, nu.total))
    threshold = factor * floor
    if dist <= threshold:
        verdict = "indistinguishable"
    elif threshold < 1.0:
        verdict = "distinct"
    else:
        verdict = "inconclusive"
    return {"l1": dist, "noise_floor": floor, "threshold": threshold, "verdict": verdict}


def start_generators(seed: int, n_starts: int):
    """Independent generators for each start point (documented splitting rule)."""
    children = np.random.SeedSequence(seed).spawn(n_starts)
    return [np.random.default_rng(c) for c in children]


def empirical_backward_measure(
    f: TorusMap,
    starts,
    n: int,
    trials: int = 1,
    weighting: str = "bernoulli",
    m: int = 32,
    seed: int = 0,
) -> EmpiricalMeasure:
    """Histogram of ``x_1..x_n`` over ``trials`` random backward orbits per start."""
    if n < 1 or trials < 1:
        raise ValueError("n and trials must be >= 1")
    starts = wrap(np.asarray(starts, dtype=float).reshape(-1, 2))
    mu = EmpiricalMeasure.empty(m)
    flat = np.zeros(m * m, dtype=np.int64)
    for x0, rng in zip(starts, start_generators(seed, len(starts))):
        batch = np.broadcast_to(x0, (trials, 2))
        buf, held = [], 0
        for pts, _, _, _ in backward_steps(f, batch, n, weighting, rng):
            buf.append(bin_index(pts, m))
            held += trials
            if held >= BIN_FLUSH:
                flat += np.bincount(np.concatenate(buf), minlength=m * m)
                buf, held = [], 0
        if buf:
            flat += np.bincount(np.concatenate(buf), minlength=m * m)
    mu.counts += flat.reshape(m, m)
    return mu


# -- Lyapunov exponents -----------------------------------------------------


@dataclass(frozen=True)
class LyapunovEstimate:
    chi_plus: float
    chi_minus: float
    n: int
    log_det_avg: float
    direction: tuple


def forward_lyapunov_batch(f: TorusMap, X, n: int, burn_in: int = 64):
    """Vectorised forward exponents for many starts.

    A tangent vector is pushed along the orbit and renormalised every
    step; ``chi_plus`` is its mean log growth after ``burn_in`` aligning
    steps, and ``chi_minus = log_det_avg - chi_plus``. Returns arrays
    ``(chi_plus, chi_minus, log_det_avg, direction)``.
    """
    if n < 1:
        raise ValueError("forward_lyapunov: n must be >= 1")
    x = wrap(np.asarray(X, dtype=float).reshape(-1, 2))
    u = np.tile([np.cos(1.0), np.sin(1.0)], (x.shape[0], 1))
    for _ in range(burn_in):
        u = np.einsum("bij,bj->bi", f.jacobian(x), u)
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        x = f(x)
    grow = np.zeros(x.shape[0])
    logdet = np.zeros(x.shape[0])
    for _ in range(n):
        u = np.einsum("bij,bj->bi", f.jacobian(x), u)
        r = np.linalg.norm(u, axis=1)
        if np.any(r == 0.0):
            raise DegenerateError("tangent vector collapsed")
        grow += np.log(r)
        logdet += np.log(np.abs(f.det_jacobian(x)))
        u /= r[:, None]
        x = f(x)
    chi_plus = grow / n
    ld = logdet / n
    return chi_plus, ld - chi_plus, ld, u


def forward_lyapunov(f: TorusMap, x, n: int, burn_in: int = 64) -> LyapunovEstimate:
    cp, cm, ld, u = forward_lyapunov_batch(f, x, n, burn_in)
    return LyapunovEstimate(float(cp[0]), float(cm[0]), n, float(ld[0]), tuple(u[0]))


def backward_vector_exponent(f: TorusMap, orbit: BackwardOrbit, v, discard: int = 0, cadence: int = 1) -> float:
    """``(1/n) log ||(Df^n_{x_n})^{-1} v||`` along a backward orbit.

    The first ``discard`` steps are applied but not counted, which removes
    the transient from the initial component of ``v``. The vector is
    renormalised every ``cadence`` steps; the value does not depend on it.
    """
    n = orbit.n
    if n < 1 or discard >= n:
        raise ValueError("orbit must be longer than the discarded prefix")
    w = np.asarray(v, dtype=float)
    w = w / np.linalg.norm(w)
    inv = inverse_2x2(orbit.steps)
    total = 0.0
    for i in range(n):
        w = inv[i] @ w
        if i + 1 == discard:
            w = w / np.linalg.norm(w)
        elif (i + 1 - discard) % cadence == 0 or i == n - 1:
            r = np.linalg.norm(w)
            if r == 0.0:
                raise DegenerateError("vector collapsed along the backward orbit")
            if i >= discard:
                total += np.log(r)
            w = w / r
    return total / (n - discard)


def _angle_between_lines(u, v):
    c = np.abs(np.sum(u * v, axis=-1)) / (np.linalg.norm(u, axis=-1) * np.linalg.norm(v, axis=-1))
    return np.arccos(np.clip(c, 0.0, 1.0))


SEED_VECTOR = np.array([np.cos(1.0), np.sin(1.0)])


def _push_tail(f: TorusMap, points, n_burn: int):
    """Push ``SEED_VECTOR`` from ``x_{n_burn}`` forward to ``x_0``; ``points`` is ``(L+1, B, 2)``."""
    u = np.broadcast_to(SEED_VECTOR, points.shape[1:]).copy()
    for k in range(n_burn, 0, -1):
        u = np.einsum("bij,bj->bi", f.jacobian(points[k]), u)
        r = np.linalg.norm(u, axis=1, keepdims=True)
        if np.any(r == 0.0):
            raise DegenerateError("pushforward of the seed vector vanished")
        u /= r
    return u


def unstable_direction_estimate(f: TorusMap, x, word, n_burn: int = 64, adaptive: bool = True, tol: float = 1e-6, cap: int = 1024):
    """Finite-time unstable direction at ``x`` along a backward orbit.

    ``word`` is a symbol word or a ``BackwardOrbit`` of length at least
    ``n_burn``. With ``adaptive`` the burn-in is doubled until the direction
    moves by less than ``tol`` or ``cap`` (or the orbit length) is reached.
    Returns ``(direction, n_burn_used)``.
    """
    if n_burn < 32:
        raise ValueError("n_burn must be >= 32")
    if isinstance(word, BackwardOrbit):
        orbit = word
    else:
        from .solenoid import backward_orbit_from_word

        orbit = backward_orbit_from_word(f, x, word)
    L = orbit.n
    if L < n_burn:
        raise ValueError(f"orbit of length {L} shorter than n_burn = {n_burn}")
    pts = orbit.points[:, None, :]
    u = _push_tail(f, pts, n_burn)[0]
    if adaptive:
        while 2 * n_burn <= min(cap, L):
            u2 = _push_tail(f, pts, 2 * n_burn)[0]
            moved = _angle_between_lines(u, u2)
            u, n_burn = u2, 2 * n_burn
            if moved < tol:
                break
    return u, n_burn


def fiber_directions(f: TorusMap, x, n_words: int, n_burn: int = 64, seed: int = 0):
    """Unstable-direction estimates at ``x`` for ``n_words`` Bernoulli backward orbits."""
    rng = np.random.default_rng(seed)
    x = wrap(np.asarray(x, dtype=float).reshape(2))
    pts = np.empty((n_burn + 1, n_words, 2))
    pts[0] = x
    for k, (p, _, _, _) in enumerate(backward_steps(f, np.broadcast_to(x, (n_words, 2)), n_burn, "bernoulli", rng)):
        pts[k + 1] = p
    return _push_tail(f, pts, n_burn)


def fiber_angle_distribution(f: TorusMap, x, n_words: int = 1000, n_burn: int = 64, gammas=(0.01, 0.05, 0.1, 0.2, 0.5), n_ref: int = 32, seed: int = 0):
    """Empirical ``P(angle(E, E^u) < gamma)`` for reference lines ``E`` on an ``n_ref`` grid.

    Returns ``(ref_thetas, gammas, table)`` with ``table[i, j]`` the fraction
    for reference ``i`` and threshold ``j``.
    """
    dirs = fiber_directions(f, x, n_words, n_burn, seed)
    ref = np.arange(n_ref) * np.pi / n_ref
    E = np.stack([np.cos(ref), np.sin(ref)], axis=-1)
    ang = _angle_between_lines(E[:, None, :], dirs[None, :, :])
    g = np.asarray(gammas, dtype=float)
    table = np.mean(ang[:, :, None] < g[None, None, :], axis=1)
    return ref, g, table
