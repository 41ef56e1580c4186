"""Averaged backward expansion along preimage trees.

The central quantity is

    I(x, v; f^n) = d^{-n} * sum_{y in f^{-n}(x)} log ||(Df^n_y)^{-1} v||,

computed from the leaf cocycles of the depth-``n`` preimage tree. Inverse
cocycles are accumulated one step at a time rather than by inverting the
product, which keeps the small singular direction accurate for large ``n``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import PreconditionError
from .lattice import wrap
from .maps import TorusMap, min_abs_det, sup_norm_derivative
from .preimage import NODE_CAP, check_capacity, preimage_tree, solve_vectors, tree_levels

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def unit(theta):
    theta = np.asarray(theta, dtype=float)
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


@dataclass(frozen=True)
class DirectionGrid:
    """``m`` unit directions ``theta_j = j pi / m`` covering the projective line."""

    m: int = 64

    @property
    def thetas(self) -> np.ndarray:
        return np.arange(self.m) * np.pi / self.m

    @property
    def vectors(self) -> np.ndarray:
        return unit(self.thetas)


def _mean_log(P, theta):
    """``I`` per root for directions ``theta``.

    ``P`` holds inverse cocycles ``(R, L, 2, 2)``; ``theta`` has shape ``(R, K)``.
    """
    ct, st = np.cos(theta)[..., None, None], np.sin(theta)[..., None, None]
    w = P[:, None, :, :, 0] * ct + P[:, None, :, :, 1] * st
    return np.mean(np.log(np.linalg.norm(w, axis=-1)), axis=-1)


def inverse_cocycles(f: TorusMap, roots, n: int, node_cap: int = NODE_CAP) -> np.ndarray:
    """``(Df^n_y)^{-1}`` for every depth-``n`` preimage of every root, ``(R, d^n, 2, 2)``."""
    return tree_levels(f, roots, n, cap=node_cap, with_inverse=True)[2]


def I_values(f: TorusMap, x, V, n: int, node_cap: int = NODE_CAP) -> np.ndarray:
    """``I(x, v; f^n)`` for each unit vector (row) of ``V``."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    P = inverse_cocycles(f, x, n, node_cap)[0]
    w = np.einsum("lij,kj->kli", P, V)
    return np.mean(np.log(np.linalg.norm(w, axis=-1)), axis=-1)


def I_n(f: TorusMap, x, v, n: int, node_cap: int = NODE_CAP) -> float:
    """``I(x, v; f^n)``: average of ``log ||(Df^n_y)^{-1} v||`` over all ``d^n`` preimages."""
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > 1e-12:
        raise ValueError("I_n: v must be a unit vector")
    return float(I_values(f, x, v, n, node_cap)[0])


def _inf_over_directions(P, m_dir: int, tol: float):
    """Grid search plus vectorised golden-section refinement, per root."""
    R = P.shape[0]
    grid = DirectionGrid(m_dir).thetas
    vals = _mean_log(P, np.broadcast_to(grid, (R, m_dir)))
    j = np.argmin(vals, axis=1)
    grid_min = vals[np.arange(R), j]
    step = np.pi / m_dir
    lo = grid[j] - step
    hi = grid[j] + step
    x1 = hi - GOLDEN * (hi - lo)
    x2 = lo + GOLDEN * (hi - lo)
    f1 = _mean_log(P, x1[:, None])[:, 0]
    f2 = _mean_log(P, x2[:, None])[:, 0]
    while np.max(hi - lo) > tol:
        left = f1 < f2
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        nx1 = np.where(left, hi - GOLDEN * (hi - lo), x2)
        nx2 = np.where(left, x1, lo + GOLDEN * (hi - lo))
        newpt = np.where(left, nx1, nx2)
        fn = _mean_log(P, newpt[:, None])[:, 0]
        f1, f2 = np.where(left, fn, f2), np.where(left, f1, fn)
        x1, x2 = nx1, nx2
    theta = np.where(f1 < f2, x1, x2)
    best = np.minimum(f1, f2)
    # the refined value can only improve on the grid
    use_grid = grid_min <= best
    theta = np.where(use_grid, grid[j], theta)
    best = np.where(use_grid, grid_min, best)
    return best, np.mod(theta, np.pi)


def I_inf_direction(f: TorusMap, x, n: int, m_dir: int = 64, tol: float = 1e-10, node_cap: int = NODE_CAP):
    """``inf_v I(x, v; f^n)`` and the minimising unit direction."""
    val, theta = _inf_over_directions(inverse_cocycles(f, x, n, node_cap), m_dir, tol)
    return float(val[0]), unit(theta[0])


def spatial_grid(m: int, centered: bool = True) -> np.ndarray:
    """``m x m`` grid of torus points (cell centres, or corners ``j / m``)."""
    g = (np.arange(m) + (0.5 if centered else 0.0)) / m
    return np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)


@dataclass
class ExpansionReport:
    map_id: str
    N: int
    spatial_grid: int
    direction_grid: int
    points: list
    theta_min: list
    I_over_N: list
    C_est: float
    max_value: float
    R_minus_est: float | None = None
    sequence: dict = field(default_factory=dict)

    def summary(self) -> dict:
        d = asdict(self)
        for key in ("points", "theta_min", "I_over_N"):
            d.pop(key)
        return d

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "theta_min", "I_over_N"])
            for p, th, val in zip(self.points, self.theta_min, self.I_over_N):
                w.writerow([repr(p[0]), repr(p[1]), repr(th), repr(val)])

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


def _per_point_inf(f, pts, N, m_dir, node_cap, tol):
    d = f.degree
    # bound the (roots x directions x leaves) work array
    batch = max(1, min(node_cap, 4_000_000 // m_dir) // d**N)
    vals, thetas = [], []
    for s in range(0, len(pts), batch):
        v, th = _inf_over_directions(inverse_cocycles(f, pts[s : s + batch], N, node_cap), m_dir, tol)
        vals.append(v)
        thetas.append(th)
    return np.concatenate(vals), np.concatenate(thetas)


def C_estimate(
    f: TorusMap,
    N: int,
    m_spatial: int = 8,
    m_dir: int = 64,
    sequence=(),
    node_cap: int = NODE_CAP,
    tol: float = 1e-10,
    r_minus_n: int | None = None,
) -> ExpansionReport:
    """Finite-``N`` surrogate for ``C(f)``: min over a grid of ``inf_v I(x, v; f^N) / N``.

    ``sequence`` lists extra scales at which the same minimum is reported so
    that convergence in ``N`` can be inspected.
    """
    if N < 1 or m_spatial < 1 or m_dir < 1:
        raise ValueError("C_estimate: N and grid sizes must be >= 1")
    check_capacity(f.degree, N, node_cap)
    pts = spatial_grid(m_spatial)
    vals, thetas = _per_point_inf(f, pts, N, m_dir, node_cap, tol)
    per = vals / N
    seq = {}
    for n in sorted(set(int(k) for k in sequence) - {N}):
        v, _ = _per_point_inf(f, pts, n, m_dir, node_cap, tol)
        seq[str(n)] = float(np.min(v) / n)
    seq[str(N)] = float(np.min(per))
    return ExpansionReport(
        map_id=f.describe(),
        N=N,
        spatial_grid=m_spatial,
        direction_grid=m_dir,
        points=pts.tolist(),
        theta_min=thetas.tolist(),
        I_over_N=per.tolist(),
        C_est=float(np.min(per)),
        max_value=float(np.max(per)),
        R_minus_est=None if r_minus_n is None else R_minus_estimate(f, r_minus_n, m_spatial),
        sequence=seq,
    )


def verify_tree_identity(f: TorusMap, x, v, n: int, m: int, node_cap: int = NODE_CAP) -> float:
    """``|I(x,v;f^{nm}) - sum_i sum_{y in f^{-im}x} d^{-im} I(y, v_y; f^m)|``.

    ``v_y`` is the normalised ``(Df^{im}_y)^{-1} v``. The right side is built
    from independent depth-``m`` subtrees rooted at every depth-``im`` node.
    """
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    lhs = I_n(f, x, v, n * m, node_cap)
    d = f.degree
    rhs = 0.0
    for i in range(n):
        levels, M = tree_levels(f, x, i * m, cap=node_cap)
        ys = levels[-1][0]
        vy = solve_vectors(M[0], v)
        vy /= np.linalg.norm(vy, axis=-1, keepdims=True)
        _, Msub = tree_levels(f, ys, m, cap=node_cap)
        w = solve_vectors(Msub, vy[:, None, :])
        per_root = np.mean(np.log(np.linalg.norm(w, axis=-1)), axis=-1)
        rhs += float(np.sum(per_root)) * float(d) ** (-i * m)
    return abs(lhs - rhs)


def log_norm_inverse_forward(f: TorusMap, pts, n: int) -> np.ndarray:
    """``log ||(Df^n_x)^{-1}||`` for each start, along the forward orbit.

    Uses ``||M^{-1}|| = sigma_max(M) / |det M|`` so that the small singular
    value is never formed directly.
    """
    x = wrap(np.asarray(pts, dtype=float).reshape(-1, 2))
    M = np.broadcast_to(np.eye(2), (x.shape[0], 2, 2)).copy()
    logscale = np.zeros(x.shape[0])
    logdet = np.zeros(x.shape[0])
    for _ in range(n):
        J = f.jacobian(x)
        logdet += np.log(np.abs(f.det_jacobian(x)))
        M = J @ M
        s = np.max(np.abs(M), axis=(-2, -1))
        M /= s[:, None, None]
        logscale += np.log(s)
        x = f(x)
    smax = np.linalg.norm(M, ord=2, axis=(-2, -1))
    return np.log(smax) + logscale - logdet


def R_minus_estimate(f: TorusMap, n: int, m_spatial: int = 32) -> float:
    """``(1/n) log+ max_x ||(Df^n_x)^{-1}||`` over the corner grid ``j / m``."""
    if n < 1 or m_spatial < 1:
        raise ValueError("R_minus_estimate: n and grid must be >= 1")
    vals = log_norm_inverse_forward(f, spatial_grid(m_spatial, centered=False), n)
    return max(0.0, float(np.max(vals))) / n


@dataclass(frozen=True)
class ExpandingPreimage:
    point: np.ndarray
    factor: float
    cocycle: np.ndarray
    inverse: np.ndarray
    direction: np.ndarray
    index: int


def find_expanding_preimage(f: TorusMap, x, v, N: int, node_cap: int = NODE_CAP):
    """The leaf ``y`` of depth ``N`` maximising ``||(Df^N_y)^{-1} v||`` if that exceeds 1."""
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    tree = preimage_tree(f, x, N, node_cap)
    w = tree.leaf_inverses @ v
    norms = np.linalg.norm(w, axis=-1)
    i = int(np.argmax(norms))
    if norms[i] <= 1.0:
        return None
    return ExpandingPreimage(tree.leaves[i], float(norms[i]), tree.leaf_cocycles[i], tree.leaf_inverses[i], w[i] / norms[i], i)


def cone_epsilon(lam: float, K: float, Dinf: float, safety: float = 0.95) -> float:
    """Half-slope of the invariant cone for expansion ``lam``."""
    return 0.5 * min((lam - 1.0) / Dinf, (lam * lam * K - 1.0) / (K * Dinf * Dinf)) * safety


def in_cone(w, axis, eps: float, slack: float = 1e-12):
    """Whether ``w`` lies in ``{|w_2| <= eps |w_1|}`` in the frame ``(axis, axis^perp)``."""
    axis = np.asarray(axis, dtype=float)
    perp = np.array([-axis[1], axis[0]])
    w1 = np.asarray(w) @ axis
    w2 = np.asarray(w) @ perp
    return np.abs(w2) <= eps * np.abs(w1) * (1.0 + slack) + slack


def cone_invariance_check(f: TorusMap, x, v, N: int, n_dirs: int = 64, m_grid: int = 128, node_cap: int = NODE_CAP) -> dict:
    """Check that ``(Df^N_y)^{-1}`` maps the cone ``C(v, eps)`` into ``C(v_y, eps)`` and expands it."""
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    hit = find_expanding_preimage(f, x, v, N, node_cap)
    if hit is None:
        raise PreconditionError("cone_invariance_check: no preimage expands v (lambda <= 1)")
    lam = hit.factor
    Dinf = sup_norm_derivative(f, m_grid)
    K = min_abs_det(f, m_grid) ** N
    eps = cone_epsilon(lam, K, Dinf)
    report = {"lambda": lam, "epsilon": eps, "K": K, "Df_sup": Dinf, "N": N, "n_dirs": n_dirs, "y": hit.point.tolist()}
    if not eps > 0.0:
        report.update(applicable=False, passed=None)
        return report
    perp = np.array([-v[1], v[0]])
    t = np.linspace(-1.0, 1.0, n_dirs)
    W = v[None, :] + (t * eps)[:, None] * perp[None, :]
    images = W @ hit.inverse.T
    inside = in_cone(images, hit.direction, eps)
    factors = np.linalg.norm(images, axis=1) / np.linalg.norm(W, axis=1)
    report.update(
        applicable=True,
        all_inside=bool(np.all(inside)),
        min_expansion=float(np.min(factors)),
        passed=bool(np.all(inside) and np.min(factors) > 1.0),
    )
    return report
