"""Preimages, depth-n preimage trees and random backward orbits.

Branch labels here are *local*: the preimage with label ``i`` of a point
``x`` is ``F^{-1}(x~ + w_i)`` where ``x~`` is the representative of ``x`` in
``[0, 1)^2``. The solenoid module converts local labels to symbol words
relative to a fixed lift.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, CoverageError, InvalidWeightingError
from .lattice import torus_distance, wrap
from .maps import TorusMap

TOL_PREIMAGE = 1e-10
TOL_CONSERVATIVE = 1e-8
NODE_CAP = 2_000_000


def preimage_points(f: TorusMap, x):
    """All ``d`` preimages of each point, shape ``x.shape[:-1] + (d, 2)``."""
    x = wrap(x)
    targets = x[..., None, :] + f.cosets.reps_array
    return wrap(f.lift_inverse(targets))


def _unwrapped_inverse(f: TorusMap, x, labels):
    """``F^{-1}(x + w_label)`` without reduction; labels are 1-based."""
    return f.lift_inverse(x + f.cosets.reps_array[np.asarray(labels) - 1])


@dataclass(frozen=True)
class Preimage:
    label: int
    point: np.ndarray
    jacobian: np.ndarray


def preimages(f: TorusMap, x) -> list[Preimage]:
    """The ``d`` preimages of a single point in canonical branch order."""
    x = wrap(np.asarray(x, dtype=float).reshape(2))
    ys = preimage_points(f, x)
    resid = torus_distance(f(ys), x)
    bad = np.flatnonzero(resid >= TOL_PREIMAGE)
    if bad.size:
        raise CoverageError(f"branch {bad[0] + 1}: preimage residual {resid[bad[0]]:.3e}")
    jac = f.jacobian(ys)
    return [Preimage(i + 1, ys[i], jac[i]) for i in range(len(ys))]


def check_capacity(d: int, n: int, cap: int, what: str = "nodes"):
    count = d**n
    if count > cap:
        raise CapacityError(f"d^n = {d}^{n} = {count} leaf {what} exceeds cap {cap}", requested=count, cap=cap)


def solve_vectors(M, v):
    """``M^{-1} v`` for stacked matrices ``(..., 2, 2)`` and vectors ``(..., 2)``."""
    M = np.asarray(M, dtype=float)
    v = np.broadcast_to(np.asarray(v, dtype=float), M.shape[:-1])
    return np.linalg.solve(M, v[..., None])[..., 0]


def inverse_2x2(J):
    """Closed-form inverse of stacked 2x2 matrices."""
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    out = np.empty_like(J)
    out[..., 0, 0] = J[..., 1, 1]
    out[..., 1, 1] = J[..., 0, 0]
    out[..., 0, 1] = -J[..., 0, 1]
    out[..., 1, 0] = -J[..., 1, 0]
    return out / det[..., None, None]


def tree_levels(f: TorusMap, roots, depth: int, cap: int = NODE_CAP, with_inverse: bool = False):
    """Level-by-level preimages of many roots at once.

    Returns ``(levels, cocycles)`` where ``levels[k]`` has shape
    ``(R, d^k, 2)`` in implicit d-ary order (children of node ``i`` are
    ``d*i .. d*i + d - 1``) and ``cocycles`` has shape ``(R, d^depth, 2, 2)``:
    the derivative of ``f^depth`` at each leaf. With ``with_inverse`` the
    inverse cocycles are appended, accumulated as products of one-step
    inverses (inverting the product directly loses digits when it is badly
    conditioned).
    """
    roots = wrap(np.asarray(roots, dtype=float).reshape(-1, 2))
    R = roots.shape[0]
    d = f.degree
    check_capacity(d, depth, cap)
    if R * d**depth > 4 * cap:
        raise CapacityError(f"{R} roots x d^n = {R * d**depth} leaves exceeds batch cap", R * d**depth, 4 * cap)
    levels = [roots[:, None, :]]
    M = np.broadcast_to(np.eye(2), (R, 1, 2, 2)).copy()
    Minv = M.copy() if with_inverse else None
    for _ in range(depth):
        prev = levels[-1]
        kids = preimage_points(f, prev).reshape(R, -1, 2)
        J = f.jacobian(kids)
        M = np.repeat(M, d, axis=1) @ J
        if with_inverse:
            Minv = inverse_2x2(J) @ np.repeat(Minv, d, axis=1)
        levels.append(kids)
    if with_inverse:
        return levels, M, Minv
    return levels, M


@dataclass
class PreimageTree:
    """Full depth-``n`` preimage tree of one root, stored level by level."""

    f: TorusMap
    root: np.ndarray
    depth: int
    levels: list
    leaf_cocycles: np.ndarray
    leaf_inverses: np.ndarray

    @property
    def d(self) -> int:
        return self.f.degree

    @property
    def leaves(self) -> np.ndarray:
        return self.levels[-1]

    def node_label(self, level: int, index: int) -> int:
        return index % self.d + 1 if level > 0 else 0

    def parent(self, level: int, index: int) -> int:
        return index // self.d

    def path_labels(self, index: int, level: int | None = None) -> tuple:
        """Branch labels from the root down to node ``index`` of ``level``."""
        level = self.depth if level is None else level
        labels = []
        for _ in range(level):
            labels.append(index % self.d + 1)
            index //= self.d
        return tuple(reversed(labels))

    def cocycles(self, level: int) -> np.ndarray:
        """Derivative of ``f^level`` at each node of ``level`` (recomputed)."""
        M = np.broadcast_to(np.eye(2), (1, 2, 2)).copy()
        for k in range(1, level + 1):
            J = self.f.jacobian(self.levels[k])
            M = np.repeat(M, self.d, axis=0) @ J
        return M

    def to_csv(self, path, v=(1.0, 0.0)):
        """Leaf points, label words and ``log ||M^{-1} v||`` per leaf."""
        v = np.asarray(v, dtype=float)
        vals = np.log(np.linalg.norm(self.leaf_inverses @ v, axis=-1))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "word", "log_norm_inv_cocycle_v"])
            for i, (p, val) in enumerate(zip(self.leaves, vals)):
                word = ",".join(str(c) for c in self.path_labels(i))
                w.writerow([repr(float(p[0])), repr(float(p[1])), word, repr(float(val))])


def preimage_tree(f: TorusMap, x, n: int, node_cap: int = NODE_CAP) -> PreimageTree:
    if n < 0:
        raise ValueError("depth must be nonnegative")
    levels, M, Minv = tree_levels(f, x, n, cap=node_cap, with_inverse=True)
    return PreimageTree(f, levels[0][0, 0], n, [lv[0] for lv in levels], M[0], Minv[0])


@dataclass
class BackwardOrbit:
    """A finite backward orbit ``x_0, x_1, ..., x_n`` with ``f(x_{i+1}) = x_i``.

    ``branches[i]`` is the local label chosen at step ``i + 1``, ``steps[i]``
    the derivative ``Df`` at ``x_{i+1}``, ``weights[i]`` the probabilities
    offered at that choice and ``carries[i]`` the integer part of the
    unreduced inverse (needed to recover symbol words exactly).
    """

    f: TorusMap
    points: np.ndarray
    branches: np.ndarray
    steps: np.ndarray
    weights: np.ndarray
    carries: np.ndarray
    _word: tuple | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return len(self.branches)

    @property
    def word(self):
        """Symbol word relative to the canonical lift of ``x_0``."""
        if self._word is None:
            from .solenoid import word_from_branches

            self._word = word_from_branches(self.f, self.branches, self.carries)
        return self._word

    def cocycle(self) -> np.ndarray:
        """``Df^n`` at ``x_n`` (product of the recorded steps)."""
        M = np.eye(2)
        for J in self.steps:
            M = M @ J
        return M


def branch_weights(f: TorusMap, ys, weighting: str, tol: float = TOL_CONSERVATIVE):
    """Probabilities of each preimage; ``ys`` has shape ``(..., d, 2)``."""
    d = f.degree
    if weighting == "bernoulli":
        return np.full(ys.shape[:-1], 1.0 / d)
    if weighting == "jacobian":
        w = 1.0 / np.abs(f.det_jacobian(ys))
        total = w.sum(axis=-1)
        dev = np.max(np.abs(total - 1.0), initial=0.0)
        if dev > tol:
            raise InvalidWeightingError(f"jacobian weights sum to 1 +- {dev:.3e} (> {tol:g}); map is not conservative")
        return w / total[..., None]
    raise ValueError(f"unknown weighting {weighting!r}")


def backward_steps(f: TorusMap, x, n: int, weighting: str, rng, chunk: int = 4096):
    """Generate ``n`` steps of independent backward orbits from each row of ``x``.

    Yields ``(points, labels, carries, weights)`` per step; ``labels`` are
    1-based local labels.
    """
    x = wrap(np.asarray(x, dtype=float).reshape(-1, 2))
    B = x.shape[0]
    d = f.degree
    reps = f.cosets.reps_array
    rows = np.arange(B)
    done = 0
    while done < n:
        m = min(chunk, n - done)
        draws = rng.random((m, B))
        for u in draws:
            if weighting == "bernoulli":
                idx = np.minimum((u * d).astype(np.int64), d - 1)
                w = None
                z = f.lift_inverse(x + reps[idx])
            else:
                # the whole fiber is needed for the weights anyway
                zs = f.lift_inverse(x[:, None, :] + reps)
                w = branch_weights(f, zs, weighting)
                idx = np.minimum(np.sum(u[:, None] >= np.cumsum(w, axis=-1)[:, :-1], axis=-1), d - 1)
                z = zs[rows, idx]
            fl = np.floor(z)
            x = z - fl
            x[x >= 1.0] = 0.0
            yield x, idx + 1, fl.astype(np.int64), w
        done += m


def sample_backward_orbit(f: TorusMap, x, n: int, weighting: str = "bernoulli", seed: int = 0) -> BackwardOrbit:
    """One random backward orbit of length ``n``; reproducible from ``seed``."""
    if n < 1:
        raise ValueError("sample_backward_orbit: n must be >= 1")
    rng = np.random.default_rng(seed)
    x0 = wrap(np.asarray(x, dtype=float).reshape(2))
    d = f.degree
    pts = np.empty((n + 1, 2))
    pts[0] = x0
    labels = np.empty(n, dtype=np.int64)
    carries = np.empty((n, 2), dtype=np.int64)
    weights = np.empty((n, d))
    for i, (p, lab, fl, w) in enumerate(backward_steps(f, x0, n, weighting, rng)):
        pts[i + 1] = p[0]
        labels[i] = lab[0]
        carries[i] = fl[0]
        weights[i] = 1.0 / d if w is None else w[0]
    steps = f.jacobian(pts[1:])
    return BackwardOrbit(f, pts, labels, steps, weights, carries)


def backward_orbit_from_branches(f: TorusMap, x, branches) -> BackwardOrbit:
    """Deterministic backward orbit following local labels."""
    branches = np.asarray(branches, dtype=np.int64).reshape(-1)
    d = f.degree
    if branches.size and (branches.min() < 1 or branches.max() > d):
        raise ValueError(f"branch labels must lie in 1..{d}")
    n = branches.size
    pts = np.empty((n + 1, 2))
    pts[0] = wrap(np.asarray(x, dtype=float).reshape(2))
    carries = np.zeros((n, 2), dtype=np.int64)
    for i, lab in enumerate(branches):
        z = _unwrapped_inverse(f, pts[i], lab)
        fl = np.floor(z)
        carries[i] = fl
        pts[i + 1] = wrap(z - fl)
    steps = f.jacobian(pts[1:]) if n else np.zeros((0, 2, 2))
    weights = np.full((n, d), 1.0 / d)
    return BackwardOrbit(f, pts, branches, steps, weights, carries)
