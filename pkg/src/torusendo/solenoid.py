"""Finite-prefix arithmetic on the solenoid of a torus cover.

A point of the natural extension is coded by a lift ``x~`` in ``R^2`` and a
symbol sequence ``omega`` in ``{1..d}^N``; the backward orbit it encodes is
``x~_0 = x~``, ``x~_k = F^{-1}(x~_{k-1} + w_{omega_k})``. Two codings are
identified under the action of ``Z^2`` by ``(x~, omega) -> (x~ + v, psi_v(omega))``.

Only finite prefixes are represented. All coset bookkeeping uses Python
integers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CosetSystemError, InsufficientPrefixError
from .lattice import ZERO, CosetSystem, LatticeVector, in_image, solve_exact, wrap
from .maps import TorusMap


@dataclass(frozen=True)
class SymbolWord:
    """A finite word over ``{1, ..., d}``; the cylinder it spans."""

    letters: tuple
    d: int

    def __post_init__(self):
        letters = tuple(int(c) for c in self.letters)
        if any(c < 1 or c > self.d for c in letters):
            raise ValueError(f"letters must lie in 1..{self.d}: {letters}")
        object.__setattr__(self, "letters", letters)

    def __len__(self):
        return len(self.letters)

    def __iter__(self):
        return iter(self.letters)

    def __getitem__(self, i):
        return self.letters[i]

    def __str__(self):
        return ",".join(str(c) for c in self.letters)

    @classmethod
    def parse(cls, text: str, d: int) -> "SymbolWord":
        text = text.strip()
        return cls(tuple(int(t) for t in text.split(",")) if text else (), d)


@dataclass(frozen=True)
class SolenoidPrefix:
    """A base lift together with a finite symbol prefix."""

    base_lift: tuple
    word: SymbolWord
    carries: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "base_lift", tuple(float(c) for c in self.base_lift))
        if self.carries is not None and len(self.carries) != len(self.word):
            raise ValueError("carries and word must have the same length")

    @property
    def point(self) -> np.ndarray:
        """Projection to the torus."""
        return wrap(np.array(self.base_lift))


def _as_word(word, d: int) -> SymbolWord:
    return word if isinstance(word, SymbolWord) else SymbolWord(tuple(word), d)


def psi_v(word, v, cosets: CosetSystem):
    """Transform a word by the lattice vector ``v``.

    At step ``n`` the new letter ``tau_n`` is the unique label with
    ``w_tau - w_omega + u_{n-1}`` in ``A(Z^2)`` and the carry becomes
    ``u_n = A^{-1}(w_tau - w_omega + u_{n-1})``, starting from ``u_0 = v``.
    Returns the new word and the tuple of carries ``u_1..u_n``.
    """
    A = cosets.matrix
    word = _as_word(word, cosets.d)
    u = LatticeVector(*v)
    out, carries = [], []
    for omega in word:
        w_om = cosets.rep(omega)
        try:
            tau = cosets.label_of(w_om - u)
        except KeyError as exc:
            raise CosetSystemError(f"no admissible letter for carry {tuple(u)}") from exc
        diff = cosets.rep(tau) - w_om + u
        if not in_image(A, diff):
            raise CosetSystemError(f"w_{tau} - w_{omega} + {tuple(u)} is not in A(Z^2)")
        u = solve_exact(A, diff)
        out.append(tau)
        carries.append(u)
    return SymbolWord(tuple(out), cosets.d), tuple(carries)


def group_act(v, s: SolenoidPrefix, cosets: CosetSystem) -> SolenoidPrefix:
    """``(x~, omega) -> (x~ + v, psi_v(omega))``."""
    word, carries = psi_v(s.word, v, cosets)
    base = (s.base_lift[0] + v[0], s.base_lift[1] + v[1])
    return SolenoidPrefix(base, word, carries)


def lift_forward(f: TorusMap, s: SolenoidPrefix) -> SolenoidPrefix:
    """Forward map on prefixes: lift the base point, prepend the letter 1."""
    base = f.lift(np.array(s.base_lift))
    word = SymbolWord((1,) + s.word.letters, s.word.d)
    return SolenoidPrefix(tuple(base), word)


def lift_inverse(f: TorusMap, s: SolenoidPrefix) -> SolenoidPrefix:
    """Inverse map on prefixes: ``x~ -> F^{-1}(x~ + w_{omega_1})``, shift the word."""
    if len(s.word) == 0:
        raise InsufficientPrefixError("lift_inverse needs a word of length >= 1")
    w = f.cosets.rep(s.word[0])
    base = f.lift_inverse(np.array(s.base_lift) + np.array(w, dtype=float))
    word = SymbolWord(s.word.letters[1:], s.word.d)
    carries = s.carries[1:] if s.carries is not None else None
    return SolenoidPrefix(tuple(base), word, carries)


def cylinder_probability(word, d: int | None = None) -> float:
    """Bernoulli mass ``d^{-n}`` of the cylinder spanned by ``word``."""
    if d is None:
        if not isinstance(word, SymbolWord):
            raise ValueError("alphabet size needed for a bare sequence")
        d = word.d
    return float(d) ** (-len(word))


# -- conversion between symbol words and local branch labels ---------------
#
# The lift of x_k carried along the word is K_k + r_k with r_k in [0,1)^2 and
# K_k an exact integer vector. K_k grows exponentially along contracting
# directions of F^{-1}, so it is kept as Python integers.


def _floor_int(z) -> LatticeVector:
    return LatticeVector(int(np.floor(z[0])), int(np.floor(z[1])))


def word_from_branches(f: TorusMap, labels, carries) -> SymbolWord:
    """Symbol word of a backward orbit given by local labels and carries."""
    cosets = f.cosets
    A = f.linear_part
    K = ZERO
    out = []
    for j, fl in zip(labels, carries):
        w_j = cosets.rep(int(j))
        omega = cosets.label_of(w_j - K)
        q = solve_exact(A, K + cosets.rep(omega) - w_j)
        K = q + LatticeVector(int(fl[0]), int(fl[1]))
        out.append(omega)
    return SymbolWord(tuple(out), cosets.d)


def branches_from_word(f: TorusMap, x, word):
    """Local labels and carries realising ``word`` from the canonical lift of ``x``."""
    cosets = f.cosets
    A = f.linear_part
    word = _as_word(word, cosets.d)
    r = wrap(np.asarray(x, dtype=float).reshape(2))
    K = ZERO
    labels, carries, points = [], [], [r]
    for omega in word:
        s = K + cosets.rep(omega)
        j = cosets.label_of(s)
        w_j = cosets.rep(j)
        q = solve_exact(A, s - w_j)
        z = f.lift_inverse(r + np.array(w_j, dtype=float))
        fl = _floor_int(z)
        r = wrap(z - np.array(fl, dtype=float))
        K = q + fl
        labels.append(j)
        carries.append(fl)
        points.append(r)
    return np.array(labels, dtype=np.int64), np.array(carries, dtype=np.int64).reshape(-1, 2), np.array(points)


def backward_orbit_from_word(f: TorusMap, x, word):
    """Deterministic backward orbit of ``x`` following a symbol word."""
    from .preimage import BackwardOrbit

    word = _as_word(word, f.degree)
    labels, carries, pts = branches_from_word(f, x, word)
    n = len(word)
    steps = f.jacobian(pts[1:]) if n else np.zeros((0, 2, 2))
    weights = np.full((n, f.degree), 1.0 / f.degree)
    return BackwardOrbit(f, pts, labels, steps, weights, carries, _word=word)


def all_words(d: int, n: int):
    """Every word of length ``n`` in lexicographic order."""
    if n == 0:
        return [SymbolWord((), d)]
    idx = np.indices((d,) * n).reshape(n, -1).T + 1
    return [SymbolWord(tuple(row), d) for row in idx]
